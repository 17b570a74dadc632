use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::{Error, Result};

const DT: f64 = 0.1;
const DRAG: f64 = 0.1;
const EPISODE_STEPS: usize = 150;

/// `M`-dimensional double integrator that should be steered to the origin.
///
/// State `(x, v)`. Each step: `x ← x + v·dt`, `v ← v + a·dt − drag·v`.
/// Reward `−‖x‖² − 0.01‖a‖²` on the pre-step position.
#[derive(Debug, Clone)]
pub struct PointMass {
    dims: usize,
    drag: f64,
    position: Vec<f64>,
    velocity: Vec<f64>,
    clock: EpisodeClock,
}

impl PointMass {
    pub fn new(dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::config("env", "point-mass needs at least one dimension"));
        }
        Ok(Self {
            dims,
            drag: DRAG,
            position: vec![0.0; dims],
            velocity: vec![0.0; dims],
            clock: EpisodeClock::default(),
        })
    }

    /// Replaces the velocity damping coefficient (default 0.1).
    pub fn with_drag(mut self, drag: f64) -> Self {
        self.drag = drag;
        self
    }

    pub fn set_state(&mut self, position: &[f64], velocity: &[f64]) -> Result<()> {
        if position.len() != self.dims || velocity.len() != self.dims {
            return Err(Error::Shape(format!(
                "point-mass state must have {} position and velocity components",
                self.dims
            )));
        }
        self.position = position.to_vec();
        self.velocity = velocity.to_vec();
        Ok(())
    }

    fn observation(&self) -> Vec<f64> {
        self.position.iter().chain(&self.velocity).copied().collect()
    }
}

impl Environment for PointMass {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 2 * self.dims,
            action_dim: self.dims,
            max_episode_steps: EPISODE_STEPS,
            has_termination: false,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in &mut self.position {
            *x = rng.gen_range(-1.0..1.0);
        }
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
        self.clock.reset();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check_can_step()?;
        let action = clip_action(action, self.dims)?;
        let dist2: f64 = self.position.iter().map(|x| x * x).sum();
        let effort: f64 = action.iter().map(|a| a * a).sum();
        let reward = -dist2 - 0.01 * effort;
        for ((x, v), a) in self.position.iter_mut().zip(&mut self.velocity).zip(&action) {
            *x += *v * DT;
            *v += a * DT - self.drag * *v;
        }
        let truncated = self.clock.tick(EPISODE_STEPS, false);
        Ok(StepResult {
            next_state: self.observation(),
            reward,
            terminal: false,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_dimension_is_twice_action_dimension() {
        let env = PointMass::new(3).unwrap();
        assert_eq!(env.spec().state_dim, 6);
    }

    #[test]
    fn zero_action_integrates_position() {
        let mut env = PointMass::new(2).unwrap();
        env.reset(0);
        env.set_state(&[0.5, -0.2], &[1.0, -2.0]).unwrap();
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(r.next_state[0], 0.5 + 1.0 * 0.1);
        assert_eq!(r.next_state[1], -0.2 - 2.0 * 0.1);
        // Drag still acts on the velocity.
        assert_eq!(r.next_state[2], 0.9);
        assert_eq!(r.next_state[3], -1.8);
        assert!((r.reward + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_action_without_drag_keeps_velocity() {
        let mut env = PointMass::new(1).unwrap().with_drag(0.0);
        env.reset(0);
        env.set_state(&[0.0], &[0.7]).unwrap();
        let r = env.step(&[0.0]).unwrap();
        assert_eq!(r.next_state, vec![0.7 * DT, 0.7]);
    }

    #[test]
    fn reset_starts_at_rest_inside_box() {
        let mut env = PointMass::new(4).unwrap();
        let s = env.reset(9);
        assert!(s[..4].iter().all(|x| (-1.0..1.0).contains(x)));
        assert!(s[4..].iter().all(|&v| v == 0.0));
    }
}
