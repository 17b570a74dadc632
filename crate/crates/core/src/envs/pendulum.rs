use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::Result;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const EPISODE_STEPS: usize = 200;

/// Torque-limited pendulum swing-up.
///
/// Observation `(cos θ, sin θ, θ̇)` with `θ = 0` upright. The action `u ∈ [-1, 1]`
/// applies torque `2u`. Reward is charged on the pre-step state.
#[derive(Debug, Clone)]
pub struct Pendulum {
    angle: f64,
    speed: f64,
    clock: EpisodeClock,
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new() -> Self {
        Self {
            angle: 0.0,
            speed: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    /// Overrides the physical state, keeping the episode clock.
    pub fn set_state(&mut self, angle: f64, speed: f64) {
        self.angle = angle;
        self.speed = speed;
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.angle.cos(), self.angle.sin(), self.speed]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 3,
            action_dim: 1,
            max_episode_steps: EPISODE_STEPS,
            has_termination: false,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.speed = rng.gen_range(-1.0..1.0);
        self.clock.reset();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check_can_step()?;
        let u = clip_action(action, 1)?[0];
        let torque = MAX_TORQUE * u;
        let wrapped = normalize_angle(self.angle);
        let reward = -(wrapped * wrapped + 0.1 * self.speed * self.speed + 0.001 * torque * torque);

        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * self.angle.sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * torque;
        self.speed = (self.speed + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.angle += self.speed * DT;

        let truncated = self.clock.tick(EPISODE_STEPS, false);
        Ok(StepResult {
            next_state: self.observation(),
            reward,
            terminal: false,
            truncated,
        })
    }
}
