use super::{clip_action, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::Result;

/// One-step continuous bandit with two reward bumps.
///
/// The higher bump sits at `a = 0.5`, a slightly lower one at `a = -0.5`.
/// The observation is the constant `[1.0]` and every step terminates.
#[derive(Debug, Clone, Default)]
pub struct Bandit {
    clock: EpisodeClock,
}

const WIDTH: f64 = 0.15;

impl Bandit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reward(action: f64) -> f64 {
        let bump = |center: f64| (-((action - center) / WIDTH).powi(2)).exp();
        bump(0.5) + 0.8 * bump(-0.5)
    }
}

impl Environment for Bandit {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 1,
            action_dim: 1,
            max_episode_steps: 1,
            has_termination: true,
        }
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.clock.reset();
        vec![1.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check_can_step()?;
        let a = clip_action(action, 1)?[0];
        self.clock.tick(1, true);
        Ok(StepResult {
            next_state: vec![1.0],
            reward: Self::reward(a),
            terminal: true,
            truncated: false,
        })
    }
}
