//! Built-in environments.
//!
//! Every environment takes actions in `[-1, 1]^M` (out-of-range components
//! are clipped) and reports time-limit truncation separately from true
//! termination.

mod bandit;
mod pendulum;
mod pointmass;
mod tabular;

pub use bandit::Bandit;
pub use pendulum::Pendulum;
pub use pointmass::PointMass;
pub use tabular::{chain_mdp, TabularEnv};

use crate::error::{Error, Result};

/// Static facts about an environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_episode_steps: usize,
    pub has_termination: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// The episode ended inside the MDP; no bootstrapping past this state.
    pub terminal: bool,
    /// The step limit was hit; the next state is still a valid bootstrap state.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> EnvSpec;

    /// Starts a new episode. The initial state is a function of `seed` only.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

/// Builds an environment from its string id.
///
/// Known ids: `pendulum`, `pointmass-<M>`, `chain-mdp`, `bandit`, and
/// `tabular:<path to JSON model>`.
pub fn make(id: &str) -> Result<Box<dyn Environment>> {
    if id == "pendulum" {
        return Ok(Box::new(Pendulum::new()));
    }
    if id == "chain-mdp" {
        return Ok(Box::new(chain_mdp()));
    }
    if id == "bandit" {
        return Ok(Box::new(Bandit::new()));
    }
    if let Some(dims) = id.strip_prefix("pointmass-") {
        let dims: usize = dims
            .parse()
            .map_err(|_| Error::config("env", format!("bad point-mass dimension in `{id}`")))?;
        return Ok(Box::new(PointMass::new(dims)?));
    }
    if let Some(path) = id.strip_prefix("tabular:") {
        return Ok(Box::new(TabularEnv::from_json_file(path.as_ref())?));
    }
    Err(Error::config("env", format!("unknown environment `{id}`")))
}

/// Validates an action and clips it into `[-1, 1]`.
pub(crate) fn clip_action(action: &[f64], dims: usize) -> Result<Vec<f64>> {
    if action.len() != dims {
        return Err(Error::Shape(format!(
            "action has {} components, environment expects {dims}",
            action.len()
        )));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::Input("action contains NaN".into()));
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}

/// Step bookkeeping shared by the environments.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
    started: bool,
    finished: bool,
}

impl EpisodeClock {
    pub(crate) fn reset(&mut self) {
        *self = Self {
            steps: 0,
            started: true,
            finished: false,
        };
    }

    pub(crate) fn check_can_step(&self) -> Result<()> {
        if !self.started {
            Err(Error::State("step called before reset".into()))
        } else if self.finished {
            Err(Error::State("step called after the episode ended".into()))
        } else {
            Ok(())
        }
    }

    /// Counts one step; returns whether the time limit is now reached.
    pub(crate) fn tick(&mut self, limit: usize, terminal: bool) -> bool {
        self.steps += 1;
        let truncated = !terminal && self.steps >= limit;
        self.finished = terminal || truncated;
        truncated
    }
}
