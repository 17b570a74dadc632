use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest joint action count the exhaustive solvers accept.
pub const MAX_JOINT_ACTIONS: usize = 10_000;

/// Finite MDP over joint actions built from `dims` dimensions of `bins` choices.
///
/// Joint actions are indexed `Σ_m n_m · bins^m` (dimension 0 varies fastest).
/// Arriving in a terminal state ends the episode, so nothing is collected
/// after it.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    states: usize,
    dims: usize,
    bins: usize,
    joint: usize,
    /// `[state][joint action][next state]`
    transitions: Vec<f64>,
    /// `[state][joint action]`
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        states: usize,
        dims: usize,
        bins: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if states == 0 || dims == 0 || bins == 0 {
            return Err(Error::Input("tabular MDP sizes must be positive".into()));
        }
        let joint = bins
            .checked_pow(dims as u32)
            .filter(|&j| j <= MAX_JOINT_ACTIONS)
            .ok_or_else(|| {
                Error::Input(format!(
                    "{bins}^{dims} joint actions exceed the limit of {MAX_JOINT_ACTIONS}"
                ))
            })?;
        if transitions.len() != states * joint * states {
            return Err(Error::Shape(format!(
                "transition table has {} entries, expected {}",
                transitions.len(),
                states * joint * states
            )));
        }
        if rewards.len() != states * joint {
            return Err(Error::Shape(format!(
                "reward table has {} entries, expected {}",
                rewards.len(),
                states * joint
            )));
        }
        for (i, row) in transitions.chunks_exact(states).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Input(format!(
                    "transition row {i} has a negative or NaN entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Input(format!(
                    "transition row for state {} action {} sums to {sum}",
                    i / joint,
                    i % joint
                )));
            }
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric("reward table".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Parameter(format!("discount {gamma} outside [0, 1]")));
        }
        Ok(Self {
            states,
            dims,
            bins,
            joint,
            transitions,
            rewards,
            terminal: vec![false; states],
            gamma,
        })
    }

    /// Marks states whose arrival ends an episode.
    pub fn with_terminal_states(mut self, terminal: &[usize]) -> Result<Self> {
        for &s in terminal {
            if s >= self.states {
                return Err(Error::Input(format!("terminal state {s} out of range")));
            }
            self.terminal[s] = true;
        }
        Ok(self)
    }

    /// Random dense MDP with rewards in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(
        states: usize,
        dims: usize,
        bins: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let joint = bins.pow(dims as u32);
        let mut transitions = Vec::with_capacity(states * joint * states);
        for _ in 0..states * joint {
            let row: Vec<f64> = (0..states).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|p| p / sum));
        }
        let rewards = (0..states * joint).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self::new(states, dims, bins, transitions, rewards, gamma)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn joint_actions(&self) -> usize {
        self.joint
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        self.gamma = gamma;
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn reward(&self, state: usize, joint: usize) -> f64 {
        self.rewards[state * self.joint + joint]
    }

    /// Next-state distribution for `(state, joint)`.
    pub fn next_distribution(&self, state: usize, joint: usize) -> &[f64] {
        let start = (state * self.joint + joint) * self.states;
        &self.transitions[start..start + self.states]
    }

    pub fn joint_index(&self, indices: &[usize]) -> usize {
        indices.iter().rev().fold(0, |acc, &n| acc * self.bins + n)
    }

    pub fn split_joint(&self, mut joint: usize) -> Vec<usize> {
        (0..self.dims)
            .map(|_| {
                let n = joint % self.bins;
                joint /= self.bins;
                n
            })
            .collect()
    }

    pub fn from_json_file(path: &Path) -> Result<(Self, TabularModel)> {
        let model: TabularModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok((model.to_mdp()?, model))
    }
}

/// JSON description of a tabular environment.
///
/// ```json
/// {
///   "states": 2, "dims": 1, "bins": 2,
///   "transitions": [[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.0, 1.0]]],
///   "rewards": [[0.0, 1.0], [0.5, 0.0]],
///   "start_state": 0, "terminal_states": [], "max_episode_steps": 20, "gamma": 0.9
/// }
/// ```
///
/// `transitions[s][a][s']` and `rewards[s][a]` are indexed by joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    pub states: usize,
    pub dims: usize,
    pub bins: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    #[serde(default)]
    pub start_state: usize,
    #[serde(default)]
    pub terminal_states: Vec<usize>,
    #[serde(default = "default_episode_steps")]
    pub max_episode_steps: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_episode_steps() -> usize {
    50
}

fn default_gamma() -> f64 {
    0.99
}

impl TabularModel {
    pub fn to_mdp(&self) -> Result<TabularMdp> {
        if self.start_state >= self.states {
            return Err(Error::Input(format!(
                "start state {} out of range",
                self.start_state
            )));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Input("max_episode_steps must be at least 1".into()));
        }
        let transitions: Vec<f64> = self.transitions.iter().flatten().flatten().copied().collect();
        let rewards: Vec<f64> = self.rewards.iter().flatten().copied().collect();
        if self.transitions.len() != self.states
            || self.transitions.iter().any(|t| t.iter().any(|row| row.len() != self.states))
        {
            return Err(Error::Shape("transition table must be states × actions × states".into()));
        }
        if self.rewards.len() != self.states {
            return Err(Error::Shape("reward table must be states × actions".into()));
        }
        TabularMdp::new(self.states, self.dims, self.bins, transitions, rewards, self.gamma)?
            .with_terminal_states(&self.terminal_states)
    }
}
