use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::{Error, Result};
use crate::oracle::TabularMdp;
use crate::policy::{sample_index, ActionGrid};

/// A [`TabularMdp`] driven through the continuous action interface.
///
/// Each action component is mapped to its nearest grid index; observations
/// are one-hot state encodings.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularMdp,
    grid: ActionGrid,
    start_state: usize,
    max_episode_steps: usize,
    state: usize,
    rng: ChaCha8Rng,
    clock: EpisodeClock,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, start_state: usize, max_episode_steps: usize) -> Result<Self> {
        if start_state >= mdp.states() {
            return Err(Error::Input(format!("start state {start_state} out of range")));
        }
        if max_episode_steps == 0 {
            return Err(Error::Input("max_episode_steps must be at least 1".into()));
        }
        let grid = ActionGrid::new(mdp.dims(), mdp.bins())?;
        Ok(Self {
            mdp,
            grid,
            start_state,
            max_episode_steps,
            state: start_state,
            rng: ChaCha8Rng::seed_from_u64(0),
            clock: EpisodeClock::default(),
        })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let (mdp, model) = TabularMdp::from_json_file(path)?;
        Self::new(mdp, model.start_state, model.max_episode_steps)
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state_index(&self) -> usize {
        self.state
    }

    /// Joint action index selected by a continuous action.
    pub fn joint_action(&self, action: &[f64]) -> Result<usize> {
        let action = clip_action(action, self.mdp.dims())?;
        let indices: Vec<usize> = action.iter().map(|&a| self.grid.nearest_index(a)).collect();
        Ok(self.mdp.joint_index(&indices))
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.mdp.states()];
        obs[self.state] = 1.0;
        obs
    }
}

impl Environment for TabularEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: self.mdp.states(),
            action_dim: self.mdp.dims(),
            max_episode_steps: self.max_episode_steps,
            has_termination: (0..self.mdp.states()).any(|s| self.mdp.is_terminal(s)),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.start_state;
        self.clock.reset();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check_can_step()?;
        let joint = self.joint_action(action)?;
        let reward = self.mdp.reward(self.state, joint);
        self.state = sample_index(self.mdp.next_distribution(self.state, joint), &mut self.rng);
        let terminal = self.mdp.is_terminal(self.state);
        let truncated = self.clock.tick(self.max_episode_steps, terminal);
        Ok(StepResult {
            next_state: self.observation(),
            reward,
            terminal,
            truncated,
        })
    }
}

const CHAIN_STATES: usize = 5;

/// Five-state chain with two action dimensions of three choices each.
///
/// Dimension 0 picks a direction (left, stay, right); dimension 1 trades
/// reliability of the move against a small cost. Reaching the right end pays
/// 1 per step, and matching the two indices pays a 0.1 bonus.
pub fn chain_mdp() -> TabularEnv {
    let (dims, bins) = (2usize, 3usize);
    let joint = bins * bins;
    let mut transitions = vec![0.0; CHAIN_STATES * joint * CHAIN_STATES];
    let mut rewards = vec![0.0; CHAIN_STATES * joint];
    for s in 0..CHAIN_STATES {
        for a in 0..joint {
            let (dir, effort) = (a % bins, a / bins);
            let target = (s as isize + dir as isize - 1).clamp(0, CHAIN_STATES as isize - 1) as usize;
            let success = 0.6 + 0.15 * effort as f64;
            let row = &mut transitions[(s * joint + a) * CHAIN_STATES..][..CHAIN_STATES];
            row[target] += success;
            row[s] += 1.0 - success;
            let goal = if s == CHAIN_STATES - 1 { 1.0 } else { 0.0 };
            let bonus = if dir == effort { 0.1 } else { 0.0 };
            rewards[s * joint + a] = goal - 0.05 * effort as f64 + bonus;
        }
    }
    let mdp = TabularMdp::new(CHAIN_STATES, dims, bins, transitions, rewards, 0.9)
        .expect("chain MDP tables are valid");
    TabularEnv::new(mdp, 0, 50).expect("chain MDP start state is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_starts_at_zero() {
        let mut env = chain_mdp();
        for seed in 0..5 {
            let s = env.reset(seed);
            assert_eq!(s, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn nearest_index_action_mapping() {
        let env = chain_mdp();
        assert_eq!(env.joint_action(&[-1.0, -1.0]).unwrap(), 0);
        assert_eq!(env.joint_action(&[1.0, 0.0]).unwrap(), 2 + 3);
        assert_eq!(env.joint_action(&[0.05, 0.9]).unwrap(), 1 + 2 * 3);
    }

    #[test]
    fn reliable_right_moves_reach_goal() {
        let mut env = chain_mdp();
        env.reset(0);
        let mut total = 0.0;
        for _ in 0..50 {
            let r = env.step(&[1.0, 1.0]).unwrap();
            total += r.reward;
            if r.done() {
                assert!(r.truncated);
                break;
            }
        }
        assert_eq!(env.state_index(), 4);
        assert!(total > 30.0);
    }

    #[test]
    fn json_model_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"states":2,"dims":1,"bins":2,
                "transitions":[[[1.0,0.0],[0.0,1.0]],[[0.5,0.5],[0.0,1.0]]],
                "rewards":[[0.0,1.0],[0.5,0.0]],
                "terminal_states":[1],"max_episode_steps":7}"#,
        )
        .unwrap();
        let mut env = TabularEnv::from_json_file(&path).unwrap();
        assert_eq!(env.spec().max_episode_steps, 7);
        assert!(env.spec().has_termination);
        env.reset(0);
        let r = env.step(&[0.9]).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.terminal && !r.truncated);
    }

    #[test]
    fn json_model_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"states":1,"dims":1,"bins":2,"transitions":[[[0.5],[1.0]]],"rewards":[[0.0,0.0]]}"#,
        )
        .unwrap();
        assert!(matches!(TabularEnv::from_json_file(&path), Err(Error::Input(_))));
    }
}
