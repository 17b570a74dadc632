//! Pieces shared by both learning algorithms.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::policy::{ActionGrid, GridPlacement, SampledAction};
use crate::replay::{ReplayBuffer, Transition, Window};
use crate::temperature::TemperatureState;

/// Which way the stored-versus-current probability ratio is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceDirection {
    /// `p_old / π_current`.
    #[default]
    StoredOverCurrent,
    /// `π_current / p_old`, the usual off-policy ratio.
    CurrentOverStored,
}

/// Hyperparameters an agent needs once the environment is known.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub bins: usize,
    pub placement: GridPlacement,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub target_entropy: f64,
    pub log_alpha_bounds: (f64, f64),
    pub initial_log_alpha: f64,
    /// Three-step targets instead of one-step.
    pub multistep: bool,
    pub importance: bool,
    pub importance_direction: ImportanceDirection,
    pub importance_scale: f64,
    pub importance_clip: f64,
    /// Use the slow temperature copy inside critic targets.
    pub target_alpha: bool,
}

impl AgentConfig {
    /// Sizes for desk-scale experiments; the caller fills in the rest.
    pub fn small(target_entropy: f64) -> Self {
        Self {
            bins: 20,
            placement: GridPlacement::Centered,
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 5e-3,
            policy_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 3e-4,
            batch_size: 128,
            target_entropy,
            log_alpha_bounds: (-10.0, 2.0),
            initial_log_alpha: 0.0,
            multistep: false,
            importance: false,
            importance_direction: ImportanceDirection::StoredOverCurrent,
            importance_scale: 2.0,
            importance_clip: 1.0,
            target_alpha: false,
        }
    }

    pub fn window_width(&self) -> usize {
        if self.multistep {
            3
        } else {
            1
        }
    }

    pub(crate) fn temperature(&self) -> Result<TemperatureState> {
        TemperatureState::new(
            self.initial_log_alpha,
            self.log_alpha_bounds,
            self.target_entropy,
            self.alpha_lr,
        )
    }

    pub(crate) fn grid(&self, dims: usize) -> Result<ActionGrid> {
        ActionGrid::with_placement(dims, self.bins, self.placement)
    }

    pub(crate) fn network_widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut widths = vec![input];
        widths.extend_from_slice(&self.hidden);
        widths.push(output);
        widths
    }
}

/// Losses and statistics from one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// Mean of the two critic losses.
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub temperature_loss: f64,
    pub alpha: f64,
    /// Mean over the batch of the summed normalized entropy.
    pub entropy: f64,
}

pub trait Agent {
    fn grid(&self) -> &ActionGrid;

    fn state_dim(&self) -> usize;

    fn temperature(&self) -> &TemperatureState;

    fn config(&self) -> &AgentConfig;

    /// Samples an action when exploring, otherwise picks the per-dimension mode.
    fn act(&self, state: &[f64], explore: bool, rng: &mut dyn RngCore) -> Result<SampledAction>;

    fn train_step(&mut self, buffer: &ReplayBuffer, rng: &mut dyn RngCore) -> Result<StepStats>;

    /// Networks plus temperature and grid metadata.
    fn to_checkpoint(&self) -> Checkpoint;

    /// Whether the buffer can feed a training step.
    fn ready(&self, buffer: &ReplayBuffer) -> bool {
        buffer.len() >= self.config().batch_size.max(self.config().window_width())
    }
}

/// Draws training windows, or single transitions as width-1 windows.
pub(crate) fn sample_training_windows<'a>(
    buffer: &'a ReplayBuffer,
    config: &AgentConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<Window<'a>>> {
    let width = config.window_width();
    if width == 1 {
        Ok(buffer
            .sample_batch(config.batch_size, rng)?
            .into_iter()
            .map(|t| vec![t])
            .collect())
    } else {
        buffer.sample_windows(config.batch_size, width, rng)
    }
}

/// First states of `windows` as a batch.
pub(crate) fn first_states(windows: &[Window<'_>], state_dim: usize) -> Result<Matrix> {
    states_matrix(windows.iter().map(|w| w[0]), state_dim)
}

pub(crate) fn states_matrix<'a>(
    items: impl Iterator<Item = &'a Transition>,
    state_dim: usize,
) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut rows = 0;
    for t in items {
        if t.state.len() != state_dim {
            return Err(Error::Shape(format!(
                "stored state has {} components, agent expects {state_dim}",
                t.state.len()
            )));
        }
        data.extend_from_slice(&t.state);
        rows += 1;
    }
    Matrix::from_vec(rows, state_dim, data)
}

/// Critic inputs for every single-component swap of a sampled joint action.
///
/// Row `(b·M + m)·N + n` is state `b` with action `sampled[b]` whose
/// component `m` is replaced by grid value `n`.
pub fn swapped_inputs(states: &Matrix, sampled: &[SampledAction], grid: &ActionGrid) -> Result<Matrix> {
    if states.rows() != sampled.len() {
        return Err(Error::Shape("one sampled action per state required".into()));
    }
    let (dims, bins) = (grid.dims(), grid.bins());
    let width = states.cols() + dims;
    let mut data = Vec::with_capacity(states.rows() * dims * bins * width);
    for (s, a) in states.iter_rows().zip(sampled) {
        for m in 0..dims {
            for &v in grid.values() {
                data.extend_from_slice(s);
                let start = data.len();
                data.extend_from_slice(&a.action);
                data[start + m] = v;
            }
        }
    }
    Matrix::from_vec(states.rows() * dims * bins, width, data)
}

/// `(mean, population std)`.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_layout() {
        let grid = ActionGrid::new(2, 3).unwrap();
        let states = Matrix::from_rows(&[[9.0]]).unwrap();
        let sampled = vec![SampledAction {
            action: vec![0.5, -0.5],
            indices: vec![0, 0],
            p_joint: 1.0,
        }];
        let m = swapped_inputs(&states, &sampled, &grid).unwrap();
        assert_eq!(m.rows(), 6);
        let g = grid.values();
        assert_eq!(m.row(1), &[9.0, g[1], -0.5]);
        assert_eq!(m.row(5), &[9.0, 0.5, g[2]]);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }
}
