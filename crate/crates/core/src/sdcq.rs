//! Decomposed-Q learning with Boltzmann exploration.
//!
//! A network outputs `M × N` decomposed action values `d`; the behaviour
//! policy is `softmax(d/α)` per dimension. Instead of a policy gradient, `d`
//! is regressed onto critic values centred under the current policy:
//!
//! ```text
//! target_{m,n} = q_{m,n} − Σ_k π_m(k) q_{m,k}
//! ```
//!
//! Critics learn from three-step targets that use the slow temperature `α′`,
//! weighted by normalized importance factors of the two follow-up steps.

use rand::RngCore;

use crate::agent::{
    first_states, mean_std, sample_training_windows, swapped_inputs, Agent, AgentConfig,
    ImportanceDirection, StepStats,
};
use crate::checkpoint::Checkpoint;
use crate::critic::{critic_inputs, multistep_td_targets, SoftCriticPair, TargetPolicy};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Matrix, Mlp};
use crate::policy::{
    argmax, boltzmann_policy, log_sum_exp, normalized_entropy, sample_action, ActionGrid,
    DecomposedDistribution, MatrixKind, PolicyMatrix, SampledAction,
};
use crate::replay::{ReplayBuffer, Window};
use crate::sdac::{checkpoint_metadata, push_critics, restore_temperature};
use crate::temperature::TemperatureState;

/// Squared-error loss `(1/B)Σ_b (1/M)Σ_{m,n} (d − target)²` and its gradient wrt `d`.
pub fn supervised_loss(values: &Matrix, targets: &[f64], dims: usize) -> Result<(f64, Matrix)> {
    if values.as_slice().len() != targets.len() {
        return Err(Error::Shape("values and targets differ in size".into()));
    }
    let scale = 1.0 / (dims * values.rows()) as f64;
    let mut grad = Matrix::zeros(values.rows(), values.cols());
    let mut loss = 0.0;
    for ((g, &d), &t) in grad.as_mut_slice().iter_mut().zip(values.as_slice()).zip(targets) {
        let err = d - t;
        loss += err * err;
        *g = 2.0 * err * scale;
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric("supervised loss".into()));
    }
    Ok((loss, grad))
}

/// Centres each dimension's swapped values under that dimension's policy.
pub fn centered_targets(swap_q: &[f64], dists: &[DecomposedDistribution]) -> Vec<f64> {
    let mut out = swap_q.to_vec();
    let mut offset = 0;
    for d in dists {
        for m in 0..d.dims() {
            let row = &mut out[offset..offset + d.bins()];
            let mean: f64 = row.iter().zip(d.row(m)).map(|(q, p)| q * p).sum();
            row.iter_mut().for_each(|q| *q -= mean);
            offset += d.bins();
        }
    }
    out
}

/// Normalizes log importance ratios and multiplies them per sample.
///
/// All present ratios in the batch are z-scored together, clipped to
/// `±clip`, scaled by `scale`, and exponentiated. A batch whose spread is
/// below 1e-8 gets unit factors. Missing follow-up steps count as 1.
pub fn importance_weights(log_ratios: &[Vec<f64>], scale: f64, clip: f64) -> Vec<f64> {
    let pooled: Vec<f64> = log_ratios.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&pooled);
    if std < 1e-8 {
        return vec![1.0; log_ratios.len()];
    }
    log_ratios
        .iter()
        .map(|ratios| {
            ratios
                .iter()
                .map(|l| (scale * ((l - mean) / std).clamp(-clip, clip)).exp())
                .product()
        })
        .collect()
}

/// Boltzmann policy of a decomposed-Q network at a fixed temperature.
pub struct BoltzmannPolicy<'a> {
    pub net: &'a Mlp,
    pub grid: &'a ActionGrid,
    pub alpha: f64,
}

impl TargetPolicy for BoltzmannPolicy<'_> {
    fn distributions(&self, states: &Matrix) -> Result<Vec<DecomposedDistribution>> {
        boltzmann_rows(&self.net.forward(states)?, self.grid, self.alpha)
    }

    fn grid(&self) -> &ActionGrid {
        self.grid
    }
}

fn boltzmann_rows(values: &Matrix, grid: &ActionGrid, alpha: f64) -> Result<Vec<DecomposedDistribution>> {
    values
        .iter_rows()
        .map(|row| {
            let d = PolicyMatrix::new(MatrixKind::Advantages, grid.dims(), grid.bins(), row.to_vec())?;
            boltzmann_policy(&d, alpha)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SdcqAgent {
    config: AgentConfig,
    state_dim: usize,
    grid: ActionGrid,
    net: Mlp,
    net_optim: AdamState,
    critics: SoftCriticPair,
    temperature: TemperatureState,
}

impl SdcqAgent {
    pub fn new(spec: EnvSpec, config: AgentConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let grid = config.grid(spec.action_dim)?;
        let net = Mlp::new(
            &config.network_widths(spec.state_dim, spec.action_dim * config.bins),
            rng,
        )?;
        let critics = SoftCriticPair::new(
            spec.state_dim,
            spec.action_dim,
            &config.hidden,
            config.critic_lr,
            config.tau,
            rng,
        )?;
        Ok(Self {
            net_optim: AdamState::new(net.param_count(), config.policy_lr),
            temperature: config.temperature()?,
            state_dim: spec.state_dim,
            grid,
            net,
            critics,
            config,
        })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn critics(&self) -> &SoftCriticPair {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut SoftCriticPair {
        &mut self.critics
    }

    pub fn temperature_mut(&mut self) -> &mut TemperatureState {
        &mut self.temperature
    }

    /// Temperature used inside critic targets and importance ratios.
    pub fn bootstrap_alpha(&self) -> f64 {
        if self.config.target_alpha {
            self.temperature.target_alpha()
        } else {
            self.temperature.alpha()
        }
    }

    pub fn distributions(&self, states: &Matrix, alpha: f64) -> Result<Vec<DecomposedDistribution>> {
        boltzmann_rows(&self.net.forward(states)?, &self.grid, alpha)
    }

    /// `ln π(indices | state)` at temperature `alpha`, via log-softmax.
    fn log_probs(&self, states: &Matrix, indices: &[&[usize]], alpha: f64) -> Result<Vec<f64>> {
        let values = self.net.forward(states)?;
        let bins = self.grid.bins();
        let mut scaled = vec![0.0; bins];
        Ok(values
            .iter_rows()
            .zip(indices)
            .map(|(row, ix)| {
                ix.iter()
                    .enumerate()
                    .map(|(m, &n)| {
                        for (s, v) in scaled.iter_mut().zip(&row[m * bins..(m + 1) * bins]) {
                            *s = v / alpha;
                        }
                        scaled[n] - log_sum_exp(&scaled)
                    })
                    .sum()
            })
            .collect())
    }

    /// Log importance ratios of each window's follow-up steps.
    pub fn log_importance(&self, windows: &[Window<'_>]) -> Result<Vec<Vec<f64>>> {
        let follow: Vec<_> = windows.iter().flat_map(|w| w[1..].iter().copied()).collect();
        if follow.is_empty() {
            return Ok(vec![Vec::new(); windows.len()]);
        }
        let states = crate::agent::states_matrix(follow.iter().copied(), self.state_dim)?;
        let indices: Vec<&[usize]> = follow.iter().map(|t| t.indices.as_slice()).collect();
        let current = self.log_probs(&states, &indices, self.bootstrap_alpha())?;
        let mut it = follow.iter().zip(current);
        let mut out = Vec::with_capacity(windows.len());
        for w in windows {
            let mut ratios = Vec::with_capacity(w.len() - 1);
            for _ in 1..w.len() {
                let (t, log_pi) = it.next().expect("one log-probability per follow-up step");
                let log_old = t.p_old.ln();
                let ratio = match self.config.importance_direction {
                    ImportanceDirection::StoredOverCurrent => log_old - log_pi,
                    ImportanceDirection::CurrentOverStored => log_pi - log_old,
                };
                if !ratio.is_finite() {
                    return Err(Error::Numeric("log importance ratio".into()));
                }
                ratios.push(ratio);
            }
            out.push(ratios);
        }
        Ok(out)
    }

    /// Per-window critic weights; all ones when importance weighting is off.
    pub fn window_weights(&self, windows: &[Window<'_>]) -> Result<Vec<f64>> {
        if !self.config.importance {
            return Ok(vec![1.0; windows.len()]);
        }
        let logs = self.log_importance(windows)?;
        Ok(importance_weights(
            &logs,
            self.config.importance_scale,
            self.config.importance_clip,
        ))
    }

    /// Weighted critic regression on multi-step targets.
    pub fn critic_step(&mut self, windows: &[Window<'_>], rng: &mut dyn RngCore) -> Result<f64> {
        let weights = self.window_weights(windows)?;
        let alpha = self.bootstrap_alpha();
        let policy = BoltzmannPolicy {
            net: &self.net,
            grid: &self.grid,
            alpha,
        };
        let targets = multistep_td_targets(
            &self.critics,
            windows,
            self.config.window_width(),
            &policy,
            alpha,
            self.config.gamma,
            rng,
        )?;
        let inputs = critic_inputs(
            windows.iter().map(|w| (w[0].state.as_slice(), w[0].action.as_slice())),
            self.critics.input_width(),
        )?;
        let y: Vec<f64> = targets.iter().map(|t| t.value).collect();
        let losses = self.critics.update(&inputs, &y, &weights)?;
        Ok(0.5 * (losses[0] + losses[1]))
    }

    /// Centred regression targets for `states` under the current network.
    pub fn supervised_targets(
        &self,
        states: &Matrix,
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, Vec<DecomposedDistribution>)> {
        let dists = self.distributions(states, self.temperature.alpha())?;
        let sampled: Vec<SampledAction> = dists
            .iter()
            .map(|d| sample_action(d, &self.grid, rng))
            .collect();
        let swap_q = self
            .critics
            .min_online(&swapped_inputs(states, &sampled, &self.grid)?)?;
        Ok((centered_targets(&swap_q, &dists), dists))
    }

    /// One regression step; returns the loss, the mean summed entropy, and
    /// the mean per-dimension entropy of the pre-step policy.
    pub fn network_step(&mut self, states: &Matrix, rng: &mut dyn RngCore) -> Result<(f64, f64, f64)> {
        let (targets, dists) = self.supervised_targets(states, rng)?;
        let (values, mut tape) = self.net.forward_train(states)?;
        let (loss, grad) = supervised_loss(&values, &targets, self.grid.dims())?;
        let grads = self.net.backward(&mut tape, &grad)?;
        self.net_optim.step(self.net.params_mut(), &grads)?;
        let total: f64 = dists.iter().map(|d| normalized_entropy(d).1).sum::<f64>() / dists.len() as f64;
        Ok((loss, total, total / self.grid.dims() as f64))
    }

    pub fn from_checkpoint(ck: &Checkpoint, spec: EnvSpec, config: AgentConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut agent = Self::new(spec, config, &mut rng)?;
        let net = ck.network("decomposed_q")?;
        if net.widths() != agent.net.widths() {
            return Err(Error::Format("checkpoint network does not match the environment".into()));
        }
        agent.net = net;
        agent.critics = SoftCriticPair::from_networks(
            [ck.network("critic1")?, ck.network("critic2")?],
            [ck.network("critic1_target")?, ck.network("critic2_target")?],
            agent.config.critic_lr,
            agent.config.tau,
        )?;
        restore_temperature(&mut agent.temperature, ck);
        Ok(agent)
    }
}

impl Agent for SdcqAgent {
    fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn temperature(&self) -> &TemperatureState {
        &self.temperature
    }

    fn config(&self) -> &AgentConfig {
        &self.config
    }

    fn act(&self, state: &[f64], explore: bool, rng: &mut dyn RngCore) -> Result<SampledAction> {
        let states = Matrix::from_vec(1, state.len(), state.to_vec())?;
        if explore {
            let dist = self.distributions(&states, self.temperature.alpha())?.remove(0);
            return Ok(sample_action(&dist, &self.grid, rng));
        }
        let values = self.net.forward(&states)?;
        let bins = self.grid.bins();
        let indices: Vec<usize> = values.as_slice().chunks_exact(bins).map(argmax).collect();
        Ok(SampledAction {
            action: self.grid.action_from_indices(&indices),
            indices,
            p_joint: 1.0,
        })
    }

    fn train_step(&mut self, buffer: &ReplayBuffer, rng: &mut dyn RngCore) -> Result<StepStats> {
        let windows = sample_training_windows(buffer, &self.config, rng)?;
        let critic_loss = self.critic_step(&windows, rng)?;
        let states = first_states(&windows, self.state_dim)?;
        let (policy_loss, entropy, per_dim) = self.network_step(&states, rng)?;
        let temperature_loss = self.temperature.step(per_dim)?;
        self.temperature.relax_target(self.config.tau);
        self.critics.soft_update()?;
        Ok(StepStats {
            critic_loss,
            policy_loss,
            temperature_loss,
            alpha: self.temperature.alpha(),
            entropy,
        })
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(checkpoint_metadata(
            "sdcq",
            &self.grid,
            self.state_dim,
            &self.temperature,
            self.critics.tau(),
        ));
        ck.push_network("decomposed_q", &self.net);
        push_critics(&mut ck, &self.critics);
        ck
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn on_policy_batch_gets_unit_weights() {
        let logs = vec![vec![0.0, 0.0], vec![0.0], vec![]];
        assert_eq!(importance_weights(&logs, 2.0, 1.0), vec![1.0; 3]);
        let tiny = vec![vec![1e-10, -1e-10]];
        assert_eq!(importance_weights(&tiny, 2.0, 1.0), vec![1.0]);
    }

    #[test]
    fn factors_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logs: Vec<Vec<f64>> = (0..64)
            .map(|_| vec![rng.gen_range(-30.0..30.0)])
            .collect();
        let lo = (-2.0f64).exp();
        let hi = 2.0f64.exp();
        for w in importance_weights(&logs, 2.0, 1.0) {
            assert!(w >= lo && w <= hi);
        }
    }

    #[test]
    fn z_scoring_by_hand() {
        // Pooled values {0, 2}: mean 1, std 1, so z = ∓1.
        let w = importance_weights(&[vec![0.0], vec![2.0]], 2.0, 1.0);
        assert!((w[0] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((w[1] - 2.0f64.exp()).abs() < 1e-15);
        let both = importance_weights(&[vec![0.0, 2.0]], 2.0, 1.0);
        assert!((both[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn centred_targets_have_zero_policy_mean() {
        let d = DecomposedDistribution::from_probs(2, 2, vec![0.25, 0.75, 0.5, 0.5]).unwrap();
        let t = centered_targets(&[1.0, 2.0, 4.0, 0.0], &[d]);
        assert_eq!(t, vec![-0.75, 0.25, 2.0, -2.0]);
        let constant = centered_targets(&[3.0; 4], &[DecomposedDistribution::uniform(2, 2)]);
        assert!(constant.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn supervised_gradient_by_hand() {
        let v = Matrix::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = supervised_loss(&v, &[0.0; 4], 2).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(grad.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cold_temperature_is_nearly_greedy() {
        let spec = EnvSpec {
            state_dim: 1,
            action_dim: 1,
            max_episode_steps: 1,
            has_termination: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = AgentConfig {
            bins: 4,
            hidden: vec![],
            initial_log_alpha: -10.0,
            ..AgentConfig::small(0.0)
        };
        let mut agent = SdcqAgent::new(spec, config, &mut rng).unwrap();
        // Identity-free single layer: output = bias; gaps of 0.01 between rows.
        agent.net.params_mut().copy_from_slice(&[0.0, 0.0, 0.0, 0.0, 0.00, 0.01, 0.03, 0.02]);
        let dist = agent
            .distributions(&Matrix::from_vec(1, 1, vec![1.0]).unwrap(), agent.temperature.alpha())
            .unwrap();
        assert!(dist[0].row(0)[2] >= 1.0 - 1e-6);
    }
}
