//! Decomposed actor-critic.
//!
//! The actor outputs `M × N` logits. For each state in a batch one joint
//! action `ã` is sampled, and the critics score every action obtained by
//! replacing a single component of `ã` with a grid value. Per dimension the
//! actor then minimizes
//!
//! ```text
//! Σ_n π_n (α ln π_n − q_n)
//! ```
//!
//! whose minimizer is `π ∝ exp(q/α)`. Losses are averaged over dimensions
//! and batch.

use rand::RngCore;

use crate::agent::{
    first_states, sample_training_windows, swapped_inputs, Agent, AgentConfig, StepStats,
};
use crate::checkpoint::Checkpoint;
use crate::critic::{critic_inputs, multistep_td_targets, SoftCriticPair, TargetPolicy};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Matrix, Mlp};
use crate::policy::{
    greedy_action, normalized_entropy, policy_from_logits, sample_action, ActionGrid,
    DecomposedDistribution, MatrixKind, PolicyMatrix, SampledAction,
};
use crate::replay::{ReplayBuffer, Window};
use crate::temperature::TemperatureState;

/// Gradient of `Σ_n π_n (α ln π_n − q_n)` wrt the logits of one row.
///
/// `out[k] = π_k (h_k − Σ_n π_n h_n)` with `h = α ln π − q`.
pub fn policy_row_gradient(probs: &[f64], q: &[f64], alpha: f64, out: &mut [f64]) {
    let log_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    row_gradient(probs, &log_probs, q, alpha, out);
}

/// Returns the row loss and writes its logit gradient.
fn row_gradient(probs: &[f64], log_probs: &[f64], q: &[f64], alpha: f64, out: &mut [f64]) -> f64 {
    let mut mean_h = 0.0;
    for ((o, (&p, &lp)), &qv) in out.iter_mut().zip(probs.iter().zip(log_probs)).zip(q) {
        // p = 0 contributes nothing even if its log underflowed.
        let h = if p > 0.0 { alpha * lp - qv } else { 0.0 };
        *o = h;
        mean_h += p * h;
    }
    for (o, &p) in out.iter_mut().zip(probs) {
        *o = p * (*o - mean_h);
    }
    mean_h
}

/// Batch actor loss and its gradient wrt the logits.
///
/// `logits` is `B × (M·N)`; `swap_q` holds `min_j Q_j` for every swapped
/// action in the order of [`swapped_inputs`].
pub fn policy_loss(
    logits: &Matrix,
    swap_q: &[f64],
    dims: usize,
    bins: usize,
    alpha: f64,
) -> Result<(f64, Matrix)> {
    let batch = logits.rows();
    if logits.cols() != dims * bins || swap_q.len() != batch * dims * bins {
        return Err(Error::Shape("logits and swapped values disagree".into()));
    }
    let scale = 1.0 / (dims * batch) as f64;
    let mut grad = Matrix::zeros(batch, dims * bins);
    let mut loss = 0.0;
    let mut probs = vec![0.0; bins];
    let mut log_probs = vec![0.0; bins];
    for b in 0..batch {
        let row = logits.row(b);
        for m in 0..dims {
            let z = &row[m * bins..(m + 1) * bins];
            log_softmax(z, &mut log_probs);
            for (p, lp) in probs.iter_mut().zip(&log_probs) {
                *p = lp.exp();
            }
            let q = &swap_q[(b * dims + m) * bins..][..bins];
            let out = &mut grad.row_mut(b)[m * bins..(m + 1) * bins];
            loss += row_gradient(&probs, &log_probs, q, alpha, out);
            out.iter_mut().for_each(|g| *g *= scale);
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric("policy loss".into()));
    }
    Ok((loss, grad))
}

fn log_softmax(z: &[f64], out: &mut [f64]) {
    let lse = crate::policy::log_sum_exp(z);
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

/// Softmax policy of an actor network.
pub struct ActorPolicy<'a> {
    pub actor: &'a Mlp,
    pub grid: &'a ActionGrid,
}

impl TargetPolicy for ActorPolicy<'_> {
    fn distributions(&self, states: &Matrix) -> Result<Vec<DecomposedDistribution>> {
        distributions_from_logits(&self.actor.forward(states)?, self.grid)
    }

    fn grid(&self) -> &ActionGrid {
        self.grid
    }
}

fn distributions_from_logits(logits: &Matrix, grid: &ActionGrid) -> Result<Vec<DecomposedDistribution>> {
    logits
        .iter_rows()
        .map(|row| {
            let d = PolicyMatrix::new(MatrixKind::Logits, grid.dims(), grid.bins(), row.to_vec())?;
            Ok(policy_from_logits(&d))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SdacAgent {
    config: AgentConfig,
    state_dim: usize,
    grid: ActionGrid,
    actor: Mlp,
    actor_optim: AdamState,
    critics: SoftCriticPair,
    temperature: TemperatureState,
}

impl SdacAgent {
    pub fn new(spec: EnvSpec, config: AgentConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let grid = config.grid(spec.action_dim)?;
        let actor = Mlp::new(
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
            actor_optim: AdamState::new(actor.param_count(), config.policy_lr),
            temperature: config.temperature()?,
            state_dim: spec.state_dim,
            grid,
            actor,
            critics,
            config,
        })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
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

    /// Per-state softmax distributions of the actor.
    pub fn distributions(&self, states: &Matrix) -> Result<Vec<DecomposedDistribution>> {
        distributions_from_logits(&self.actor.forward(states)?, &self.grid)
    }

    /// Min-critic values of all swapped actions around one sample per state.
    pub fn swap_values(
        &self,
        states: &Matrix,
        dists: &[DecomposedDistribution],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let sampled: Vec<SampledAction> = dists
            .iter()
            .map(|d| sample_action(d, &self.grid, rng))
            .collect();
        self.critics.min_online(&swapped_inputs(states, &sampled, &self.grid)?)
    }

    /// Regresses both critics on targets built from `windows`.
    pub fn critic_step(&mut self, windows: &[Window<'_>], rng: &mut dyn RngCore) -> Result<f64> {
        let policy = ActorPolicy {
            actor: &self.actor,
            grid: &self.grid,
        };
        let targets = multistep_td_targets(
            &self.critics,
            windows,
            self.config.window_width(),
            &policy,
            self.temperature.alpha(),
            self.config.gamma,
            rng,
        )?;
        let inputs = critic_inputs(
            windows.iter().map(|w| (w[0].state.as_slice(), w[0].action.as_slice())),
            self.critics.input_width(),
        )?;
        let y: Vec<f64> = targets.iter().map(|t| t.value).collect();
        let losses = self.critics.update(&inputs, &y, &vec![1.0; y.len()])?;
        Ok(0.5 * (losses[0] + losses[1]))
    }

    /// One actor step; returns the loss and the mean summed entropy of the
    /// pre-step policy, plus the mean per-dimension entropy.
    pub fn actor_step(&mut self, states: &Matrix, rng: &mut dyn RngCore) -> Result<(f64, f64, f64)> {
        let (logits, mut tape) = self.actor.forward_train(states)?;
        let dists = distributions_from_logits(&logits, &self.grid)?;
        let swap_q = self.swap_values(states, &dists, rng)?;
        let (loss, grad) = policy_loss(
            &logits,
            &swap_q,
            self.grid.dims(),
            self.grid.bins(),
            self.temperature.alpha(),
        )?;
        let grads = self.actor.backward(&mut tape, &grad)?;
        self.actor_optim.step(self.actor.params_mut(), &grads)?;
        let total: f64 = dists.iter().map(|d| normalized_entropy(d).1).sum::<f64>() / dists.len() as f64;
        Ok((loss, total, total / self.grid.dims() as f64))
    }

    pub fn from_checkpoint(ck: &Checkpoint, spec: EnvSpec, config: AgentConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut agent = Self::new(spec, config, &mut rng)?;
        agent.actor = ck.network("actor")?;
        agent.critics = SoftCriticPair::from_networks(
            [ck.network("critic1")?, ck.network("critic2")?],
            [ck.network("critic1_target")?, ck.network("critic2_target")?],
            agent.config.critic_lr,
            agent.config.tau,
        )?;
        restore_temperature(&mut agent.temperature, ck);
        if agent.actor.widths() != agent.network_widths().as_slice() {
            return Err(Error::Format("checkpoint actor does not match the environment".into()));
        }
        Ok(agent)
    }

    fn network_widths(&self) -> Vec<usize> {
        self.config
            .network_widths(self.state_dim, self.grid.dims() * self.grid.bins())
    }
}

pub(crate) fn restore_temperature(t: &mut TemperatureState, ck: &Checkpoint) {
    if let Some(v) = ck.metadata.get("log_alpha").and_then(|v| v.as_f64()) {
        t.set_log_alpha(v);
    }
    if let Some(v) = ck.metadata.get("target_alpha").and_then(|v| v.as_f64()) {
        t.set_target_alpha(v);
    }
}

pub(crate) fn checkpoint_metadata(
    algorithm: &str,
    grid: &ActionGrid,
    state_dim: usize,
    t: &TemperatureState,
    tau: f64,
) -> serde_json::Value {
    serde_json::json!({
        "algorithm": algorithm,
        "state_dim": state_dim,
        "action_dims": grid.dims(),
        "bins": grid.bins(),
        "placement": grid.placement(),
        "log_alpha": t.log_alpha(),
        "target_alpha": t.target_alpha(),
        "tau": tau,
    })
}

impl Agent for SdacAgent {
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
        let dist = self.distributions(&states)?.remove(0);
        Ok(if explore {
            sample_action(&dist, &self.grid, rng)
        } else {
            greedy_action(&dist, &self.grid)
        })
    }

    fn train_step(&mut self, buffer: &ReplayBuffer, rng: &mut dyn RngCore) -> Result<StepStats> {
        let windows = sample_training_windows(buffer, &self.config, rng)?;
        let critic_loss = self.critic_step(&windows, rng)?;
        let states = first_states(&windows, self.state_dim)?;
        let (policy_loss, entropy, per_dim) = self.actor_step(&states, rng)?;
        let temperature_loss = self.temperature.step(per_dim)?;
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
            "sdac",
            &self.grid,
            self.state_dim,
            &self.temperature,
            self.critics.tau(),
        ));
        ck.push_network("actor", &self.actor);
        push_critics(&mut ck, &self.critics);
        ck
    }
}

pub(crate) fn push_critics(ck: &mut Checkpoint, critics: &SoftCriticPair) {
    ck.push_network("critic1", critics.online(0));
    ck.push_network("critic2", critics.online(1));
    ck.push_network("critic1_target", critics.target(0));
    ck.push_network("critic2_target", critics.target(1));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(state_dim: usize, action_dim: usize) -> EnvSpec {
        EnvSpec {
            state_dim,
            action_dim,
            max_episode_steps: 10,
            has_termination: false,
        }
    }

    fn small(bins: usize) -> AgentConfig {
        AgentConfig {
            bins,
            hidden: vec![8],
            batch_size: 4,
            ..AgentConfig::small(-1.0)
        }
    }

    #[test]
    fn zero_actor_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = SdacAgent::new(spec(3, 2), small(10), &mut rng).unwrap();
        agent.actor.params_mut().iter_mut().for_each(|p| *p = 0.0);
        for _ in 0..20 {
            let a = agent.act(&[0.1, 0.2, 0.3], true, &mut rng).unwrap();
            assert!((a.p_joint - 0.01).abs() < 1e-15);
        }
        let greedy = agent.act(&[0.1, 0.2, 0.3], false, &mut rng).unwrap();
        assert_eq!(greedy.indices, vec![0, 0]);
        assert_eq!(greedy.action, vec![agent.grid.value(0); 2]);
    }

    #[test]
    fn constant_critic_without_temperature_has_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Matrix::from_vec(2, 6, (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let (_, grad) = policy_loss(&logits, &[0.7; 12], 2, 3, 0.0).unwrap();
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn optimum_has_zero_gradient() {
        let q = [0.5, -0.2, 1.1, 0.0];
        let alpha = 0.3;
        let logits = Matrix::from_vec(1, 4, q.iter().map(|v| v / alpha + 2.0).collect()).unwrap();
        let (_, grad) = policy_loss(&logits, &q, 1, 4, alpha).unwrap();
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn row_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = 0.4;
        let loss = |z: &[f64]| {
            let m = Matrix::from_vec(1, 5, z.to_vec()).unwrap();
            policy_loss(&m, &q, 1, 5, alpha).unwrap().0
        };
        let (_, grad) = policy_loss(&Matrix::from_vec(1, 5, z.clone()).unwrap(), &q, 1, 5, alpha).unwrap();
        for k in 0..5 {
            let (mut p, mut m) = (z.clone(), z.clone());
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let fd = (loss(&p) - loss(&m)) / 2e-6;
            assert!((fd - grad.as_slice()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_learning_rates_freeze_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = AgentConfig {
            policy_lr: 0.0,
            critic_lr: 0.0,
            alpha_lr: 0.0,
            ..small(5)
        };
        let mut agent = SdacAgent::new(spec(2, 1), config, &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(100).unwrap();
        fill(&mut buffer, 20, &mut rng);
        let before = agent.clone();
        agent.train_step(&buffer, &mut rng).unwrap();
        assert_eq!(agent.actor, before.actor);
        assert_eq!(agent.critics.online(0), before.critics.online(0));
        assert_eq!(agent.temperature.log_alpha(), before.temperature.log_alpha());
    }

    #[test]
    fn training_step_moves_actor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut agent = SdacAgent::new(spec(2, 1), small(5), &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(100).unwrap();
        fill(&mut buffer, 20, &mut rng);
        let before = agent.actor.clone();
        let stats = agent.train_step(&buffer, &mut rng).unwrap();
        assert_ne!(agent.actor, before);
        assert!(stats.critic_loss.is_finite());
    }

    fn fill(buffer: &mut ReplayBuffer, n: u64, rng: &mut ChaCha8Rng) {
        for i in 0..n {
            buffer.push(crate::replay::Transition {
                state: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                action: vec![rng.gen_range(-1.0..1.0)],
                indices: vec![0],
                p_old: 0.2,
                reward: rng.gen_range(-1.0..1.0),
                next_state: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                terminal: false,
                truncated: false,
                episode_id: 0,
                step_id: i,
            });
        }
    }
}
