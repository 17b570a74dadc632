//! Twin continuous soft critics and their regression targets.
//!
//! Each critic maps a concatenated `(state, action)` row to a scalar. Targets
//! bootstrap from the smaller of the two slowly tracking target critics and
//! include the entropy bonus of the policy at every intermediate state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{AdamState, Matrix, Mlp};
use crate::policy::{normalized_entropy, sample_action, ActionGrid, DecomposedDistribution};
use crate::replay::{validate_window, Transition, Window};

/// Source of action distributions for bootstrap states.
pub trait TargetPolicy {
    /// One distribution per row of `states`.
    fn distributions(&self, states: &Matrix) -> Result<Vec<DecomposedDistribution>>;

    fn grid(&self) -> &ActionGrid;
}

/// Stacks `(state, action)` pairs into critic input rows.
pub fn critic_inputs<'a>(
    pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
    width: usize,
) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut rows = 0;
    for (s, a) in pairs {
        if s.len() + a.len() != width {
            return Err(Error::Shape(format!(
                "state of {} and action of {} do not fill a critic input of {width}",
                s.len(),
                a.len()
            )));
        }
        data.extend_from_slice(s);
        data.extend_from_slice(a);
        rows += 1;
    }
    Matrix::from_vec(rows, width, data)
}

/// `Q(s, a)` for one pair.
pub fn q_value(net: &Mlp, state: &[f64], action: &[f64]) -> Result<f64> {
    let input = critic_inputs([(state, action)], net.input_width())?;
    Ok(net.forward(&input)?.as_slice()[0])
}

#[derive(Debug, Clone)]
pub struct SoftCriticPair {
    online: [Mlp; 2],
    target: [Mlp; 2],
    optim: [AdamState; 2],
    tau: f64,
}

impl SoftCriticPair {
    /// Two independently initialized critics; targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        lr: f64,
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let a = Mlp::new(&widths, rng)?;
        let b = Mlp::new(&widths, rng)?;
        Self::from_networks([a.clone(), b.clone()], [a, b], lr, tau)
    }

    pub fn from_networks(online: [Mlp; 2], target: [Mlp; 2], lr: f64, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::config("tau", format!("{tau} is outside [0, 1]")));
        }
        for (o, t) in online.iter().zip(&target) {
            if o.widths() != t.widths() || o.widths() != online[0].widths() {
                return Err(Error::Shape("critic and target shapes differ".into()));
            }
            if o.output_width() != 1 {
                return Err(Error::Shape("critics must have a single output".into()));
            }
        }
        let n = online[0].param_count();
        Ok(Self {
            online,
            target,
            optim: [AdamState::new(n, lr), AdamState::new(n, lr)],
            tau,
        })
    }

    pub fn input_width(&self) -> usize {
        self.online[0].input_width()
    }

    pub fn online(&self, i: usize) -> &Mlp {
        &self.online[i]
    }

    pub fn target(&self, i: usize) -> &Mlp {
        &self.target[i]
    }

    pub fn online_mut(&mut self, i: usize) -> &mut Mlp {
        &mut self.online[i]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.optim.iter_mut().for_each(|o| o.lr = lr);
    }

    /// Element-wise `min(Q1, Q2)` of the online critics.
    pub fn min_online(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        min_pair(&self.online, inputs)
    }

    /// Element-wise `min(Q1′, Q2′)` of the target critics.
    pub fn min_target(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        min_pair(&self.target, inputs)
    }

    /// Raw `[Q1′, Q2′]` outputs per row.
    pub fn target_values(&self, inputs: &Matrix) -> Result<Vec<[f64; 2]>> {
        let a = self.target[0].forward(inputs)?;
        let b = self.target[1].forward(inputs)?;
        Ok(a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| [x, y])
            .collect())
    }

    /// One optimizer step per critic on `Σ w·(Q − y)² / B`.
    ///
    /// Both critics regress the same targets. Returns the two losses measured
    /// before the step.
    pub fn update(&mut self, inputs: &Matrix, targets: &[f64], weights: &[f64]) -> Result<[f64; 2]> {
        let batch = inputs.rows();
        if targets.len() != batch || weights.len() != batch {
            return Err(Error::Shape(format!(
                "{batch} inputs, {} targets, {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Input("critic weights must be non-negative".into()));
        }
        let mut losses = [0.0; 2];
        for i in 0..2 {
            let (q, mut tape) = self.online[i].forward_train(inputs)?;
            let mut grad = Matrix::zeros(batch, 1);
            let mut loss = 0.0;
            for (b, ((&qv, &y), &w)) in q.as_slice().iter().zip(targets).zip(weights).enumerate() {
                let err = qv - y;
                loss += w * err * err;
                grad.as_mut_slice()[b] = 2.0 * w * err / batch as f64;
            }
            loss /= batch as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("critic {} loss", i + 1)));
            }
            let grads = self.online[i].backward(&mut tape, &grad)?;
            self.optim[i].step(self.online[i].params_mut(), &grads)?;
            losses[i] = loss;
        }
        Ok(losses)
    }

    /// `θ′ ← τ·θ + (1 − τ)·θ′` for both targets.
    pub fn soft_update(&mut self) -> Result<()> {
        for i in 0..2 {
            self.target[i].soft_update_from(&self.online[i], self.tau)?;
        }
        Ok(())
    }
}

fn min_pair(nets: &[Mlp; 2], inputs: &Matrix) -> Result<Vec<f64>> {
    let a = nets[0].forward(inputs)?;
    let b = nets[1].forward(inputs)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x.min(*y))
        .collect())
}

/// A regression target and its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct TdTarget {
    pub value: f64,
    /// `Σ γ^i r_{t+i}` over the window.
    pub rewards: f64,
    /// Discounted entropy bonuses of the states after the first.
    pub entropy: f64,
    /// Discounted `α·H + min Q′` at the bootstrap state, 0 after termination.
    pub bootstrap: f64,
    /// `[Q1′, Q2′]` at the bootstrap state and sampled action, if any.
    pub bootstrap_values: Option<[f64; 2]>,
}

/// Targets for windows of consecutive transitions.
///
/// For a window of `k` steps starting at `t`:
///
/// ```text
/// y = Σ_{i<k} γ^i r_{t+i} + Σ_{0<i<k} γ^i α H(s_{t+i})
///     + γ^k (α H(s_{t+k}) + min_j Q′_j(s_{t+k}, ã))      unless s_{t+k} is terminal
/// ```
///
/// with `ã` sampled from the policy at `s_{t+k}` and `H` the summed
/// normalized entropy. Time-limit truncation still bootstraps.
pub fn multistep_td_targets<R: Rng + ?Sized>(
    critics: &SoftCriticPair,
    windows: &[Window<'_>],
    width: usize,
    policy: &dyn TargetPolicy,
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<Vec<TdTarget>> {
    for w in windows {
        validate_window(w, width)?;
    }
    // Intermediate states followed by the bootstrap state, per window.
    let mut states: Vec<&[f64]> = Vec::new();
    for w in windows {
        states.extend(w[1..].iter().map(|t| t.state.as_slice()));
        let last = w[w.len() - 1];
        if !last.terminal {
            states.push(&last.next_state);
        }
    }
    let state_dim = windows
        .first()
        .map(|w| w[0].state.len())
        .unwrap_or(0);
    let entropies: Vec<f64>;
    let mut boot_inputs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    if states.is_empty() {
        entropies = Vec::new();
    } else {
        let data: Vec<f64> = states.iter().flat_map(|s| s.iter().copied()).collect();
        let matrix = Matrix::from_vec(states.len(), state_dim, data)?;
        let dists = policy.distributions(&matrix)?;
        entropies = dists.iter().map(|d| normalized_entropy(d).1).collect();
        let mut cursor = 0;
        for w in windows {
            cursor += w.len() - 1;
            let last = w[w.len() - 1];
            if !last.terminal {
                let a = sample_action(&dists[cursor], policy.grid(), rng);
                boot_inputs.push((last.next_state.clone(), a.action));
                cursor += 1;
            }
        }
    }
    let boot_values = if boot_inputs.is_empty() {
        Vec::new()
    } else {
        let inputs = critic_inputs(
            boot_inputs.iter().map(|(s, a)| (s.as_slice(), a.as_slice())),
            critics.input_width(),
        )?;
        critics.target_values(&inputs)?
    };

    let mut out = Vec::with_capacity(windows.len());
    let (mut cursor, mut boot) = (0, 0);
    for w in windows {
        let mut discount = 1.0;
        let mut rewards = 0.0;
        let mut entropy = 0.0;
        for (i, t) in w.iter().enumerate() {
            if i > 0 {
                entropy += discount * alpha * entropies[cursor];
                cursor += 1;
            }
            rewards += discount * t.reward;
            discount *= gamma;
        }
        let last = w[w.len() - 1];
        let (bootstrap, bootstrap_values) = if last.terminal {
            (0.0, None)
        } else {
            let q = boot_values[boot];
            boot += 1;
            let h = entropies[cursor];
            cursor += 1;
            (discount * (alpha * h + q[0].min(q[1])), Some(q))
        };
        let value = rewards + entropy + bootstrap;
        if !value.is_finite() {
            return Err(Error::Numeric("TD target".into()));
        }
        out.push(TdTarget {
            value,
            rewards,
            entropy,
            bootstrap,
            bootstrap_values,
        });
    }
    Ok(out)
}

/// One-step targets `r + γ(α H(s′) + min_j Q′_j(s′, ã′))`.
pub fn soft_td_targets<R: Rng + ?Sized>(
    critics: &SoftCriticPair,
    batch: &[&Transition],
    policy: &dyn TargetPolicy,
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<Vec<TdTarget>> {
    let windows: Vec<Window<'_>> = batch.iter().map(|t| vec![*t]).collect();
    multistep_td_targets(critics, &windows, 1, policy, alpha, gamma, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Uniform(ActionGrid);

    impl TargetPolicy for Uniform {
        fn distributions(&self, states: &Matrix) -> Result<Vec<DecomposedDistribution>> {
            Ok((0..states.rows())
                .map(|_| DecomposedDistribution::uniform(self.0.dims(), self.0.bins()))
                .collect())
        }

        fn grid(&self) -> &ActionGrid {
            &self.0
        }
    }

    fn zero_pair(state_dim: usize, dims: usize) -> SoftCriticPair {
        let net = Mlp::zeros(&[state_dim + dims, 4, 1]).unwrap();
        SoftCriticPair::from_networks([net.clone(), net.clone()], [net.clone(), net], 1e-3, 5e-3)
            .unwrap()
    }

    fn tr(step: u64, reward: f64, terminal: bool) -> Transition {
        Transition {
            state: vec![step as f64, 0.0],
            action: vec![0.0],
            indices: vec![0],
            p_old: 1.0,
            reward,
            next_state: vec![step as f64 + 1.0, 0.0],
            terminal,
            truncated: false,
            episode_id: 0,
            step_id: step,
        }
    }

    #[test]
    fn zero_critic_outputs_zero() {
        let pair = zero_pair(2, 1);
        assert_eq!(q_value(pair.online(0), &[0.3, -2.0], &[0.5]).unwrap(), 0.0);
        assert!(matches!(q_value(pair.online(0), &[0.3], &[0.5]), Err(Error::Shape(_))));
    }

    #[test]
    fn terminal_target_is_reward() {
        let pair = zero_pair(2, 1);
        let policy = Uniform(ActionGrid::new(1, 5).unwrap());
        let t = tr(0, 1.5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = soft_td_targets(&pair, &[&t], &policy, 1.0, 0.99, &mut rng).unwrap();
        assert_eq!(y[0].value, 1.5);
        assert_eq!(y[0].bootstrap_values, None);
    }

    #[test]
    fn uniform_entropy_bootstrap() {
        let pair = zero_pair(2, 1);
        let policy = Uniform(ActionGrid::new(1, 7).unwrap());
        let t = tr(0, 0.25, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = soft_td_targets(&pair, &[&t], &policy, 1.0, 0.99, &mut rng).unwrap();
        assert!((y[0].value - (0.25 + 0.99 * std::f64::consts::LN_2)).abs() < 1e-15);
    }

    #[test]
    fn three_step_entropy_only() {
        let pair = zero_pair(2, 1);
        let policy = Uniform(ActionGrid::new(1, 4).unwrap());
        let steps = [tr(0, 0.0, false), tr(1, 0.0, false), tr(2, 0.0, false)];
        let window: Window = steps.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g: f64 = 0.9;
        let y = multistep_td_targets(&pair, &[window], 3, &policy, 1.0, g, &mut rng).unwrap();
        let expected = (g + g * g + g * g * g) * std::f64::consts::LN_2;
        assert!((y[0].value - expected).abs() < 1e-14);
    }

    #[test]
    fn terminal_first_step_window() {
        let pair = zero_pair(2, 1);
        let policy = Uniform(ActionGrid::new(1, 4).unwrap());
        let t = tr(0, -2.0, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = multistep_td_targets(&pair, &[vec![&t]], 3, &policy, 1.0, 0.9, &mut rng).unwrap();
        assert_eq!(y[0].value, -2.0);
    }

    #[test]
    fn non_consecutive_window_is_rejected() {
        let pair = zero_pair(2, 1);
        let policy = Uniform(ActionGrid::new(1, 4).unwrap());
        let (a, b, c) = (tr(0, 0.0, false), tr(2, 0.0, false), tr(3, 0.0, false));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = multistep_td_targets(&pair, &[vec![&a, &b, &c]], 3, &policy, 1.0, 0.9, &mut rng);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn soft_update_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pair = SoftCriticPair::new(2, 1, &[3], 1e-3, 1.0, &mut rng).unwrap();
        pair.online_mut(0).params_mut().iter_mut().for_each(|p| *p += 1.0);
        pair.soft_update().unwrap();
        assert_eq!(pair.target(0), pair.online(0));

        let mut frozen = SoftCriticPair::new(2, 1, &[3], 1e-3, 0.0, &mut rng).unwrap();
        let before = frozen.target(1).clone();
        frozen.online_mut(1).params_mut().iter_mut().for_each(|p| *p += 1.0);
        frozen.soft_update().unwrap();
        assert_eq!(frozen.target(1), &before);
    }

    #[test]
    fn fixed_point_and_zero_weights_leave_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pair = SoftCriticPair::new(2, 1, &[5], 1e-2, 5e-3, &mut rng).unwrap();
        let inputs = Matrix::from_rows(&[[0.1, 0.2, 0.3], [-0.5, 0.0, 1.0]]).unwrap();
        let q0 = pair.online(0).forward(&inputs).unwrap().into_vec();
        let q1 = pair.online(1).forward(&inputs).unwrap().into_vec();

        // Targets equal to each critic's own prediction.
        let mut a = pair.clone();
        let mut single = a.clone();
        single.update(&inputs, &q0, &[1.0, 1.0]).unwrap();
        assert_eq!(single.online(0), pair.online(0));
        a.update(&inputs, &q1, &[1.0, 1.0]).unwrap();
        assert_eq!(a.online(1), pair.online(1));

        let mut b = pair.clone();
        b.update(&inputs, &[5.0, -5.0], &[0.0, 0.0]).unwrap();
        assert_eq!(b.online(0), pair.online(0));
        assert_eq!(b.online(1), pair.online(1));
    }

    #[test]
    fn one_step_reduces_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pair = SoftCriticPair::new(1, 1, &[8], 1e-3, 5e-3, &mut rng).unwrap();
        let inputs = Matrix::from_rows(&[[0.4, -0.2]]).unwrap();
        let before = pair.update(&inputs, &[3.0], &[1.0]).unwrap();
        let after = pair.update(&inputs, &[3.0], &[1.0]).unwrap();
        assert!(after[0] < before[0] && after[1] < before[1]);
    }
}
