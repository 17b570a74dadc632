use rand::Rng;

use super::TabularMdp;
use crate::error::{Error, Result};
use crate::policy::{discrete_entropy, softmax_into};

/// Per-state, per-dimension action distributions for a [`TabularMdp`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    states: usize,
    dims: usize,
    bins: usize,
    /// `[state][dimension][bin]`
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(states: usize, dims: usize, bins: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != states * dims * bins {
            return Err(Error::Shape(format!(
                "{} probabilities for a {states}x{dims}x{bins} policy",
                probs.len()
            )));
        }
        for row in probs.chunks_exact(bins) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Input("policy rows must be distributions".into()));
            }
        }
        Ok(Self {
            states,
            dims,
            bins,
            probs,
        })
    }

    pub fn uniform(mdp: &TabularMdp) -> Self {
        let (s, m, n) = (mdp.states(), mdp.dims(), mdp.bins());
        Self {
            states: s,
            dims: m,
            bins: n,
            probs: vec![1.0 / n as f64; s * m * n],
        }
    }

    /// Softmax of standard-normal-ish logits scaled by `spread`.
    pub fn random<R: Rng + ?Sized>(mdp: &TabularMdp, spread: f64, rng: &mut R) -> Self {
        let (s, m, n) = (mdp.states(), mdp.dims(), mdp.bins());
        let mut probs = vec![0.0; s * m * n];
        let mut logits = vec![0.0; n];
        for row in probs.chunks_exact_mut(n) {
            for l in &mut logits {
                *l = spread * rng.gen_range(-1.0..1.0);
            }
            softmax_into(&logits, row);
        }
        Self {
            states: s,
            dims: m,
            bins: n,
            probs,
        }
    }

    pub fn row(&self, state: usize, dim: usize) -> &[f64] {
        let start = (state * self.dims + dim) * self.bins;
        &self.probs[start..start + self.bins]
    }

    /// Probability of a joint action (product over dimensions).
    pub fn joint_prob(&self, state: usize, indices: &[usize]) -> f64 {
        indices
            .iter()
            .enumerate()
            .map(|(m, &n)| self.row(state, m)[n])
            .product()
    }

    /// Raw entropy `−Σ π ln π` of one dimension.
    pub fn entropy(&self, state: usize, dim: usize) -> f64 {
        discrete_entropy(self.row(state, dim))
    }

    /// Sum of the per-dimension raw entropies.
    pub fn joint_entropy(&self, state: usize) -> f64 {
        (0..self.dims).map(|m| self.entropy(state, m)).sum()
    }

    fn check_matches(&self, mdp: &TabularMdp) -> Result<()> {
        if (self.states, self.dims, self.bins) != (mdp.states(), mdp.dims(), mdp.bins()) {
            return Err(Error::Shape(format!(
                "policy is {}x{}x{}, MDP is {}x{}x{}",
                self.states,
                self.dims,
                self.bins,
                mdp.states(),
                mdp.dims(),
                mdp.bins()
            )));
        }
        Ok(())
    }
}

/// A converged soft Q table and the sup-norm Bellman residual of each sweep.
#[derive(Debug, Clone)]
pub struct SoftQSolution {
    width: usize,
    values: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl SoftQSolution {
    /// Number of actions per state.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.width..(state + 1) * self.width]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.width + action]
    }
}

const TOLERANCE: f64 = 1e-12;

/// Iterates `Q ← reward + γ·P·value(Q)` until sweeps change by < 1e-12.
///
/// `reward` is `[state][action]` and `next` maps `(state, action)` to a
/// next-state distribution. `value` turns a full Q table into state values.
fn evaluate<'a>(
    states: usize,
    width: usize,
    gamma: f64,
    reward: &[f64],
    next: impl Fn(usize, usize) -> &'a [f64],
    terminal: impl Fn(usize) -> bool,
    value: impl Fn(&[f64], usize) -> f64,
) -> Result<SoftQSolution> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Parameter(format!(
            "discount must lie in [0, 1) for evaluation to converge, got {gamma}"
        )));
    }
    let mut q = reward.to_vec();
    let mut residuals = Vec::new();
    // Enough sweeps for γ^k times the initial error to fall far below tolerance.
    let max_sweeps = if gamma == 0.0 {
        2
    } else {
        (((TOLERANCE / 1e6).ln() / gamma.ln()).ceil() as usize).max(2) + 100
    };
    let mut v = vec![0.0; states];
    for _ in 0..max_sweeps {
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = if terminal(s) { 0.0 } else { value(&q, s) };
        }
        let mut residual = 0.0f64;
        for s in 0..states {
            for a in 0..width {
                let cont: f64 = next(s, a).iter().zip(&v).map(|(p, vs)| p * vs).sum();
                let updated = reward[s * width + a] + gamma * cont;
                residual = residual.max((updated - q[s * width + a]).abs());
                q[s * width + a] = updated;
            }
        }
        residuals.push(residual);
        if residual < TOLERANCE {
            return Ok(SoftQSolution {
                width,
                values: q,
                residuals,
            });
        }
    }
    Err(Error::Numeric(format!(
        "soft evaluation did not converge in {max_sweeps} sweeps"
    )))
}

/// Soft Q-function of `policy` over joint actions, with raw entropies.
pub fn joint_soft_q(mdp: &TabularMdp, policy: &TabularPolicy, alpha: f64) -> Result<SoftQSolution> {
    policy.check_matches(mdp)?;
    let joint = mdp.joint_actions();
    let splits: Vec<Vec<usize>> = (0..joint).map(|a| mdp.split_joint(a)).collect();
    let reward: Vec<f64> = (0..mdp.states())
        .flat_map(|s| (0..joint).map(move |a| mdp.reward(s, a)))
        .collect();
    let weights: Vec<f64> = (0..mdp.states())
        .flat_map(|s| splits.iter().map(move |ix| policy.joint_prob(s, ix)))
        .collect();
    let entropy: Vec<f64> = (0..mdp.states()).map(|s| policy.joint_entropy(s)).collect();
    evaluate(
        mdp.states(),
        joint,
        mdp.gamma(),
        &reward,
        |s, a| mdp.next_distribution(s, a),
        |s| mdp.is_terminal(s),
        |q, s| {
            let row = &q[s * joint..(s + 1) * joint];
            let w = &weights[s * joint..(s + 1) * joint];
            row.iter().zip(w).map(|(q, w)| q * w).sum::<f64>() + alpha * entropy[s]
        },
    )
}

/// The single-dimension view of `mdp` in which every other dimension is
/// folded into the dynamics by its fixed policy.
#[derive(Debug, Clone)]
pub struct DecomposedView {
    pub dim: usize,
    /// `[state][bin]`: expected reward plus `α` times the other dimensions' entropy.
    pub reward: Vec<f64>,
    /// `[state][bin][next state]`
    pub transitions: Vec<f64>,
}

impl DecomposedView {
    pub fn new(mdp: &TabularMdp, policy: &TabularPolicy, dim: usize, alpha: f64) -> Result<Self> {
        policy.check_matches(mdp)?;
        if dim >= mdp.dims() {
            return Err(Error::Input(format!("dimension {dim} out of range")));
        }
        let (states, bins) = (mdp.states(), mdp.bins());
        let mut reward = vec![0.0; states * bins];
        let mut transitions = vec![0.0; states * bins * states];
        for s in 0..states {
            let others: f64 = (0..mdp.dims())
                .filter(|&i| i != dim)
                .map(|i| policy.entropy(s, i))
                .sum();
            for a in 0..mdp.joint_actions() {
                let ix = mdp.split_joint(a);
                let own = ix[dim];
                let weight: f64 = ix
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != dim)
                    .map(|(i, &n)| policy.row(s, i)[n])
                    .product();
                reward[s * bins + own] += weight * mdp.reward(s, a);
                let row = &mut transitions[(s * bins + own) * states..][..states];
                for (t, p) in row.iter_mut().zip(mdp.next_distribution(s, a)) {
                    *t += weight * p;
                }
            }
            for r in &mut reward[s * bins..(s + 1) * bins] {
                *r += alpha * others;
            }
        }
        Ok(Self {
            dim,
            reward,
            transitions,
        })
    }
}

/// Soft Q-function over dimension `dim`'s own actions in its decomposed view.
pub fn decomposed_soft_q(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    dim: usize,
    alpha: f64,
) -> Result<SoftQSolution> {
    let view = DecomposedView::new(mdp, policy, dim, alpha)?;
    let (states, bins) = (mdp.states(), mdp.bins());
    evaluate(
        states,
        bins,
        mdp.gamma(),
        &view.reward,
        |s, n| &view.transitions[(s * bins + n) * states..][..states],
        |s| mdp.is_terminal(s),
        |q, s| {
            let row = &q[s * bins..(s + 1) * bins];
            let pi = policy.row(s, dim);
            row.iter().zip(pi).map(|(q, p)| q * p).sum::<f64>() + alpha * policy.entropy(s, dim)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn myopic_q_is_reward() {
        let mut r = rng();
        let mdp = TabularMdp::random(3, 2, 3, 0.0, &mut r).unwrap();
        let pi = TabularPolicy::random(&mdp, 1.0, &mut r);
        let q = joint_soft_q(&mdp, &pi, 0.7).unwrap();
        for s in 0..3 {
            for a in 0..9 {
                assert_eq!(q.get(s, a), mdp.reward(s, a));
            }
        }
    }

    #[test]
    fn single_state_geometric_series() {
        let mdp = TabularMdp::new(1, 1, 2, vec![1.0, 1.0], vec![0.3, -1.0], 0.9).unwrap();
        let pi = TabularPolicy::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let q = joint_soft_q(&mdp, &pi, 0.0).unwrap();
        assert!((q.get(0, 0) - 0.3 / 0.1).abs() < 1e-10);
    }

    #[test]
    fn discount_of_one_is_rejected() {
        let mdp = TabularMdp::new(1, 1, 2, vec![1.0, 1.0], vec![0.0, 0.0], 1.0).unwrap();
        let pi = TabularPolicy::uniform(&mdp);
        assert!(matches!(joint_soft_q(&mdp, &pi, 0.1), Err(Error::Parameter(_))));
        assert!(matches!(decomposed_soft_q(&mdp, &pi, 0, 0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn one_dimension_views_coincide() {
        let mut r = rng();
        let mdp = TabularMdp::random(4, 1, 5, 0.8, &mut r).unwrap();
        let pi = TabularPolicy::random(&mdp, 2.0, &mut r);
        let joint = joint_soft_q(&mdp, &pi, 0.5).unwrap();
        let dec = decomposed_soft_q(&mdp, &pi, 0, 0.5).unwrap();
        for s in 0..4 {
            for n in 0..5 {
                assert!((joint.get(s, n) - dec.get(s, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn myopic_decomposed_q_by_hand() {
        let mut r = rng();
        let mdp = TabularMdp::random(2, 2, 3, 0.0, &mut r).unwrap();
        let pi = TabularPolicy::random(&mdp, 1.0, &mut r);
        let alpha = 0.4;
        let dec = decomposed_soft_q(&mdp, &pi, 1, alpha).unwrap();
        for s in 0..2 {
            for n in 0..3 {
                let expected: f64 = (0..3)
                    .map(|k| pi.row(s, 0)[k] * mdp.reward(s, mdp.joint_index(&[k, n])))
                    .sum::<f64>()
                    + alpha * pi.entropy(s, 0);
                assert!((dec.get(s, n) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn residuals_contract_monotonically() {
        let mut r = rng();
        for _ in 0..10 {
            let mdp = TabularMdp::random(4, 2, 3, 0.9, &mut r).unwrap();
            let pi = TabularPolicy::random(&mdp, 1.5, &mut r);
            for sol in [
                joint_soft_q(&mdp, &pi, 0.3).unwrap(),
                decomposed_soft_q(&mdp, &pi, 0, 0.3).unwrap(),
            ] {
                for w in sol.residuals.windows(2) {
                    assert!(w[1] <= w[0] * 0.9 + 1e-13, "{w:?}");
                }
            }
        }
    }

    #[test]
    fn terminal_states_stop_accumulation() {
        // State 0 moves to terminal state 1 for sure.
        let mdp = TabularMdp::new(2, 1, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0], vec![1.0, 1.0, 5.0, 5.0], 0.9)
            .unwrap()
            .with_terminal_states(&[1])
            .unwrap();
        let pi = TabularPolicy::uniform(&mdp);
        let q = joint_soft_q(&mdp, &pi, 1.0).unwrap();
        assert!((q.get(0, 0) - 1.0).abs() < 1e-15);
    }
}
