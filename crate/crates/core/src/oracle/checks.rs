use super::{decomposed_soft_q, joint_soft_q, TabularMdp, TabularPolicy};
use crate::error::{Error, Result};
use crate::policy::{log_sum_exp, softmax_into};
use crate::sdac::policy_row_gradient;

/// Largest residuals of the identity linking per-dimension and joint soft Q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeReport {
    /// `max |E_{π_m}[Q_m] − E_π[Q] − α·H̄_m|` over states and dimensions,
    /// where `H̄_m` is the raw entropy of all dimensions except `m`.
    pub corrected: f64,
    /// `max |E_{π_m}[Q_m] − E_π[Q]|`, which vanishes only when `α = 0`.
    pub uncorrected: f64,
}

/// Solves the joint and every decomposed soft evaluation and compares them.
pub fn check_bridge(mdp: &TabularMdp, policy: &TabularPolicy, alpha: f64) -> Result<BridgeReport> {
    let joint = joint_soft_q(mdp, policy, alpha)?;
    let splits: Vec<Vec<usize>> = (0..mdp.joint_actions()).map(|a| mdp.split_joint(a)).collect();
    let mut report = BridgeReport {
        corrected: 0.0,
        uncorrected: 0.0,
    };
    for dim in 0..mdp.dims() {
        let dec = decomposed_soft_q(mdp, policy, dim, alpha)?;
        for s in 0..mdp.states() {
            let joint_mean: f64 = splits
                .iter()
                .enumerate()
                .map(|(a, ix)| policy.joint_prob(s, ix) * joint.get(s, a))
                .sum();
            let dim_mean: f64 = dec
                .row(s)
                .iter()
                .zip(policy.row(s, dim))
                .map(|(q, p)| q * p)
                .sum();
            let exclusive = policy.joint_entropy(s) - policy.entropy(s, dim);
            let gap = dim_mean - joint_mean;
            report.uncorrected = report.uncorrected.max(gap.abs());
            report.corrected = report.corrected.max((gap - alpha * exclusive).abs());
        }
    }
    Ok(report)
}

fn check_row(q: &[f64], alpha: f64) -> Result<()> {
    if q.is_empty() {
        return Err(Error::Input("empty value row".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive, got {alpha}")));
    }
    Ok(())
}

/// Gradient wrt `logits` of `KL(softmax(logits) ‖ softmax(q/α))`, through the
/// softmax Jacobian.
pub fn kl_logit_gradient(logits: &[f64], q: &[f64], alpha: f64) -> Vec<f64> {
    let n = logits.len();
    let mut pi = vec![0.0; n];
    softmax_into(logits, &mut pi);
    let scaled: Vec<f64> = q.iter().map(|v| v / alpha).collect();
    let lse = log_sum_exp(&scaled);
    // ∂KL/∂π_j = ln π_j + 1 − q_j/α + lse
    let d_pi: Vec<f64> = (0..n)
        .map(|j| pi[j].ln() + 1.0 - scaled[j] + lse)
        .collect();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|j| {
                    let jac = pi[j] * (if j == k { 1.0 } else { 0.0 } - pi[k]);
                    jac * d_pi[j]
                })
                .sum()
        })
        .collect()
}

/// Max coordinate gap between the KL gradient and `1/α` times the gradient
/// of the per-row actor loss `Σ_n π_n(α ln π_n − q_n)`, both wrt `logits`.
pub fn check_kl_equivalence(q: &[f64], logits: &[f64], alpha: f64) -> Result<f64> {
    check_row(q, alpha)?;
    if q.len() != logits.len() {
        return Err(Error::Shape("logit and value rows differ in length".into()));
    }
    let kl = kl_logit_gradient(logits, q, alpha);
    let mut pi = vec![0.0; q.len()];
    softmax_into(logits, &mut pi);
    let mut actor = vec![0.0; q.len()];
    policy_row_gradient(&pi, q, alpha, &mut actor);
    Ok(kl
        .iter()
        .zip(&actor)
        .map(|(a, b)| (a - b / alpha).abs())
        .fold(0.0, f64::max))
}

/// `KL(softmax((q + x)/α) ‖ softmax(q/α))` computed from log-ratios.
pub fn boltzmann_kl(q: &[f64], perturbation: &[f64], alpha: f64) -> f64 {
    let base: Vec<f64> = q.iter().map(|v| v / alpha).collect();
    let moved: Vec<f64> = q.iter().zip(perturbation).map(|(v, x)| (v + x) / alpha).collect();
    let shift = log_sum_exp(&moved) - log_sum_exp(&base);
    let mut pi = vec![0.0; q.len()];
    softmax_into(&moved, &mut pi);
    pi.iter()
        .zip(perturbation)
        .map(|(p, x)| p * (x / alpha - shift))
        .sum::<f64>()
        .max(0.0)
}

/// `Var_π(x)` under `π = softmax(q/α)`.
pub fn boltzmann_variance(q: &[f64], x: &[f64], alpha: f64) -> f64 {
    let scaled: Vec<f64> = q.iter().map(|v| v / alpha).collect();
    let mut pi = vec![0.0; q.len()];
    softmax_into(&scaled, &mut pi);
    let mean: f64 = pi.iter().zip(x).map(|(p, x)| p * x).sum();
    pi.iter().zip(x).map(|(p, x)| p * (x - mean).powi(2)).sum()
}

/// For each scale `c`, the ratio `KL / (Var_π(c·x) / (2α²))` of a Boltzmann
/// policy displaced by `c·x` from the matched point. `None` marks the exempt
/// case of a constant `x`, where both sides are exactly zero.
pub fn check_variance_limit(
    q: &[f64],
    direction: &[f64],
    alpha: f64,
    scales: &[f64],
) -> Result<Vec<Option<f64>>> {
    check_row(q, alpha)?;
    if q.len() != direction.len() {
        return Err(Error::Shape("value row and direction differ in length".into()));
    }
    let constant = direction.iter().all(|&x| x == direction[0]);
    Ok(scales
        .iter()
        .map(|&c| {
            if constant {
                return None;
            }
            let x: Vec<f64> = direction.iter().map(|d| c * d).collect();
            let kl = boltzmann_kl(q, &x, alpha);
            let quad = boltzmann_variance(q, &x, alpha) / (2.0 * alpha * alpha);
            Some(kl / quad)
        })
        .collect())
}
