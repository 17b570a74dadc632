//! Learnable entropy temperature.

use crate::error::{Error, Result};
use crate::nn::AdamState;

/// `log α` with box bounds, an entropy target, and a slow copy `α′`.
///
/// The loss `α·(H̄ − Ĥ)`, with `H̄` the mean per-dimension normalized
/// entropy, is minimized over `log α`: entropy below target raises `α`.
#[derive(Debug, Clone)]
pub struct TemperatureState {
    log_alpha: f64,
    bounds: (f64, f64),
    target_entropy: f64,
    target_alpha: f64,
    optim: AdamState,
}

impl TemperatureState {
    pub fn new(initial_log_alpha: f64, bounds: (f64, f64), target_entropy: f64, lr: f64) -> Result<Self> {
        let (lo, hi) = bounds;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config("log_alpha_bounds", format!("invalid range [{lo}, {hi}]")));
        }
        if !target_entropy.is_finite() {
            return Err(Error::config("target_entropy", "must be finite"));
        }
        let log_alpha = initial_log_alpha.clamp(lo, hi);
        Ok(Self {
            log_alpha,
            bounds,
            target_entropy,
            target_alpha: log_alpha.exp(),
            optim: AdamState::new(1, lr),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    /// The slow-moving copy `α′`.
    pub fn target_alpha(&self) -> f64 {
        self.target_alpha
    }

    pub fn set_target_alpha(&mut self, alpha: f64) {
        self.target_alpha = alpha;
    }

    pub fn set_log_alpha(&mut self, log_alpha: f64) {
        self.log_alpha = log_alpha.clamp(self.bounds.0, self.bounds.1);
    }

    pub fn learning_rate(&self) -> f64 {
        self.optim.lr
    }

    /// Loss and its derivative wrt `log α` for a mean per-dimension entropy.
    ///
    /// Both equal `α·(H̄ − Ĥ)` since `∂α/∂log α = α`.
    pub fn loss_and_grad(&self, mean_entropy: f64) -> (f64, f64) {
        let value = self.alpha() * (mean_entropy - self.target_entropy);
        (value, value)
    }

    /// One optimizer step on `log α`, then clipping into the bounds.
    pub fn step(&mut self, mean_entropy: f64) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(mean_entropy);
        let mut p = [self.log_alpha];
        self.optim.step(&mut p, &[grad])?;
        self.log_alpha = p[0].clamp(self.bounds.0, self.bounds.1);
        Ok(loss)
    }

    /// `α′ ← τ·α + (1 − τ)·α′`.
    pub fn relax_target(&mut self, tau: f64) {
        self.target_alpha = tau * self.alpha() + (1.0 - tau) * self.target_alpha;
    }
}
