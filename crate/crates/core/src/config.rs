//! Run configuration.

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, ImportanceDirection};
use crate::error::{Error, Result};
use crate::policy::GridPlacement;
use crate::train::TrainSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Sdac,
    Sdcq,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sdac => "sdac",
            Algorithm::Sdcq => "sdcq",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdac" => Ok(Algorithm::Sdac),
            "sdcq" => Ok(Algorithm::Sdcq),
            other => Err(Error::config("algorithm", format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Everything needed to reproduce a training run.
///
/// Optional fields fall back to per-algorithm defaults in [`RunConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub env: String,
    pub seed: u64,
    /// Grid values per action dimension.
    pub bins: usize,
    pub grid_placement: GridPlacement,
    /// Normalized-entropy target per dimension; -1 for sdac, 0 for sdcq.
    pub target_entropy: Option<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Three-step targets; on by default for sdcq only.
    pub multistep: Option<bool>,
    /// Normalized importance weights on critic samples; sdcq default on.
    pub importance: Option<bool>,
    pub importance_direction: ImportanceDirection,
    pub importance_scale: f64,
    pub importance_clip: f64,
    /// Slow temperature copy inside critic targets; sdcq default on.
    pub target_alpha: Option<bool>,
    pub log_alpha_min: f64,
    pub log_alpha_max: f64,
    pub initial_log_alpha: f64,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sdac,
            env: String::new(),
            seed: 0,
            bins: 20,
            grid_placement: GridPlacement::Centered,
            target_entropy: None,
            gamma: 0.99,
            tau: 5e-3,
            policy_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 3e-4,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            hidden: vec![256, 256],
            total_steps: 100_000,
            warmup_steps: 1000,
            eval_every: 5000,
            eval_episodes: 5,
            multistep: None,
            importance: None,
            importance_direction: ImportanceDirection::StoredOverCurrent,
            importance_scale: 2.0,
            importance_clip: 1.0,
            target_alpha: None,
            log_alpha_min: -10.0,
            log_alpha_max: 2.0,
            initial_log_alpha: 0.0,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Copy with every optional field set to its algorithm default.
    pub fn resolved(&self) -> Self {
        let sdcq = self.algorithm == Algorithm::Sdcq;
        Self {
            target_entropy: Some(self.target_entropy.unwrap_or(if sdcq { 0.0 } else { -1.0 })),
            multistep: Some(self.multistep.unwrap_or(sdcq)),
            importance: Some(self.importance.unwrap_or(sdcq)),
            target_alpha: Some(self.target_alpha.unwrap_or(sdcq)),
            ..self.clone()
        }
    }

    /// Checks ranges, naming the first offending field.
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        }
        if self.env.trim().is_empty() {
            return Err(Error::config("env", "an environment id is required"));
        }
        if self.bins < 2 {
            return Err(Error::config("bins", "need at least 2 values per dimension"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("tau", "must lie in (0, 1]"));
        }
        positive("policy_lr", self.policy_lr)?;
        positive("critic_lr", self.critic_lr)?;
        positive("alpha_lr", self.alpha_lr)?;
        positive("importance_scale", self.importance_scale)?;
        positive("importance_clip", self.importance_clip)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config("buffer_capacity", "must be at least batch_size"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be at least 1"));
        }
        if !(self.log_alpha_min < self.log_alpha_max) {
            return Err(Error::config("log_alpha_min", "must be below log_alpha_max"));
        }
        if !(self.log_alpha_min..=self.log_alpha_max).contains(&self.initial_log_alpha) {
            return Err(Error::config("initial_log_alpha", "must lie within the log-alpha bounds"));
        }
        if let Some(h) = self.target_entropy {
            if !h.is_finite() {
                return Err(Error::config("target_entropy", "must be finite"));
            }
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        let r = self.resolved();
        AgentConfig {
            bins: r.bins,
            placement: r.grid_placement,
            hidden: r.hidden.clone(),
            gamma: r.gamma,
            tau: r.tau,
            policy_lr: r.policy_lr,
            critic_lr: r.critic_lr,
            alpha_lr: r.alpha_lr,
            batch_size: r.batch_size,
            target_entropy: r.target_entropy.unwrap_or_default(),
            log_alpha_bounds: (r.log_alpha_min, r.log_alpha_max),
            initial_log_alpha: r.initial_log_alpha,
            multistep: r.multistep.unwrap_or_default(),
            importance: r.importance.unwrap_or_default(),
            importance_direction: r.importance_direction,
            importance_scale: r.importance_scale,
            importance_clip: r.importance_clip,
            target_alpha: r.target_alpha.unwrap_or_default(),
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            total_steps: self.total_steps,
            warmup_steps: self.warmup_steps,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            buffer_capacity: self.buffer_capacity,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn valid() -> RunConfig {
        RunConfig {
            env: "pendulum".into(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn missing_env_names_the_field() {
        let err = RunConfig::default().validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "env"));
    }

    #[test]
    fn algorithm_defaults() {
        let sdac = valid().resolved();
        assert_eq!(sdac.target_entropy, Some(-1.0));
        assert_eq!(sdac.multistep, Some(false));
        let sdcq = RunConfig {
            algorithm: Algorithm::Sdcq,
            ..valid()
        }
        .resolved();
        assert_eq!(sdcq.target_entropy, Some(0.0));
        assert_eq!((sdcq.multistep, sdcq.importance, sdcq.target_alpha), (Some(true), Some(true), Some(true)));
    }

    #[test]
    fn range_checks() {
        for (cfg, field) in [
            (RunConfig { bins: 1, ..valid() }, "bins"),
            (RunConfig { critic_lr: 0.0, ..valid() }, "critic_lr"),
            (RunConfig { gamma: 1.0, ..valid() }, "gamma"),
            (RunConfig { buffer_capacity: 10, ..valid() }, "buffer_capacity"),
            (RunConfig { eval_every: 0, ..valid() }, "eval_every"),
        ] {
            let err = cfg.validate().unwrap_err();
            assert!(matches!(err, Error::Config { field: ref f, .. } if f == field));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"env":"pendulum","batchsize":3}"#).is_err());
        let cfg = RunConfig::from_json(r#"{"env":"pendulum","algorithm":"sdcq","bins":10}"#).unwrap();
        assert_eq!((cfg.algorithm, cfg.bins, cfg.batch_size), (Algorithm::Sdcq, 10, 256));
    }

    proptest! {
        #[test]
        fn resolved_json_round_trips(seed in any::<u64>(), bins in 2usize..100, h in -3.0f64..1.0, sdcq in any::<bool>()) {
            let cfg = RunConfig {
                algorithm: if sdcq { Algorithm::Sdcq } else { Algorithm::Sdac },
                seed,
                bins,
                target_entropy: Some(h),
                ..valid()
            }
            .resolved();
            let back = RunConfig::from_json(&serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
