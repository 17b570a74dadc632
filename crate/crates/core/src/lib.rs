//! Soft decomposed policy-critic reinforcement learning.
//!
//! Continuous actions in `[-1, 1]^M` are discretized per dimension into `N`
//! grid values, so a network only has to emit an `M × N` matrix instead of
//! scoring `N^M` joint actions. Two learners are provided:
//!
//! * [`sdac::SdacAgent`]: the matrix holds per-dimension logits, trained by a
//!   policy gradient against twin continuous soft critics.
//! * [`sdcq::SdcqAgent`]: the matrix holds per-dimension action values, turned
//!   into a Boltzmann policy and fit by regression onto centred critic values,
//!   with three-step critic targets and normalized importance weights.
//!
//! Both adapt an entropy temperature toward a target expressed in normalized
//! entropy units, which do not depend on `N`.
//!
//! ```
//! use sdpc::policy::{normalized_entropy, DecomposedDistribution};
//!
//! let uniform = DecomposedDistribution::uniform(3, 20);
//! let (per_dim, total) = normalized_entropy(&uniform);
//! assert!((per_dim[0] - std::f64::consts::LN_2).abs() < 1e-12);
//! assert!((total - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
//! ```
//!
//! The [`oracle`] module solves small tabular problems exactly and checks the
//! identities the learners rely on.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod envs;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod replay;
pub mod run;
pub mod sdac;
pub mod sdcq;
pub mod temperature;
pub mod train;

pub use agent::{Agent, AgentConfig, ImportanceDirection, StepStats};
pub use config::{Algorithm, RunConfig};
pub use error::{Error, Result};
pub use train::{AnyAgent, MetricsRow};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/entropy.md")]
    mod entropy {}
    #[doc = include_str!("../../../book/src/sdac.md")]
    mod sdac {}
    #[doc = include_str!("../../../book/src/sdcq.md")]
    mod sdcq {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
