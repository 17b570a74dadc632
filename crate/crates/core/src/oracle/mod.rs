//! Exact tabular solvers used to verify the decomposition identities.
//!
//! A joint action over `M` dimensions is scored by the ordinary soft
//! Q-function. Fixing every dimension but `m` at its policy turns the problem
//! into a smaller MDP over dimension `m`'s `N` choices whose reward also
//! collects `α` times the other dimensions' entropy. The two Q-functions are
//! then related by
//!
//! ```text
//! E_{π_m}[Q_m(s, ·)] = E_π[Q(s, ·)] + α·H̄_m(s)
//! ```
//!
//! which reduces to plain equality of expectations at `α = 0`. Entropies here
//! are raw (`−Σ π ln π`); both sides share the convention.
//!
//! The remaining checks concern a single state: the gradient of the KL
//! divergence to the Boltzmann target versus the actor loss gradient, and the
//! second-order behaviour of that KL around its minimum.

mod checks;
mod mdp;
mod solver;

pub use checks::{
    boltzmann_kl, boltzmann_variance, check_bridge, check_kl_equivalence, check_variance_limit,
    kl_logit_gradient, BridgeReport,
};
pub use mdp::{TabularMdp, TabularModel, MAX_JOINT_ACTIONS};
pub use solver::{decomposed_soft_q, joint_soft_q, DecomposedView, SoftQSolution, TabularPolicy};
