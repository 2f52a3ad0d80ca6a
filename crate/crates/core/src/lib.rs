//! Marginally fair decision rules for generalized distortion risk measures.
//!
//! The crate computes differential sensitivities of risk-based decisions
//! `ρ_γ(Y | X)` to protected attributes, builds the unique fairness-adjusted
//! weight function `γ*`, and ships independent Monte Carlo validators.
//!
//! It is `no_std` and only needs `alloc`; file formats, configuration and the
//! command line live in the companion `fairrisk` crate.
//!
//! Module map:
//!
//! * [`distortion`]: weight functions, weighted empirical distributions,
//!   exact evaluation of `∫ F⁻¹(u) γ(u) du` and the EV + margin decomposition.
//! * [`predictors`]: linear and GLM prediction functions `g(D, X)` with
//!   derivatives and discrete differences, IRLS and first-order fitting.
//! * [`conditional`]: conditional laws and estimators of `E[D | X]`,
//!   `E[D² | X]`, class probabilities, cross and squared terms, tail models.
//! * [`perturbation`]: the perturbation schemes for unbounded, compact and
//!   discrete protected attributes, and cascade (inverse Rosenblatt) propagation.
//! * [`sensitivity`]: marginal and cascade sensitivities on simulated
//!   conditional samples or in closed form.
//! * [`fairness`]: single and multi-attribute fair rules, fair weights, the
//!   four comparison strategies, closed forms for the Gaussian-linear model.
//! * [`oracle`]: central finite-difference sensitivities with jackknife errors,
//!   closed-form special cases and a long-run deviance minimizer.
//! * [`pipeline`]: the simulation study, the synthetic portfolio generator and
//!   the audit computations (Gini, quantile bins, summaries).
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod conditional;
pub mod distortion;
pub mod error;
pub mod fairness;
pub mod linalg;
pub mod oracle;
pub mod perturbation;
pub mod pipeline;
pub mod predictors;
pub mod sampling;
pub mod sensitivity;
pub mod special;

pub use error::{Error, Result};
