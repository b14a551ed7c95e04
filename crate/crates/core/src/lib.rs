//! Exposure-driven Bayesian dose optimization.
//!
//! The crate chains a dose-to-exposure population PK model with three
//! exposure-response models (toxicity, pharmacodynamic activity, efficacy),
//! marginalizes them over the exposure distribution of each candidate
//! regimen, scores regimens with a piecewise gain function and recommends a
//! regimen by maximum gain (MGD-x%) or by posterior probability of being the
//! maximum-gain regimen (OD-x%). Dose escalation uses a two-parameter
//! Bayesian logistic model with overdose control, and the `sim` module
//! replays whole trials to estimate operating characteristics.
//!
//! See the guide in `book/` for a walk-through.

pub mod config;
pub mod error;
pub mod escalation;
pub mod exposure;
pub mod io;
pub mod optim;
pub mod pk;
pub mod prior;
pub mod rng;
pub mod sampler;
pub mod sim;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/pk.md")]
    mod pk {}
    #[doc = include_str!("../../../book/src/exposure_response.md")]
    mod exposure_response {}
    #[doc = include_str!("../../../book/src/gain.md")]
    mod gain {}
    #[doc = include_str!("../../../book/src/escalation.md")]
    mod escalation {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
