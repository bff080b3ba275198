//! Bayesian evidence from existing posterior draws via the learned harmonic
//! mean estimator, and cheap prior sensitivity analysis by importance
//! resampling those draws.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

pub mod diagnostics;
pub mod error;
pub mod evidence;
pub mod experiment;
pub mod math;
pub mod model;
pub mod oracles;
pub mod sampler;
pub mod samples;
pub mod scalar;
pub mod sensitivity;
pub mod target;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ChainSet64 = samples::ChainSet<f64>;
pub type ChainSet32 = samples::ChainSet<f32>;
pub type Prior64 = model::Prior<f64>;
pub type PriorSpec64 = model::PriorSpec<f64>;
pub type ToyLikelihood64 = model::ToyLikelihood<f64>;
pub type ImportanceWeights64 = diagnostics::ImportanceWeights<f64>;
pub type LearnedTarget64 = target::LearnedTarget<f64>;
pub type EvidenceEstimate64 = evidence::EvidenceEstimate<f64>;
pub type SensitivityReport64 = sensitivity::SensitivityReport<f64>;
