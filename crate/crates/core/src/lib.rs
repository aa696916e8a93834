//! Desk-scale laboratory for the memorization/quality trade-off of
//! diffusion models trained partly on noisy data.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`schedule`] | variance-preserving noise schedule and bridges between noise levels |
//! | [`data`] | point sets with provenance, toy mixtures, normalization |
//! | [`scores`] | closed-form empirical, ambient and Gaussian scores; Tweedie and v-prediction conversions |
//! | [`sampler`] | deterministic probability-flow sampler (Heun) |
//! | [`nn`], [`trainer`] | small denoiser network, DDPM / ambient losses, hybrid training loop, checkpoints |
//! | [`metrics`] | nearest-neighbour memorization, Gaussian Fréchet distance, exact W2, Pareto fronts |
//! | [`infotheory`] | information leakage of noisy training sets |
//! | [`subpop`] | subpopulation frequency priors, `τ_ℓ` coefficients, error decomposition |
//! | [`gmmnoise`] | total variation of identity-covariance Gaussians under noise |

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gmmnoise;
pub mod infotheory;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod scores;
pub mod subpop;
pub mod trainer;

pub use data::{Normalizer, Provenance, RingMixture, SampleSet};
pub use error::{Error, Result};
pub use schedule::NoiseSchedule;
pub use scores::ScoreField;
