// NaN must fail validation, which `!(x > 0)` does and `x <= 0` does not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod classifier;
pub mod equalizer;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod rng;
pub mod scalar;
pub mod security;
pub mod signal;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases used by the command-line tool and reports.
pub type ExperimentConfigF64 = experiment::ExperimentConfig<f64>;
pub type RunRecordF64 = experiment::RunRecord<f64>;
pub type EqualizerModelF64 = equalizer::EqualizerModel<f64>;
pub type EqualizerModelF32 = equalizer::EqualizerModel<f32>;
pub type SubChannelEstimateF64 = estimation::SubChannelEstimate<f64>;
pub type CovarianceMatrixF64 = security::CovarianceMatrix<f64>;
pub type PulseSamplesF64 = signal::PulseSamples<f64>;
pub type PulseSamplesF32 = signal::PulseSamples<f32>;
