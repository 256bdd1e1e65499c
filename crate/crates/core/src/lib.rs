//! Canopy height estimation from tomographic SAR intensity cubes.
//!
//! The crate covers the whole experimental pipeline: synthetic scenes and
//! binary formats, geographic train/val/test splits, tabular baselines, 3D
//! U-Net regressors with z-collapse heads, an Adam training loop with early
//! stopping, Bayesian hyperparameter search, and full-scene reconstruction.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common choices.

pub mod domain;
pub mod error;
pub mod fileio;
pub mod geosplit;
pub mod hpo;
pub mod metrics;
pub mod recon;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod tabular;
pub mod trainer;
pub mod volnet;

pub use domain::{
    band_registry, validate_cube, BandId, BandMeta, CanopyHeightMap, MetricsReport, PolSet,
    Polarization, SplitAssignment, SplitLabel, TomoCube,
};
pub use error::{Error, ErrorClass, Result};
pub use fileio::AlignedScene;
pub use scalar::Scalar;

/// Single-precision network, as trained and checkpointed.
pub type Model = volnet::VolNet<f32>;
/// Double-precision network, for gradient checks.
pub type Model64 = volnet::VolNet<f64>;
pub type Scaler = metrics::MinMaxScaler<f32>;
pub type Batch = volnet::Tensor<f32>;
