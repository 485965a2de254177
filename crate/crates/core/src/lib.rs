//! Grid-agnostic HRTF magnitude modeling.
//!
//! A sine-activated network conditioned on a per-ear latent code maps a
//! direction to a log-magnitude spectrum. Latents are found by a single
//! gradient step from the origin, so any set of measured directions, on any
//! grid, can condition the model.

pub mod adam;
pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradients;
pub mod igon;
pub mod preprocess;
pub mod siren;
pub mod synth;

pub use data::{DatasetArchive, Direction, Ear, MagnitudeField, Stage, SubjectEar};
pub use error::{Error, Result};
pub use gradients::GradMode;
pub use igon::{EarRows, LatentCode, ModelShape, Precision, TrainConfig, Trainer};
pub use preprocess::{FrequencyGrid, NormalizationScope, PreprocessOptions};
pub use siren::{LatentGenerator, SirenNetwork};
