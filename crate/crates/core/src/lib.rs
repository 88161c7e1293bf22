//! Sparse variational latent-variable Gaussian processes for mixed
//! quantitative/categorical inputs and multiple outputs.

pub mod artifact;
pub mod bench;
pub mod error;
pub mod exact_gp;
pub mod io;
pub mod kernels;
pub mod latent_map;
pub mod lmc;
pub mod numerics;
pub mod params;
pub mod prediction;
pub mod svgp;
pub mod training;

pub use error::{Error, Result};
pub use exact_gp::{ExactConfig, ExactModel};
pub use kernels::KernelParams;
pub use latent_map::{Dataset, LatentMap, LatentStructure, MixedPoint, MixedSchema, Normalization, NormalizedData};
pub use lmc::{LmcModel, LmcOptions};
pub use numerics::{CholFactor, SeededRng};
pub use prediction::{PointPredictions, Prediction};
pub use svgp::{InducingSet, SVModel, VariationalGaussian};
pub use training::{FitSpec, FittedModel, ModelFamily, TrainConfig, TrainingTrace};
