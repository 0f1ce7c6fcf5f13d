//! Ear identification toolkit.
//!
//! The crate covers the whole identification chain: loading and splitting
//! ear-image collections ([`dataset`]), texture and intensity descriptors
//! ([`features`]), learned linear projections ([`subspace`]), distance
//! matching ([`matching`]), score-level fusion ([`fusion`]) and CMC / perfect
//! rank / EER evaluation ([`evaluation`]). [`pipeline`] wires these into the
//! fourteen named method pipelines and runs whole experiments described by a
//! [`config::ExperimentConfig`].

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod image;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod subspace;

mod linalg;

pub use crate::config::ExperimentConfig;
pub use crate::dataset::{DatasetManifest, EarSide, Protocol, SampleRecord};
pub use crate::error::{Error, Result};
pub use crate::evaluation::{CmcCurve, EvalReport};
pub use crate::features::{FeatureVector, GridSpec};
pub use crate::fusion::{FusionSpec, NormalizationScope};
pub use crate::image::GrayImage;
pub use crate::matching::{Metric, ScoreMatrix};
pub use crate::pipeline::{Extractor, MethodSpec, SubspaceKind};
pub use crate::subspace::{Dimension, LabeledTrainingSet, SubspaceModel};
