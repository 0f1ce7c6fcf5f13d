//! Experiment description (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "out/table1"
//! methods = "table1"            # or a list: ["hog+lda", "lpq"]
//! normalization = "global"      # or "per_row"
//!
//! [dataset.synth]               # or: [dataset] manifest = "data/manifest.csv"
//! dir = "data/synth"
//! subjects = 20
//! samples = 15
//!
//! [protocol]
//! ear_side = "left"
//! n_train_subjects = 10
//! n_train_samples = 7
//! n_probe_samples = 7
//!
//! [[fusions]]
//! name = "8+9"
//! fusion = [{ method = "hog+dcva", weight = 0.75 }, { method = "ulbp_8_2+lda", weight = 0.25 }]
//! ```
//!
//! Relative paths are taken relative to the working directory. All
//! randomness derives from `seed`: the synthetic dataset uses `seed`, the
//! protocol split `seed + 1`, unless overridden in their own tables.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{EarSide, SynthParams};
use crate::error::{Error, Result};
use crate::features::DescriptorParams;
use crate::fusion::{FusionSpec, NormalizationScope};
use crate::image::{PROTOCOL_HEIGHT, PROTOCOL_WIDTH};
use crate::pipeline::{
    builtin_methods, method_by_name, ExperimentPlan, MethodSpec, PipelineSettings,
};
use crate::subspace::Dimension;

pub const PROTOCOL_SEED_OFFSET: u64 = 1;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub methods: MethodSelection,
    #[serde(default)]
    pub normalization: NormalizationScope,
    pub dataset: DatasetConfig,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub features: DescriptorParams,
    #[serde(default)]
    pub subspace: SubspaceConfig,
    #[serde(default)]
    pub fusions: Vec<FusionSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum MethodSelection {
    /// `"table1"`: all fourteen built-in pipelines.
    Preset(String),
    Names(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    #[serde(default = "default_width")]
    pub image_width: usize,
    #[serde(default = "default_height")]
    pub image_height: usize,
}

fn default_width() -> usize {
    PROTOCOL_WIDTH
}

fn default_height() -> usize {
    PROTOCOL_HEIGHT
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dir: PathBuf,
    pub subjects: usize,
    pub samples: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_shift")]
    pub shift_max: u32,
    pub seed: Option<u64>,
}

fn default_noise() -> f64 {
    SynthParams::default().noise_sigma
}

fn default_shift() -> u32 {
    SynthParams::default().shift_max
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default = "default_side")]
    pub ear_side: EarSide,
    pub n_train_subjects: usize,
    pub n_train_samples: usize,
    pub n_probe_samples: usize,
    pub seed: Option<u64>,
}

fn default_side() -> EarSide {
    EarSide::Left
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceConfig {
    pub pca_k: Dimension,
    pub lda_k: Dimension,
}

/// Where the images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Manifest(PathBuf),
    Synth { dir: PathBuf, params: SynthParams },
}

impl DatasetSource {
    pub fn record(&self) -> serde_json::Value {
        match self {
            DatasetSource::Manifest(p) => json!({ "manifest": p.display().to_string() }),
            DatasetSource::Synth { params, .. } => json!({ "synth": params }),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => config_err(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn resolve_methods(&self) -> Result<Vec<MethodSpec>> {
        let methods = match &self.methods {
            MethodSelection::Preset(p) if p == "table1" => builtin_methods(),
            MethodSelection::Preset(p) => {
                return Err(config_err(format!(
                    "unknown method preset {p:?} (expected \"table1\" or a list of method names)"
                )))
            }
            MethodSelection::Names(names) => {
                if names.is_empty() {
                    return Err(config_err("methods list is empty"));
                }
                let mut seen = HashSet::new();
                names
                    .iter()
                    .map(|n| {
                        if !seen.insert(n.as_str()) {
                            return Err(config_err(format!("method {n:?} listed twice")));
                        }
                        method_by_name(n).ok_or_else(|| config_err(format!("unknown method {n:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(methods)
    }

    pub fn dataset_source(&self) -> Result<DatasetSource> {
        match (&self.dataset.manifest, &self.dataset.synth) {
            (Some(p), None) => Ok(DatasetSource::Manifest(p.clone())),
            (None, Some(s)) => Ok(DatasetSource::Synth {
                dir: s.dir.clone(),
                params: SynthParams {
                    n_subjects: s.subjects,
                    n_samples: s.samples,
                    width: s.width,
                    height: s.height,
                    noise_sigma: s.noise_sigma,
                    shift_max: s.shift_max,
                    seed: s.seed.unwrap_or(self.seed),
                },
            }),
            (Some(_), Some(_)) => Err(config_err(
                "dataset: give either `manifest` or a [dataset.synth] table, not both",
            )),
            (None, None) => Err(config_err(
                "dataset: a `manifest` path or a [dataset.synth] table is required",
            )),
        }
    }

    pub fn protocol_seed(&self) -> u64 {
        self.protocol
            .seed
            .unwrap_or_else(|| self.seed.wrapping_add(PROTOCOL_SEED_OFFSET))
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        PipelineSettings {
            image_width: self.dataset.image_width,
            image_height: self.dataset.image_height,
            descriptors: self.features.clone(),
            pca_k: self.subspace.pca_k,
            lda_k: self.subspace.lda_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Resolves methods, fusions, dataset and seeds without executing.
    pub fn plan(&self) -> Result<ExperimentPlan> {
        let dataset = self.dataset_source()?;
        if let DatasetSource::Synth { params, .. } = &dataset {
            if params.n_subjects < 2 || params.n_samples < 2 {
                return Err(config_err(
                    "dataset.synth: needs at least 2 subjects and 2 samples",
                ));
            }
            if params.noise_sigma.is_nan() || params.noise_sigma < 0.0 {
                return Err(config_err("dataset.synth: noise_sigma must be >= 0"));
            }
        }
        if self.dataset.image_width == 0 || self.dataset.image_height == 0 {
            return Err(config_err("dataset: image size must be non-zero"));
        }
        let f = &self.features;
        f.ulbp_grid
            .validate()
            .map_err(|e| config_err(format!("features: {e}")))?;
        f.lpq_grid
            .validate()
            .map_err(|e| config_err(format!("features: {e}")))?;
        if f.lpq_window < 3 || f.lpq_window.is_multiple_of(2) {
            return Err(config_err("features: lpq_window must be odd and >= 3"));
        }
        if f.hog_cell < 2 || f.hog_block_cells < 1 || f.hog_bins < 2 {
            return Err(config_err("features: invalid HOG geometry"));
        }

        let methods = self.resolve_methods()?;
        let mut names: HashSet<String> = methods.iter().map(|m| m.name.clone()).collect();
        for fusion in &self.fusions {
            fusion.validate().map_err(|e| config_err(e.to_string()))?;
            for c in &fusion.fusion {
                if !methods.iter().any(|m| m.name == c.method) {
                    return Err(config_err(format!(
                        "fusion {:?} references method {:?}, which is not run in this experiment",
                        fusion.name(),
                        c.method
                    )));
                }
            }
            if !names.insert(fusion.name()) {
                return Err(config_err(format!(
                    "fusion name {:?} collides with another method or fusion",
                    fusion.name()
                )));
            }
        }
        Ok(ExperimentPlan {
            dataset,
            protocol_seed: self.protocol_seed(),
            methods,
            fusions: self.fusions.clone(),
            output_dir: self.output_dir.clone(),
        })
    }
}
