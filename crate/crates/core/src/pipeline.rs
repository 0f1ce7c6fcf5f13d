//! Method pipelines (extractor -> optional subspace -> metric) and whole
//! experiments over a protocol.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::dataset::{load_manifest, make_protocol, synth_dataset, Protocol, SampleRecord};
use crate::error::{Error, Result};
use crate::evaluation::{cmc, report, EvalReport};
use crate::features::{
    hog_descriptor, intensity_vector, lpq_histogram, ulbp_histogram, DescriptorParams,
    FeatureVector,
};
use crate::fusion::{normalize_with, weighted_fuse, FusionSpec};
use crate::image::{load_image, GrayImage};
use crate::io;
use crate::matching::{score_matrix, LabeledFeature, Metric, ScoreMatrix};
use crate::subspace::{self, Dimension, LabeledTrainingSet, SubspaceModel};

pub use crate::subspace::SubspaceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    Intensity,
    #[serde(rename = "ulbp_8_2")]
    Ulbp8x2,
    #[serde(rename = "ulbp_16_2")]
    Ulbp16x2,
    Lpq,
    Hog,
}

impl Extractor {
    pub const ALL: [Extractor; 5] = [
        Extractor::Intensity,
        Extractor::Ulbp8x2,
        Extractor::Ulbp16x2,
        Extractor::Lpq,
        Extractor::Hog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Extractor::Intensity => "intensity",
            Extractor::Ulbp8x2 => "ulbp_8_2",
            Extractor::Ulbp16x2 => "ulbp_16_2",
            Extractor::Lpq => "lpq",
            Extractor::Hog => "hog",
        }
    }

    pub fn is_histogram(self) -> bool {
        matches!(
            self,
            Extractor::Ulbp8x2 | Extractor::Ulbp16x2 | Extractor::Lpq
        )
    }

    pub fn extract(self, img: &GrayImage, params: &DescriptorParams) -> Result<FeatureVector> {
        let mut f = match self {
            Extractor::Intensity => intensity_vector(img),
            Extractor::Ulbp8x2 => ulbp_histogram(img, 8, 2.0, params.ulbp_grid)?,
            Extractor::Ulbp16x2 => ulbp_histogram(img, 16, 2.0, params.ulbp_grid)?,
            Extractor::Lpq => lpq_histogram(img, params.lpq_window, params.lpq_grid)?,
            Extractor::Hog => hog_descriptor(
                img,
                params.hog_cell,
                params.hog_block_cells,
                params.hog_bins,
            )?,
        };
        f.method = self.as_str().to_string();
        Ok(f)
    }
}

impl fmt::Display for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One named pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub extractor: Extractor,
    pub subspace: Option<SubspaceKind>,
    pub metric: Metric,
}

impl MethodSpec {
    pub fn new(
        name: impl Into<String>,
        extractor: Extractor,
        subspace: Option<SubspaceKind>,
        metric: Metric,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            extractor,
            subspace,
            metric,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Chi-square only for raw histograms; Euclidean after any projection.
    pub fn validate(&self) -> Result<()> {
        let chi_ok = self.subspace.is_none() && self.extractor.is_histogram();
        if (self.metric == Metric::ChiSquare) != chi_ok {
            return Err(Error::Config(format!(
                "method {:?}: chi_square is used exactly for unprojected histogram features",
                self.name
            )));
        }
        if self.subspace.is_none() && !self.extractor.is_histogram() {
            return Err(Error::Config(format!(
                "method {:?}: {} features need a subspace projection",
                self.name, self.extractor
            )));
        }
        Ok(())
    }
}

/// The fourteen pipelines of the results table, in table order.
pub fn builtin_methods() -> Vec<MethodSpec> {
    use Extractor::*;
    use Metric::*;
    use SubspaceKind::*;
    let rows: [(&str, Extractor, Option<SubspaceKind>, Metric); 14] = [
        ("pca", Intensity, Some(Pca), Euclidean),
        ("lda", Intensity, Some(Lda), Euclidean),
        ("dcva", Intensity, Some(Dcva), Euclidean),
        ("ulbp_8_2", Ulbp8x2, None, ChiSquare),
        ("ulbp_16_2", Ulbp16x2, None, ChiSquare),
        ("lpq", Lpq, None, ChiSquare),
        ("hog+lda", Hog, Some(Lda), Euclidean),
        ("hog+dcva", Hog, Some(Dcva), Euclidean),
        ("ulbp_8_2+lda", Ulbp8x2, Some(Lda), Euclidean),
        ("ulbp_16_2+lda", Ulbp16x2, Some(Lda), Euclidean),
        ("ulbp_8_2+dcva", Ulbp8x2, Some(Dcva), Euclidean),
        ("ulbp_16_2+dcva", Ulbp16x2, Some(Dcva), Euclidean),
        ("lpq+lda", Lpq, Some(Lda), Euclidean),
        ("lpq+dcva", Lpq, Some(Dcva), Euclidean),
    ];
    rows.into_iter()
        .map(|(name, e, s, m)| MethodSpec {
            name: name.to_string(),
            extractor: e,
            subspace: s,
            metric: m,
        })
        .collect()
}

pub fn method_by_name(name: &str) -> Option<MethodSpec> {
    builtin_methods().into_iter().find(|m| m.name == name)
}

/// Everything a pipeline needs besides the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub image_width: usize,
    pub image_height: usize,
    pub descriptors: DescriptorParams,
    pub pca_k: Dimension,
    pub lda_k: Dimension,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            image_width: crate::image::PROTOCOL_WIDTH,
            image_height: crate::image::PROTOCOL_HEIGHT,
            descriptors: DescriptorParams::default(),
            pca_k: Dimension::Max,
            lda_k: Dimension::Max,
        }
    }
}

impl PipelineSettings {
    fn dimension_for(&self, kind: SubspaceKind) -> Dimension {
        match kind {
            SubspaceKind::Pca => self.pca_k,
            SubspaceKind::Lda => self.lda_k,
            SubspaceKind::Dcva => Dimension::Max,
        }
    }
}

/// Protocol images, loaded and resampled once.
pub struct ProtocolImages {
    pub training: Vec<GrayImage>,
    pub gallery: Vec<GrayImage>,
    pub probes: Vec<GrayImage>,
}

fn load_all(records: &[SampleRecord], size: (usize, usize)) -> Result<Vec<GrayImage>> {
    records
        .par_iter()
        .map(|r| load_image(&r.image_path, Some(size)))
        .collect()
}

impl ProtocolImages {
    pub fn load(protocol: &Protocol, settings: &PipelineSettings) -> Result<Self> {
        let size = (settings.image_width, settings.image_height);
        Ok(Self {
            training: load_all(&protocol.training, size)?,
            gallery: load_all(&protocol.gallery, size)?,
            probes: load_all(&protocol.probes, size)?,
        })
    }
}

/// Features of one extractor for every protocol image.
pub struct ExtractedSet {
    pub training: Vec<FeatureVector>,
    pub gallery: Vec<FeatureVector>,
    pub probes: Vec<FeatureVector>,
}

fn extract_all(
    extractor: Extractor,
    images: &[GrayImage],
    params: &DescriptorParams,
) -> Result<Vec<FeatureVector>> {
    images
        .par_iter()
        .map(|img| extractor.extract(img, params))
        .collect()
}

impl ExtractedSet {
    pub fn extract(
        extractor: Extractor,
        images: &ProtocolImages,
        params: &DescriptorParams,
        with_training: bool,
    ) -> Result<Self> {
        Ok(Self {
            training: if with_training {
                extract_all(extractor, &images.training, params)?
            } else {
                Vec::new()
            },
            gallery: extract_all(extractor, &images.gallery, params)?,
            probes: extract_all(extractor, &images.probes, params)?,
        })
    }
}

/// Output of one pipeline run.
pub struct MethodRun {
    pub scores: ScoreMatrix,
    pub model: Option<SubspaceModel>,
}

fn labeled(records: &[SampleRecord], features: Vec<FeatureVector>) -> Vec<LabeledFeature> {
    records
        .iter()
        .zip(features)
        .map(|(r, features)| LabeledFeature {
            id: r.id(),
            label: r.subject_id.clone(),
            features,
        })
        .collect()
}

/// Runs `spec` on pre-extracted features. The subspace model sees the
/// training features only.
pub fn run_method_on(
    spec: &MethodSpec,
    protocol: &Protocol,
    features: &ExtractedSet,
    settings: &PipelineSettings,
) -> Result<MethodRun> {
    spec.validate()?;
    let (gallery, probes, model) = match spec.subspace {
        None => (features.gallery.clone(), features.probes.clone(), None),
        Some(kind) => {
            if protocol.training.is_empty() || features.training.is_empty() {
                return Err(Error::Protocol(format!(
                    "training required: method {} fits a {kind} subspace",
                    spec.name
                )));
            }
            let train = LabeledTrainingSet::from_features(
                &features.training,
                protocol
                    .training
                    .iter()
                    .map(|r| r.subject_id.clone())
                    .collect(),
            )?;
            let model = subspace::fit(kind, &train, settings.dimension_for(kind))?;
            let project = |fs: &[FeatureVector]| -> Result<Vec<FeatureVector>> {
                fs.iter().map(|f| model.project(f)).collect()
            };
            (
                project(&features.gallery)?,
                project(&features.probes)?,
                Some(model),
            )
        }
    };
    let mut scores = score_matrix(
        &labeled(&protocol.gallery, gallery),
        &labeled(&protocol.probes, probes),
        spec.metric,
    )?;
    scores.method = spec.name.clone();
    Ok(MethodRun { scores, model })
}

/// Loads the protocol images, extracts features and runs `spec`.
pub fn run_method(
    spec: &MethodSpec,
    protocol: &Protocol,
    settings: &PipelineSettings,
) -> Result<ScoreMatrix> {
    let images = ProtocolImages::load(protocol, settings)?;
    let features = ExtractedSet::extract(
        spec.extractor,
        &images,
        &settings.descriptors,
        spec.subspace.is_some(),
    )?;
    Ok(run_method_on(spec, protocol, &features, settings)?.scores)
}

// ---------------------------------------------------------------------------
// Experiments

/// A fully resolved experiment, ready to execute.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub dataset: DatasetSource,
    pub protocol_seed: u64,
    pub methods: Vec<MethodSpec>,
    pub fusions: Vec<FusionSpec>,
    pub output_dir: PathBuf,
}

impl fmt::Display for ExperimentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.dataset {
            DatasetSource::Manifest(p) => writeln!(f, "dataset: manifest {}", p.display())?,
            DatasetSource::Synth { dir, params } => writeln!(
                f,
                "dataset: synthetic {} subjects x {} samples, {}x{}, noise {}, shift {}, seed {} -> {}",
                params.n_subjects,
                params.n_samples,
                params.width,
                params.height,
                params.noise_sigma,
                params.shift_max,
                params.seed,
                dir.display()
            )?,
        }
        writeln!(f, "protocol seed: {}", self.protocol_seed)?;
        writeln!(f, "methods ({}):", self.methods.len())?;
        for m in &self.methods {
            let sub = m.subspace.map_or("none", SubspaceKind::as_str);
            writeln!(
                f,
                "  {:<16} extractor={} subspace={} metric={}",
                m.name, m.extractor, sub, m.metric
            )?;
        }
        writeln!(f, "fusions ({}):", self.fusions.len())?;
        for fu in &self.fusions {
            let parts: Vec<String> = fu
                .fusion
                .iter()
                .map(|c| format!("{}*{}", c.weight, c.method))
                .collect();
            writeln!(f, "  {:<16} {}", fu.name(), parts.join(" + "))?;
        }
        write!(f, "output: {}", self.output_dir.display())
    }
}

/// Results of an executed experiment, in execution order (methods first,
/// then fusions).
pub struct ExperimentOutcome {
    pub reports: Vec<(String, EvalReport)>,
    pub scores: Vec<(String, ScoreMatrix)>,
}

/// File-name-safe form of a method or fusion name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "+-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn method_record(
    spec: &MethodSpec,
    model: Option<&SubspaceModel>,
    settings: &PipelineSettings,
) -> serde_json::Value {
    json!({
        "extractor": spec.extractor,
        "subspace": spec.subspace,
        "metric": spec.metric,
        "subspace_dim_requested": spec.subspace.map(|k| settings.dimension_for(k)),
        "subspace_dim": model.map(SubspaceModel::output_dim),
        "feature_dim": model.map(SubspaceModel::input_dim),
    })
}

/// Runs every method and fusion of `config`, evaluates them and writes
/// scores, reports, CMC curves, models and the summary table.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let plan = config.plan()?;
    let manifest = match &plan.dataset {
        DatasetSource::Manifest(path) => load_manifest(path)?,
        DatasetSource::Synth { dir, params } => synth_dataset(dir, params)?,
    };
    manifest.check_files()?;
    let p = &config.protocol;
    let protocol = make_protocol(
        &manifest,
        p.ear_side,
        p.n_train_subjects,
        p.n_train_samples,
        p.n_probe_samples,
        plan.protocol_seed,
    )?;
    let settings = config.pipeline_settings();
    let images = ProtocolImages::load(&protocol, &settings)?;

    let mut extractors: Vec<(Extractor, bool)> = Vec::new();
    for m in &plan.methods {
        match extractors.iter_mut().find(|(e, _)| *e == m.extractor) {
            Some((_, train)) => *train |= m.subspace.is_some(),
            None => extractors.push((m.extractor, m.subspace.is_some())),
        }
    }
    let extracted: Vec<(Extractor, ExtractedSet)> = extractors
        .par_iter()
        .map(|&(e, train)| {
            ExtractedSet::extract(e, &images, &settings.descriptors, train).map(|s| (e, s))
        })
        .collect::<Result<_>>()?;
    let features_of = |e: Extractor| &extracted.iter().find(|(x, _)| *x == e).unwrap().1;

    let runs: Vec<MethodRun> = plan
        .methods
        .par_iter()
        .map(|m| run_method_on(m, &protocol, features_of(m.extractor), &settings))
        .collect::<Result<_>>()?;

    let shared = json!({
        "dataset": plan.dataset.record(),
        "protocol": {
            "ear_side": p.ear_side,
            "n_train_subjects": p.n_train_subjects,
            "n_train_samples": p.n_train_samples,
            "n_probe_samples": p.n_probe_samples,
            "seed": plan.protocol_seed,
            "gallery_rule": "lowest sample_index per subject",
            "training_pool": "all subjects (overlap with gallery permitted)",
            "training_subjects": protocol.training_subjects(),
            "n_training": protocol.training.len(),
            "n_gallery": protocol.gallery.len(),
            "n_probes": protocol.probes.len(),
        },
        "image_size": [settings.image_width, settings.image_height],
        "descriptors": settings.descriptors,
        "ranking": "ascending distance, ties by gallery column index",
        "eer_rule": "mean of FAR and FRR at the threshold minimising |FAR - FRR|",
    });

    let mut reports = Vec::new();
    let mut scores = Vec::new();
    let out = &plan.output_dir;
    for (spec, run) in plan.methods.iter().zip(runs) {
        let mut record = shared.clone();
        record["method"] = method_record(spec, run.model.as_ref(), &settings);
        let r = report(&run.scores, record)?;
        if let Some(model) = &run.model {
            subspace::save_model(
                model,
                out.join("models")
                    .join(format!("{}.csv", file_stem(&spec.name))),
            )?;
        }
        reports.push((spec.name.clone(), r));
        scores.push((spec.name.clone(), run.scores));
    }

    for fusion in &plan.fusions {
        let normalized: Vec<(ScoreMatrix, f64)> = fusion
            .fusion
            .iter()
            .map(|c| {
                let (_, s) = scores.iter().find(|(n, _)| *n == c.method).ok_or_else(|| {
                    Error::Config(format!(
                        "fusion {:?} references method {:?}, which is not part of the experiment",
                        fusion.name(),
                        c.method
                    ))
                })?;
                Ok((normalize_with(s, config.normalization), c.weight))
            })
            .collect::<Result<_>>()?;
        let refs: Vec<(&ScoreMatrix, f64)> = normalized.iter().map(|(s, w)| (s, *w)).collect();
        let fused = weighted_fuse(&refs)?;
        let mut record = shared.clone();
        record["fusion"] = json!({
            "components": fusion.fusion,
            "normalization": config.normalization,
        });
        let r = report(&fused, record)?;
        reports.push((fusion.name(), r));
        scores.push((fusion.name(), fused));
    }

    for ((name, r), (_, s)) in reports.iter().zip(&scores) {
        let stem = file_stem(name);
        io::write_scores(s, &out.join("scores").join(format!("{stem}.csv")))?;
        io::write_report(r, &out.join("reports").join(format!("{stem}.json")))?;
        io::write_atomic(
            &out.join("cmc").join(format!("{stem}.csv")),
            io::encode_cmc(&cmc(s)?).as_bytes(),
        )?;
    }
    io::write_atomic(
        &out.join("reports").join("summary.csv"),
        io::encode_summary(&reports).as_bytes(),
    )?;
    Ok(ExperimentOutcome { reports, scores })
}

/// Fixed-width results table: rank-1..5, perfect rank and EER per row.
pub fn format_summary_table(reports: &[(String, EvalReport)]) -> String {
    let mut out = format!(
        "{:<4} {:<28} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "#", "method", "rank-1", "rank-2", "rank-3", "rank-4", "rank-5", "perfect", "eer"
    );
    for (i, (name, r)) in reports.iter().enumerate() {
        out.push_str(&format!("{:<4} {:<28}", i + 1, name));
        for v in &r.rank_rates_pct {
            out.push_str(&format!(" {v:>8.2}"));
        }
        out.push_str(&format!(" {:>8} {:>8.2}\n", r.perfect_rank, r.eer_pct));
    }
    out
}

pub fn output_paths(output_dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    let stem = file_stem(name);
    (
        output_dir.join("scores").join(format!("{stem}.csv")),
        output_dir.join("reports").join(format!("{stem}.json")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourteen_builtin_methods() {
        let methods = builtin_methods();
        assert_eq!(methods.len(), 14);
        let row7 = &methods[6];
        assert_eq!(row7.name, "hog+lda");
        assert_eq!(row7.extractor, Extractor::Hog);
        assert_eq!(row7.subspace, Some(SubspaceKind::Lda));
        assert_eq!(row7.metric, Metric::Euclidean);
        for m in &methods[3..6] {
            assert_eq!(m.metric, Metric::ChiSquare);
            assert!(m.subspace.is_none());
        }
        for m in &methods {
            m.validate().unwrap();
        }
    }

    #[test]
    fn metric_rule_enforced() {
        assert!(MethodSpec::new(
            "x",
            Extractor::Hog,
            Some(SubspaceKind::Lda),
            Metric::ChiSquare
        )
        .is_err());
        assert!(MethodSpec::new("x", Extractor::Lpq, None, Metric::Euclidean).is_err());
        assert!(MethodSpec::new("x", Extractor::Intensity, None, Metric::Euclidean).is_err());
        assert!(MethodSpec::new("x", Extractor::Lpq, None, Metric::ChiSquare).is_ok());
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("hog+dcva"), "hog+dcva");
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
