//! Learned linear projections: PCA (eigenfaces), Fisherfaces LDA and
//! discriminative common vectors (DCVA).
//!
//! Every model stores a mean and a `D x k` basis with orthonormal columns;
//! projection is `basis^T (v - mean)`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::linalg::{columns_to_matrix, gram_schmidt, project_out, sign_fix, symmetric_eigen_desc};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Relative drop tolerance for Gram-Schmidt orthonormalisation.
pub const GRAM_SCHMIDT_TOL: f64 = 1e-10;
/// Within-class scatter regulariser, as a fraction of its mean eigenvalue.
pub const SCATTER_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubspaceKind {
    Pca,
    Lda,
    Dcva,
}

impl SubspaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubspaceKind::Pca => "pca",
            SubspaceKind::Lda => "lda",
            SubspaceKind::Dcva => "dcva",
        }
    }
}

impl fmt::Display for SubspaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubspaceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pca" => Ok(SubspaceKind::Pca),
            "lda" => Ok(SubspaceKind::Lda),
            "dcva" => Ok(SubspaceKind::Dcva),
            other => Err(format!("unknown subspace kind {other:?}")),
        }
    }
}

/// Requested output dimension: an explicit count or the maximum allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dimension {
    #[default]
    Max,
    Count(usize),
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimension::Max => f.write_str("max"),
            Dimension::Count(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for Dimension {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Dimension::Max => s.serialize_str("max"),
            Dimension::Count(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Dimension {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("dimension must be >= 1")),
            Raw::Count(k) => Ok(Dimension::Count(k as usize)),
            Raw::Word(w) if w == "max" => Ok(Dimension::Max),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "dimension must be a positive integer or \"max\", got {w:?}"
            ))),
        }
    }
}

/// Training vectors with class labels.
#[derive(Debug, Clone)]
pub struct LabeledTrainingSet {
    vectors: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl LabeledTrainingSet {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::Subspace(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        if vectors.len() < 2 {
            return Err(Error::Subspace(format!(
                "need at least 2 training vectors, got {}",
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::Subspace("empty training vectors".into()));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        Ok(Self { vectors, labels })
    }

    pub fn from_features(features: &[FeatureVector], labels: Vec<String>) -> Result<Self> {
        Self::new(features.iter().map(|f| f.values.clone()).collect(), labels)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Sample indices grouped by class, classes in order of first appearance.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, label) in self.labels.iter().enumerate() {
            let slot = *index.entry(label).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(i);
        }
        groups
    }

    fn column(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.vectors[i])
    }

    fn max_norm(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    fn check_discriminant(&self, what: &str) -> Result<Vec<Vec<usize>>> {
        let classes = self.classes();
        if classes.len() < 2 {
            return Err(Error::Subspace(format!(
                "{what} needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        if let Some(small) = classes.iter().find(|c| c.len() < 2) {
            return Err(Error::Subspace(format!(
                "{what}: class {:?} has fewer than 2 samples",
                self.labels[small[0]]
            )));
        }
        Ok(classes)
    }
}

/// A learned projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub kind: SubspaceKind,
    pub mean: Vec<f64>,
    /// `D x k`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// PCA: covariance eigenvalues of the kept components. LDA: Fisher
    /// criterion eigenvalues. DCVA: empty.
    pub spectrum: Vec<f64>,
}

impl SubspaceModel {
    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `basis^T (v - mean)`.
    pub fn project_values(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: v.len(),
            });
        }
        let centered =
            DVector::from_iterator(v.len(), v.iter().zip(&self.mean).map(|(a, m)| a - m));
        Ok(self.basis.tr_mul(&centered).as_slice().to_vec())
    }

    /// Projects a feature vector; the method tag gains `+{kind}`.
    pub fn project(&self, v: &FeatureVector) -> Result<FeatureVector> {
        Ok(FeatureVector::new(
            format!("{}+{}", v.method, self.kind),
            self.project_values(&v.values)?,
        ))
    }

    /// Largest absolute entry of `basis^T basis - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.basis.tr_mul(&self.basis);
        let k = gram.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

fn mean_of(train: &LabeledTrainingSet) -> Vec<f64> {
    let n = train.len() as f64;
    let mut mean = vec![0.0; train.dim()];
    for v in train.vectors() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Principal component analysis.
///
/// With fewer samples than dimensions the eigenvectors are recovered from the
/// `N x N` Gram matrix of the centred data (snapshot method); otherwise the
/// `D x D` covariance is decomposed directly.
pub fn fit_pca(train: &LabeledTrainingSet, k: Dimension) -> Result<SubspaceModel> {
    let n = train.len();
    let d = train.dim();
    let mean = mean_of(train);
    let mut centered = DMatrix::zeros(n, d);
    for (i, v) in train.vectors().iter().enumerate() {
        for j in 0..d {
            centered[(i, j)] = v[j] - mean[j];
        }
    }
    let denom = (n - 1) as f64;

    let (values, columns): (Vec<f64>, Vec<DVector<f64>>) = if n < d {
        let gram = (&centered * centered.transpose()) / denom;
        let (vals, vecs) = symmetric_eigen_desc(gram);
        let rank = effective_rank(&vals);
        let cols = (0..rank)
            .map(|i| {
                let mut v = centered.tr_mul(&vecs.column(i)) / (denom * vals[i]).sqrt();
                sign_fix(&mut v);
                v
            })
            .collect::<Vec<_>>();
        // tighten orthonormality of the recovered vectors; order and
        // direction are kept
        let cols = gram_schmidt(cols, 0.0, 1.0);
        (vals[..cols.len()].to_vec(), cols)
    } else {
        let cov = centered.tr_mul(&centered) / denom;
        let (vals, vecs) = symmetric_eigen_desc(cov);
        let rank = effective_rank(&vals);
        (
            vals[..rank].to_vec(),
            (0..rank).map(|i| vecs.column(i).into_owned()).collect(),
        )
    };

    let rank = columns.len();
    if rank == 0 {
        return Err(Error::Subspace(
            "training data has effective rank 0 (all vectors identical)".into(),
        ));
    }
    let k = match k {
        Dimension::Max => rank,
        Dimension::Count(k) if k >= 1 && k <= rank => k,
        Dimension::Count(k) => {
            return Err(Error::Subspace(format!(
                "requested {k} PCA components but effective rank is {rank}"
            )))
        }
    };
    let mut columns = columns;
    columns.truncate(k);
    columns.iter_mut().for_each(sign_fix);
    Ok(SubspaceModel {
        kind: SubspaceKind::Pca,
        mean,
        basis: columns_to_matrix(d, &columns),
        spectrum: values[..k].to_vec(),
    })
}

fn effective_rank(desc_values: &[f64]) -> usize {
    match desc_values.first() {
        Some(&top) if top > 0.0 => desc_values
            .iter()
            .take_while(|&&v| v >= RANK_TOL * top)
            .count(),
        _ => 0,
    }
}

/// Fisherfaces LDA: PCA to `min(N - C, rank)` dimensions, then the Fisher
/// criterion solved as a symmetric-definite generalised eigenproblem in that
/// space. The composed map is re-orthonormalised in the input space.
pub fn fit_lda(train: &LabeledTrainingSet, k: Dimension) -> Result<SubspaceModel> {
    let classes = train.check_discriminant("LDA")?;
    let n = train.len();
    let c = classes.len();
    if n <= c {
        return Err(Error::Subspace(format!(
            "LDA needs more samples than classes ({n} samples, {c} classes)"
        )));
    }
    let full = fit_pca(train, Dimension::Max)?;
    let m = (n - c).min(full.output_dim());
    let pca = SubspaceModel {
        basis: full.basis.columns(0, m).into_owned(),
        spectrum: full.spectrum[..m].to_vec(),
        ..full
    };

    let projected: Vec<DVector<f64>> = train
        .vectors()
        .iter()
        .map(|v| pca.project_values(v).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    let global = projected.iter().fold(DVector::zeros(m), |acc, y| acc + y) / n as f64;
    let mut within = DMatrix::zeros(m, m);
    let mut between = DMatrix::zeros(m, m);
    for members in &classes {
        let mean = members
            .iter()
            .fold(DVector::zeros(m), |acc, &i| acc + &projected[i])
            / members.len() as f64;
        for &i in members {
            let d = &projected[i] - &mean;
            within.ger(1.0, &d, &d, 1.0);
        }
        let d = &mean - &global;
        between.ger(members.len() as f64, &d, &d, 1.0);
    }
    let trace = within.trace();
    let ridge = if trace > 0.0 {
        SCATTER_RIDGE * trace / m as f64
    } else {
        SCATTER_RIDGE * between.trace().max(f64::MIN_POSITIVE) / m as f64
    };
    for i in 0..m {
        within[(i, i)] += ridge;
    }
    let chol = within
        .cholesky()
        .ok_or_else(|| Error::Subspace("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    // M = L^-1 S_b L^-T
    let l_inv_sb = l
        .solve_lower_triangular(&between)
        .ok_or_else(|| Error::Subspace("singular Cholesky factor".into()))?;
    let mut reduced = l
        .solve_lower_triangular(&l_inv_sb.transpose())
        .ok_or_else(|| Error::Subspace("singular Cholesky factor".into()))?;
    reduced = (&reduced + reduced.transpose()) * 0.5;
    let (fisher, vecs) = symmetric_eigen_desc(reduced);

    let keep = match k {
        Dimension::Max => c - 1,
        Dimension::Count(k) => k.min(c - 1),
    }
    .min(m);
    // generalized eigenvectors w = L^-T y
    let lt = l.transpose();
    let mut directions = Vec::with_capacity(keep);
    for i in 0..keep {
        let w = lt
            .solve_upper_triangular(&vecs.column(i).into_owned())
            .ok_or_else(|| Error::Subspace("singular Cholesky factor".into()))?;
        directions.push(&pca.basis * w);
    }
    let scale = directions.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut columns = gram_schmidt(directions, GRAM_SCHMIDT_TOL, scale);
    if columns.is_empty() {
        return Err(Error::Subspace("no discriminant direction found".into()));
    }
    columns.iter_mut().for_each(sign_fix);
    let kept = columns.len();
    Ok(SubspaceModel {
        kind: SubspaceKind::Lda,
        mean: pca.mean,
        basis: columns_to_matrix(train.dim(), &columns),
        spectrum: fisher[..kept].to_vec(),
    })
}

/// Discriminative common vectors.
///
/// The within-class difference vectors span the range of the within-class
/// scatter; removing that span from one sample per class leaves the class's
/// common vector. The basis spans the differences between common vectors, so
/// every training sample of a class projects to the same point.
pub fn fit_dcva(train: &LabeledTrainingSet) -> Result<SubspaceModel> {
    let classes = train.check_discriminant("DCVA")?;
    let n = train.len();
    if n <= classes.len() {
        return Err(Error::Subspace("DCVA needs N - C >= 1".into()));
    }
    let d = train.dim();
    let scale = train.max_norm();
    let anchors: Vec<DVector<f64>> = classes.iter().map(|c| train.column(c[0])).collect();

    let differences = classes
        .iter()
        .zip(&anchors)
        .flat_map(|(members, anchor)| members[1..].iter().map(move |&j| train.column(j) - anchor));
    let within_span = gram_schmidt(differences, GRAM_SCHMIDT_TOL, scale);

    let common: Vec<DVector<f64>> = anchors
        .into_iter()
        .map(|mut a| {
            project_out(&mut a, &within_span);
            a
        })
        .collect();
    let first = common[0].clone();
    let mut columns = gram_schmidt(
        common[1..].iter().map(|cv| cv - &first),
        GRAM_SCHMIDT_TOL,
        scale,
    );
    if columns.is_empty() {
        return Err(Error::Subspace(
            "all common vectors are identical; no discriminative subspace".into(),
        ));
    }
    columns.iter_mut().for_each(sign_fix);
    Ok(SubspaceModel {
        kind: SubspaceKind::Dcva,
        mean: vec![0.0; d],
        basis: columns_to_matrix(d, &columns),
        spectrum: Vec::new(),
    })
}

pub fn fit(kind: SubspaceKind, train: &LabeledTrainingSet, k: Dimension) -> Result<SubspaceModel> {
    match kind {
        SubspaceKind::Pca => fit_pca(train, k),
        SubspaceKind::Lda => fit_lda(train, k),
        SubspaceKind::Dcva => fit_dcva(train),
    }
}

// ---------------------------------------------------------------------------
// Persistence

const MODEL_MAGIC: &str = "earlir-subspace";
const MODEL_VERSION: u32 = 1;

fn join_values(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:.17e}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Serialises a model as a small CSV container: one `key,values...` line per
/// field, basis in column-major order.
pub fn encode_model(model: &SubspaceModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("{MODEL_MAGIC},{MODEL_VERSION}\n"));
    out.push_str(&format!("kind,{}\n", model.kind));
    out.push_str(&format!("dim,{}\n", model.input_dim()));
    out.push_str(&format!("k,{}\n", model.output_dim()));
    out.push_str(&format!(
        "mean,{}\n",
        join_values(model.mean.iter().copied())
    ));
    out.push_str(&format!(
        "basis,{}\n",
        join_values(model.basis.iter().copied())
    ));
    out.push_str(&format!(
        "spectrum,{}\n",
        join_values(model.spectrum.iter().copied())
    ));
    out
}

pub fn decode_model(text: &str) -> Result<SubspaceModel, String> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty model file")?;
    match header.split_once(',') {
        Some((MODEL_MAGIC, v)) if v.trim() == MODEL_VERSION.to_string() => {}
        Some((MODEL_MAGIC, v)) => return Err(format!("unsupported model version {v}")),
        _ => return Err("not a subspace model file".into()),
    }
    for line in lines.filter(|l| !l.is_empty()) {
        let (key, rest) = line.split_once(',').unwrap_or((line, ""));
        fields.insert(key, rest);
    }
    let get = |k: &str| fields.get(k).copied().ok_or(format!("missing field {k}"));
    let parse_list = |s: &str| -> Result<Vec<f64>, String> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| format!("bad number {v:?}: {e}"))
            })
            .collect()
    };
    let kind: SubspaceKind = get("kind")?.parse()?;
    let dim: usize = get("dim")?.parse().map_err(|e| format!("dim: {e}"))?;
    let k: usize = get("k")?.parse().map_err(|e| format!("k: {e}"))?;
    let mean = parse_list(get("mean")?)?;
    let basis = parse_list(get("basis")?)?;
    let spectrum = parse_list(get("spectrum")?)?;
    if mean.len() != dim || basis.len() != dim * k {
        return Err(format!(
            "inconsistent sizes: dim={dim}, k={k}, mean={}, basis={}",
            mean.len(),
            basis.len()
        ));
    }
    Ok(SubspaceModel {
        kind,
        mean,
        basis: DMatrix::from_column_slice(dim, k, &basis),
        spectrum,
    })
}

pub fn save_model(model: &SubspaceModel, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), encode_model(model).as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SubspaceModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_model(&text).map_err(|reason| Error::format(path, reason))
}
