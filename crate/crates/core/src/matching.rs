//! Distances and probe x gallery score matrices (lower is better).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    ChiSquare,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::ChiSquare => "chi_square",
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::ChiSquare => chi_square(a, b),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "chi_square" => Ok(Metric::ChiSquare),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `sum (a_i - b_i)^2 / (a_i + b_i)`, skipping bins where both are zero.
pub fn chi_square(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let mut total = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if x < 0.0 || y < 0.0 || x.is_nan() || y.is_nan() {
            return Err(Error::Matching(format!(
                "chi-square needs non-negative entries, got {x} and {y}"
            )));
        }
        let s = x + y;
        if s > 0.0 {
            total += (x - y) * (x - y) / s;
        }
    }
    Ok(total)
}

/// A feature vector with its sample id and subject label.
#[derive(Debug, Clone)]
pub struct LabeledFeature {
    pub id: String,
    pub label: String,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub method: String,
    pub probe_ids: Vec<String>,
    pub probe_labels: Vec<String>,
    pub gallery_ids: Vec<String>,
    pub gallery_labels: Vec<String>,
    /// Row-major `probes x gallery`.
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(
        method: impl Into<String>,
        probe_ids: Vec<String>,
        probe_labels: Vec<String>,
        gallery_ids: Vec<String>,
        gallery_labels: Vec<String>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if probe_ids.len() != probe_labels.len() || gallery_ids.len() != gallery_labels.len() {
            return Err(Error::Matching(
                "id and label lists differ in length".into(),
            ));
        }
        if scores.len() != probe_ids.len() * gallery_ids.len() {
            return Err(Error::Matching(format!(
                "{} scores for a {}x{} matrix",
                scores.len(),
                probe_ids.len(),
                gallery_ids.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Matching(format!(
                "score {bad} is not a finite non-negative distance"
            )));
        }
        Ok(Self {
            method: method.into(),
            probe_ids,
            probe_labels,
            gallery_ids,
            gallery_labels,
            scores,
        })
    }

    pub fn n_probes(&self) -> usize {
        self.probe_ids.len()
    }

    pub fn n_gallery(&self) -> usize {
        self.gallery_ids.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let g = self.n_gallery();
        &self.scores[r * g..(r + 1) * g]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.scores[r * self.n_gallery() + c]
    }

    /// Same ids and labels, new scores (validated).
    pub fn with_scores(&self, method: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        Self::new(
            method,
            self.probe_ids.clone(),
            self.probe_labels.clone(),
            self.gallery_ids.clone(),
            self.gallery_labels.clone(),
            scores,
        )
    }

    pub fn same_axes(&self, other: &ScoreMatrix) -> bool {
        self.probe_ids == other.probe_ids
            && self.probe_labels == other.probe_labels
            && self.gallery_ids == other.gallery_ids
            && self.gallery_labels == other.gallery_labels
    }
}

/// Distances from every probe to every gallery entry. Rows are computed in
/// parallel; each cell depends only on its own pair.
pub fn score_matrix(
    gallery: &[LabeledFeature],
    probes: &[LabeledFeature],
    metric: Metric,
) -> Result<ScoreMatrix> {
    let first = gallery
        .first()
        .ok_or_else(|| Error::Matching("empty gallery".into()))?;
    let dim = first.features.len();
    if let Some(bad) = gallery
        .iter()
        .chain(probes)
        .find(|e| e.features.len() != dim)
    {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.features.len(),
        });
    }
    let rows: Vec<Vec<f64>> = probes
        .par_iter()
        .map(|p| {
            gallery
                .iter()
                .map(|g| metric.distance(&p.features.values, &g.features.values))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    ScoreMatrix::new(
        first.features.method.clone(),
        probes.iter().map(|p| p.id.clone()).collect(),
        probes.iter().map(|p| p.label.clone()).collect(),
        gallery.iter().map(|g| g.id.clone()).collect(),
        gallery.iter().map(|g| g.label.clone()).collect(),
        rows.concat(),
    )
}
