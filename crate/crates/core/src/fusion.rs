//! Min-max score normalisation and weighted-sum score fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::ScoreMatrix;

/// Tolerance on the sum of fusion weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    /// One min/max over the whole matrix.
    #[default]
    Global,
    /// Min/max per probe row.
    PerRow,
}

/// One fusion component: a method tag and its weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionComponent {
    pub method: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSpec {
    /// Report name; defaults to the `+`-joined component tags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub fusion: Vec<FusionComponent>,
}

impl FusionSpec {
    pub fn new(components: impl IntoIterator<Item = (impl Into<String>, f64)>) -> Self {
        Self {
            name: None,
            fusion: components
                .into_iter()
                .map(|(method, weight)| FusionComponent {
                    method: method.into(),
                    weight,
                })
                .collect(),
        }
    }

    pub fn joined_tag(&self) -> String {
        self.fusion
            .iter()
            .map(|c| c.method.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.joined_tag())
    }

    pub fn validate(&self) -> Result<()> {
        check_weights(self.fusion.iter().map(|c| c.weight))
            .map_err(|e| Error::Fusion(format!("fusion {:?}: {e}", self.name())))
    }
}

fn check_weights(weights: impl IntoIterator<Item = f64>) -> Result<(), String> {
    let weights: Vec<f64> = weights.into_iter().collect();
    if weights.is_empty() {
        return Err("needs at least one component".into());
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(format!("weight {w} is not positive"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(format!("weights sum to {sum}, expected 1"));
    }
    Ok(())
}

/// `(s - min) / (max - min)`; a constant range maps to zero.
pub fn min_max_normalize(s: &ScoreMatrix) -> ScoreMatrix {
    normalize_with(s, NormalizationScope::Global)
}

fn rescale(values: &[f64], out: &mut Vec<f64>) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range > 0.0 {
        out.extend(values.iter().map(|&v| (v - lo) / range));
    } else {
        out.extend(std::iter::repeat_n(0.0, values.len()));
    }
}

pub fn normalize_with(s: &ScoreMatrix, scope: NormalizationScope) -> ScoreMatrix {
    let mut out = Vec::with_capacity(s.scores().len());
    match scope {
        NormalizationScope::Global => rescale(s.scores(), &mut out),
        NormalizationScope::PerRow => {
            for r in 0..s.n_probes() {
                rescale(s.row(r), &mut out);
            }
        }
    }
    s.with_scores(s.method.clone(), out)
        .expect("normalised scores stay finite and non-negative")
}

/// Weighted sum of already-normalised score matrices sharing the same axes.
///
/// Evaluated as `S_1 + sum_{i>1} w_i (S_i - S_1)`, which equals
/// `sum_i w_i S_i` for weights summing to one and reproduces identical
/// inputs exactly. Each cell is kept inside the range spanned by its inputs.
pub fn weighted_fuse(components: &[(&ScoreMatrix, f64)]) -> Result<ScoreMatrix> {
    check_weights(components.iter().map(|(_, w)| *w)).map_err(Error::Fusion)?;
    let (base, _) = components[0];
    if let Some((other, _)) = components.iter().find(|(m, _)| !base.same_axes(m)) {
        return Err(Error::Fusion(format!(
            "score matrices {:?} and {:?} have different probe/gallery ids or labels",
            base.method, other.method
        )));
    }
    let fused: Vec<f64> = (0..base.scores().len())
        .map(|i| {
            let first = base.scores()[i];
            let (mut lo, mut hi) = (first, first);
            let mut acc = first;
            for (m, w) in &components[1..] {
                let v = m.scores()[i];
                lo = lo.min(v);
                hi = hi.max(v);
                acc += w * (v - first);
            }
            acc.clamp(lo, hi)
        })
        .collect();
    let tag = components
        .iter()
        .map(|(m, _)| m.method.as_str())
        .collect::<Vec<_>>()
        .join("+");
    base.with_scores(tag, fused)
}
