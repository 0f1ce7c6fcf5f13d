//! Identification (CMC, rank-k, perfect rank) and verification (EER)
//! metrics over a lower-is-better score matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::ScoreMatrix;

/// Number of leading CMC ranks reported.
pub const REPORTED_RANKS: usize = 5;

/// Cumulative match characteristic: `rates[k-1]` is the fraction of probes
/// whose true identity is within the top `k` gallery entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcCurve {
    pub rates: Vec<f64>,
}

impl CmcCurve {
    /// Identification rate at 1-based `rank`; ranks beyond the gallery size
    /// saturate at the last value.
    pub fn rate_at(&self, rank: usize) -> f64 {
        let idx = rank.clamp(1, self.rates.len()) - 1;
        self.rates[idx]
    }
}

/// 1-based rank of the true identity for every probe.
///
/// Gallery entries are ordered by ascending score, ties by ascending column
/// index. If a subject has several gallery entries the best-placed counts.
pub fn probe_ranks(s: &ScoreMatrix) -> Result<Vec<usize>> {
    (0..s.n_probes())
        .map(|r| {
            let row = s.row(r);
            let label = &s.probe_labels[r];
            s.gallery_labels
                .iter()
                .enumerate()
                .filter(|(_, g)| *g == label)
                .map(|(c, _)| {
                    let target = row[c];
                    1 + row
                        .iter()
                        .enumerate()
                        .filter(|&(j, &v)| v < target || (v == target && j < c))
                        .count()
                })
                .min()
                .ok_or_else(|| {
                    Error::Evaluation(format!(
                        "probe {} has label {label:?}, which is not in the gallery",
                        s.probe_ids[r]
                    ))
                })
        })
        .collect()
}

pub fn cmc(s: &ScoreMatrix) -> Result<CmcCurve> {
    if s.n_probes() == 0 || s.n_gallery() == 0 {
        return Err(Error::Evaluation("empty score matrix".into()));
    }
    let ranks = probe_ranks(s)?;
    let g = s.n_gallery();
    let mut hits = vec![0usize; g];
    for r in ranks {
        hits[r - 1] += 1;
    }
    let total = s.n_probes() as f64;
    let mut cumulative = 0usize;
    let rates = hits
        .into_iter()
        .map(|h| {
            cumulative += h;
            cumulative as f64 / total
        })
        .collect();
    Ok(CmcCurve { rates })
}

/// Smallest 1-based rank at which the CMC reaches 100%.
pub fn perfect_rank(c: &CmcCurve) -> Result<usize> {
    c.rates
        .iter()
        .position(|&r| r >= 1.0)
        .map(|i| i + 1)
        .ok_or_else(|| Error::Evaluation("CMC never reaches 100%".into()))
}

/// Genuine (same subject) and impostor scores, in row-major order.
pub fn split_scores(s: &ScoreMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for r in 0..s.n_probes() {
        for (c, &v) in s.row(r).iter().enumerate() {
            if s.probe_labels[r] == s.gallery_labels[c] {
                genuine.push(v);
            } else {
                impostor.push(v);
            }
        }
    }
    (genuine, impostor)
}

/// Equal error rate in percent.
///
/// A comparison is accepted when its score is `<= t`. The threshold sweeps
/// `-inf` and every observed score; at the threshold minimising
/// `|FAR - FRR|` (smallest such threshold on ties) the mean of FAR and FRR
/// is returned.
pub fn eer(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Evaluation(format!(
            "EER needs genuine and impostor scores (got {} genuine, {} impostor)",
            genuine.len(),
            impostor.len()
        )));
    }
    if genuine.iter().chain(impostor).any(|v| v.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    let mut gen = genuine.to_vec();
    let mut imp = impostor.to_vec();
    gen.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    let (ng, ni) = (gen.len() as u128, imp.len() as u128);

    // counts at t = -inf
    let (mut gi, mut ii) = (0usize, 0usize);
    let imbalance = |accepted_imp: usize, accepted_gen: usize| {
        // |FAR - FRR| scaled by ng * ni
        let far = accepted_imp as u128 * ng;
        let frr = (ng - accepted_gen as u128) * ni;
        far.abs_diff(frr)
    };
    let mut best = (imbalance(0, 0), 0usize, 0usize);
    while gi < gen.len() || ii < imp.len() {
        let t = match (gen.get(gi), imp.get(ii)) {
            (Some(&g), Some(&i)) => g.min(i),
            (Some(&g), None) => g,
            (None, Some(&i)) => i,
            (None, None) => unreachable!(),
        };
        while gi < gen.len() && gen[gi] <= t {
            gi += 1;
        }
        while ii < imp.len() && imp[ii] <= t {
            ii += 1;
        }
        let d = imbalance(ii, gi);
        if d < best.0 {
            best = (d, ii, gi);
        }
    }
    let (_, accepted_imp, accepted_gen) = best;
    let far = accepted_imp as f64 / imp.len() as f64;
    let frr = (gen.len() - accepted_gen) as f64 / gen.len() as f64;
    Ok(100.0 * (far + frr) / 2.0)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub rank_rates_pct: Vec<f64>,
    pub perfect_rank: usize,
    pub eer_pct: f64,
    pub config: serde_json::Value,
}

pub fn report(s: &ScoreMatrix, config: serde_json::Value) -> Result<EvalReport> {
    let curve = cmc(s)?;
    let perfect = perfect_rank(&curve)?;
    let (genuine, impostor) = split_scores(s);
    let eer_pct = eer(&genuine, &impostor)?;
    Ok(EvalReport {
        method: s.method.clone(),
        rank_rates_pct: (1..=REPORTED_RANKS)
            .map(|k| 100.0 * curve.rate_at(k))
            .collect(),
        perfect_rank: perfect,
        eer_pct,
        config,
    })
}
