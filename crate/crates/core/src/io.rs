//! On-disk formats: score matrices with label sidecars, reports, CMC curves,
//! the summary table and feature dumps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::{CmcCurve, EvalReport};
use crate::matching::{LabeledFeature, ScoreMatrix};

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Scores are written with 17 significant digits, which round-trips f64.
pub fn format_score(v: f64) -> String {
    format!("{v:.16e}")
}

/// Path of the label sidecar belonging to a score CSV:
/// `scores/foo.csv` -> `scores/foo.labels.csv`.
pub fn labels_path(scores_path: &Path) -> PathBuf {
    let stem = scores_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    scores_path.with_file_name(format!("{stem}.labels.csv"))
}

/// Score matrix CSV: the first row holds the method tag then the gallery
/// ids; each further row is a probe id followed by its scores.
pub fn encode_scores(s: &ScoreMatrix) -> String {
    let mut out = String::new();
    out.push_str(&s.method);
    for g in &s.gallery_ids {
        out.push(',');
        out.push_str(g);
    }
    out.push('\n');
    for r in 0..s.n_probes() {
        out.push_str(&s.probe_ids[r]);
        for &v in s.row(r) {
            out.push(',');
            out.push_str(&format_score(v));
        }
        out.push('\n');
    }
    out
}

/// Label sidecar CSV: `role,id,label` with role `probe` or `gallery`.
pub fn encode_labels(s: &ScoreMatrix) -> String {
    let mut out = String::from("role,id,label\n");
    for (id, label) in s.probe_ids.iter().zip(&s.probe_labels) {
        out.push_str(&format!("probe,{id},{label}\n"));
    }
    for (id, label) in s.gallery_ids.iter().zip(&s.gallery_labels) {
        out.push_str(&format!("gallery,{id},{label}\n"));
    }
    out
}

pub fn write_scores(s: &ScoreMatrix, path: &Path) -> Result<()> {
    write_atomic(path, encode_scores(s).as_bytes())?;
    write_atomic(&labels_path(path), encode_labels(s).as_bytes())
}

/// Reads a score CSV and its label sidecar.
pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::format(path, reason);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty score file".into()))?;
    let mut head = header.split(',');
    let method = head.next().unwrap_or("").trim().to_string();
    let gallery_ids: Vec<String> = head.map(|s| s.trim().to_string()).collect();
    if gallery_ids.is_empty() {
        return Err(bad("header has no gallery ids".into()));
    }
    let mut probe_ids = Vec::new();
    let mut scores = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split(',');
        probe_ids.push(cells.next().unwrap_or("").trim().to_string());
        let row: Vec<f64> = cells
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: bad score {c:?}: {e}", i + 2)))
            })
            .collect::<Result<_>>()?;
        if row.len() != gallery_ids.len() {
            return Err(bad(format!(
                "line {}: {} scores for {} gallery columns",
                i + 2,
                row.len(),
                gallery_ids.len()
            )));
        }
        scores.extend(row);
    }

    let sidecar = labels_path(path);
    if !sidecar.is_file() {
        return Err(Error::format(
            path,
            format!("labels required: sidecar {} not found", sidecar.display()),
        ));
    }
    let labels_text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let bad_labels = |reason: String| Error::format(&sidecar, reason);
    let mut probe_map = std::collections::HashMap::new();
    let mut gallery_map = std::collections::HashMap::new();
    for (i, line) in labels_text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let [role, id, label] = cells[..] else {
            return Err(bad_labels(format!(
                "line {}: expected role,id,label",
                i + 1
            )));
        };
        let map = match role {
            "probe" => &mut probe_map,
            "gallery" => &mut gallery_map,
            other => {
                return Err(bad_labels(format!(
                    "line {}: unknown role {other:?}",
                    i + 1
                )))
            }
        };
        map.insert(id.to_string(), label.to_string());
    }
    let lookup = |map: &std::collections::HashMap<String, String>, ids: &[String], role: &str| {
        ids.iter()
            .map(|id| {
                map.get(id)
                    .cloned()
                    .ok_or_else(|| bad_labels(format!("labels required: no {role} label for {id}")))
            })
            .collect::<Result<Vec<_>>>()
    };
    let probe_labels = lookup(&probe_map, &probe_ids, "probe")?;
    let gallery_labels = lookup(&gallery_map, &gallery_ids, "gallery")?;
    ScoreMatrix::new(
        method,
        probe_ids,
        probe_labels,
        gallery_ids,
        gallery_labels,
        scores,
    )
    .map_err(|e| bad(e.to_string()))
}

pub fn encode_report(r: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("report serialises");
    s.push('\n');
    s
}

pub fn write_report(r: &EvalReport, path: &Path) -> Result<()> {
    write_atomic(path, encode_report(r).as_bytes())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// `rank,rate` CSV for external plotting.
pub fn encode_cmc(c: &CmcCurve) -> String {
    let mut out = String::from("rank,rate\n");
    for (i, r) in c.rates.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, format_score(*r)));
    }
    out
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "name",
    "rank1",
    "rank2",
    "rank3",
    "rank4",
    "rank5",
    "perfect_rank",
    "eer",
];

/// One row per report; columns follow the results-table layout.
pub fn encode_summary(reports: &[(String, EvalReport)]) -> String {
    let mut out = SUMMARY_HEADER.join(",");
    out.push('\n');
    for (name, r) in reports {
        out.push_str(name);
        for v in &r.rank_rates_pct {
            out.push_str(&format!(",{v:.4}"));
        }
        out.push_str(&format!(",{},{:.4}\n", r.perfect_rank, r.eer_pct));
    }
    out
}

/// Feature dump: header `id,<method>_0,<method>_1,...`, one vector per row.
pub fn encode_features(rows: &[LabeledFeature]) -> Result<String> {
    let Some(first) = rows.first() else {
        return Ok(String::new());
    };
    let method = &first.features.method;
    let dim = first.features.len();
    let mut out = String::from("id");
    for i in 0..dim {
        out.push_str(&format!(",{method}_{i}"));
    }
    out.push('\n');
    for row in rows {
        if row.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.features.len(),
            });
        }
        out.push_str(&row.id);
        for v in &row.features.values {
            out.push(',');
            out.push_str(&format_score(*v));
        }
        out.push('\n');
    }
    Ok(out)
}
