//! Sample manifests, the gallery/probe/training protocol and the synthetic
//! dataset generator.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{write_pgm16, GrayImage};

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_COLUMNS: [&str; 4] = ["path", "subject_id", "ear_side", "sample_index"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarSide {
    Left,
    Right,
}

impl EarSide {
    pub fn as_str(self) -> &'static str {
        match self {
            EarSide::Left => "left",
            EarSide::Right => "right",
        }
    }
}

impl fmt::Display for EarSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EarSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(EarSide::Left),
            "right" => Ok(EarSide::Right),
            other => Err(format!("unknown ear_side {other:?}")),
        }
    }
}

/// One image of one ear of one subject.
///
/// `image_path` is resolved against the manifest's directory at load time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleRecord {
    pub subject_id: String,
    pub ear_side: EarSide,
    pub sample_index: u32,
    pub image_path: PathBuf,
}

impl SampleRecord {
    /// Stable identifier used in score matrices and reports.
    pub fn id(&self) -> String {
        format!(
            "{}_{}_{}",
            self.subject_id, self.ear_side, self.sample_index
        )
    }

    fn key(&self) -> (&str, EarSide, u32) {
        (&self.subject_id, self.ear_side, self.sample_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(samples: Vec<SampleRecord>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("empty manifest".into()));
        }
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.key()) {
                return Err(Error::Argument(format!(
                    "duplicate sample ({}, {}, {})",
                    s.subject_id, s.ear_side, s.sample_index
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks that every referenced image file exists.
    pub fn check_files(&self) -> Result<()> {
        for s in &self.samples {
            if !s.image_path.is_file() {
                return Err(Error::io(
                    &s.image_path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "image missing"),
                ));
            }
        }
        Ok(())
    }
}

/// Reads a manifest CSV with header `path,subject_id,ear_side,sample_index`.
/// Relative image paths are resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let manifest_err = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| manifest_err(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| manifest_err(e.to_string()))?
        .clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| manifest_err(format!("missing column {name:?}")))?;
    }
    let [c_path, c_subject, c_side, c_index] = columns;

    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| manifest_err(e.to_string()))?;
        let line = row + 2;
        let field = |c: usize| record.get(c).unwrap_or("");
        let ear_side = field(c_side)
            .parse::<EarSide>()
            .map_err(|e| manifest_err(format!("line {line}: {e}")))?;
        let sample_index = field(c_index)
            .parse::<u32>()
            .map_err(|e| manifest_err(format!("line {line}: bad sample_index: {e}")))?;
        let subject_id = field(c_subject).to_string();
        if subject_id.is_empty() {
            return Err(manifest_err(format!("line {line}: empty subject_id")));
        }
        let image = PathBuf::from(field(c_path));
        let image_path = if image.is_absolute() {
            image
        } else {
            root.join(image)
        };
        samples.push(SampleRecord {
            subject_id,
            ear_side,
            sample_index,
            image_path,
        });
    }
    DatasetManifest::new(samples).map_err(|e| match e {
        Error::Argument(reason) => manifest_err(reason),
        other => other,
    })
}

/// Writes `manifest` as CSV; image paths are written relative to the
/// manifest's directory when possible.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or(Path::new(""));
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    writer.write_record(MANIFEST_COLUMNS).map_err(wrap)?;
    for s in manifest.samples() {
        let rel = s.image_path.strip_prefix(root).unwrap_or(&s.image_path);
        writer
            .write_record([
                rel.to_string_lossy().as_ref(),
                &s.subject_id,
                s.ear_side.as_str(),
                &s.sample_index.to_string(),
            ])
            .map_err(wrap)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Training / gallery / probe split.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub training: Vec<SampleRecord>,
    pub gallery: Vec<SampleRecord>,
    pub probes: Vec<SampleRecord>,
}

impl Protocol {
    pub fn training_subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.training {
            if out.last() != Some(&r.subject_id) {
                out.push(r.subject_id.clone());
            }
        }
        out
    }

    /// Checks the gallery/probe invariants.
    pub fn validate(&self) -> Result<()> {
        let mut gallery_subjects = HashSet::new();
        for g in &self.gallery {
            if !gallery_subjects.insert(g.subject_id.as_str()) {
                return Err(Error::Protocol(format!(
                    "subject {} has more than one gallery record",
                    g.subject_id
                )));
            }
        }
        let gallery_keys: HashSet<_> = self.gallery.iter().map(SampleRecord::key).collect();
        for p in &self.probes {
            if !gallery_subjects.contains(p.subject_id.as_str()) {
                return Err(Error::Protocol(format!(
                    "probe {} references a subject missing from the gallery",
                    p.id()
                )));
            }
            if gallery_keys.contains(&p.key()) {
                return Err(Error::Protocol(format!(
                    "record {} is both gallery and probe",
                    p.id()
                )));
            }
        }
        Ok(())
    }
}

/// Splits `manifest` into training, gallery and probe sets.
///
/// For every subject with images on `side`, the lowest sample index becomes
/// the gallery record and the next `n_probe_samples` become probes.
/// `n_train_subjects` subjects are drawn (seeded, without replacement) from
/// the full subject pool; each contributes `n_train_samples` images, taken
/// from its held-out images (neither gallery nor probe) first.
pub fn make_protocol(
    manifest: &DatasetManifest,
    side: EarSide,
    n_train_subjects: usize,
    n_train_samples: usize,
    n_probe_samples: usize,
    seed: u64,
) -> Result<Protocol> {
    // subjects in order of first appearance
    let mut order: Vec<&str> = Vec::new();
    let mut by_subject: HashMap<&str, Vec<&SampleRecord>> = HashMap::new();
    for s in manifest.samples().iter().filter(|s| s.ear_side == side) {
        by_subject
            .entry(&s.subject_id)
            .or_insert_with(|| {
                order.push(&s.subject_id);
                Vec::new()
            })
            .push(s);
    }
    if order.is_empty() {
        return Err(Error::Protocol(format!(
            "no {side} ear samples in manifest"
        )));
    }
    if n_train_subjects > order.len() {
        return Err(Error::Protocol(format!(
            "insufficient subjects: {} requested for training, {} available",
            n_train_subjects,
            order.len()
        )));
    }
    for samples in by_subject.values_mut() {
        samples.sort_by_key(|s| s.sample_index);
    }

    let mut gallery = Vec::with_capacity(order.len());
    let mut probes = Vec::with_capacity(order.len() * n_probe_samples);
    for subject in &order {
        let samples = &by_subject[subject];
        if samples.len() < 1 + n_probe_samples {
            return Err(Error::Protocol(format!(
                "insufficient samples: subject {subject} has {} {side} images, needs {}",
                samples.len(),
                1 + n_probe_samples
            )));
        }
        gallery.push(samples[0].clone());
        probes.extend(samples[1..=n_probe_samples].iter().map(|&s| s.clone()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = (0..order.len()).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(n_train_subjects);
    chosen.sort_unstable();

    let mut training = Vec::with_capacity(n_train_subjects * n_train_samples);
    for &subject_pos in &chosen {
        let subject = order[subject_pos];
        let samples = &by_subject[subject];
        if samples.len() < n_train_samples {
            return Err(Error::Protocol(format!(
                "insufficient samples: training subject {subject} has {} images, needs {n_train_samples}",
                samples.len()
            )));
        }
        let mut sub_rng = ChaCha8Rng::seed_from_u64(seed);
        sub_rng.set_stream(1 + subject_pos as u64);
        let split = 1 + n_probe_samples;
        let mut held_out: Vec<usize> = (split..samples.len()).collect();
        held_out.shuffle(&mut sub_rng);
        let mut picks: Vec<usize> = held_out.into_iter().take(n_train_samples).collect();
        if picks.len() < n_train_samples {
            let mut rest: Vec<usize> = (0..split).collect();
            rest.shuffle(&mut sub_rng);
            picks.extend(rest.into_iter().take(n_train_samples - picks.len()));
        }
        picks.sort_unstable();
        training.extend(picks.into_iter().map(|i| samples[i].clone()));
    }

    let protocol = Protocol {
        training,
        gallery,
        probes,
    };
    protocol.validate()?;
    Ok(protocol)
}

/// Parameters for [`synth_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_subjects: usize,
    pub n_samples: usize,
    pub width: usize,
    pub height: usize,
    pub noise_sigma: f64,
    pub shift_max: u32,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            n_samples: 15,
            width: crate::image::PROTOCOL_WIDTH,
            height: crate::image::PROTOCOL_HEIGHT,
            noise_sigma: 0.02,
            shift_max: 1,
            seed: 7,
        }
    }
}

const SYNTH_COSINES: usize = 8;
/// Cycles per image along each axis.
const SYNTH_FREQ_RANGE: std::ops::Range<f64> = 0.5..2.5;

struct CosineField {
    terms: Vec<(f64, f64, f64, f64)>,
    offset: f64,
    scale: f64,
}

impl CosineField {
    fn random(rng: &mut ChaCha8Rng, width: usize, height: usize, margin: i64) -> Self {
        let terms: Vec<_> = (0..SYNTH_COSINES)
            .map(|_| {
                let amplitude = rng.random_range(0.5..1.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let fx = sign * rng.random_range(SYNTH_FREQ_RANGE) / width as f64;
                let fy = rng.random_range(SYNTH_FREQ_RANGE) / height as f64;
                let phase = rng.random_range(0.0..2.0 * PI);
                (amplitude, fx, fy, phase)
            })
            .collect();
        let mut field = Self {
            terms,
            offset: 0.0,
            scale: 1.0,
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in -margin..height as i64 + margin {
            for x in -margin..width as i64 + margin {
                let v = field.raw(x as f64, y as f64);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        field.offset = lo;
        field.scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
        field
    }

    fn raw(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(a, fx, fy, phase)| a * (2.0 * PI * (fx * x + fy * y) + phase).cos())
            .sum()
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        (self.raw(x, y) - self.offset) * self.scale
    }
}

/// Writes a deterministic synthetic dataset (16-bit PGMs plus
/// `manifest.csv`) into `out_dir` and returns its manifest.
///
/// Each subject gets a smooth base pattern built from random low-frequency
/// 2-D cosines; each sample is that pattern translated by a random integer
/// offset in `[-shift_max, shift_max]^2` plus Gaussian noise, clamped to
/// `[0, 1]`.
pub fn synth_dataset(out_dir: impl AsRef<Path>, params: &SynthParams) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if params.n_subjects < 2 || params.n_samples < 2 {
        return Err(Error::Argument(format!(
            "synthetic dataset needs at least 2 subjects and 2 samples, got {}x{}",
            params.n_subjects, params.n_samples
        )));
    }
    if params.width == 0 || params.height == 0 {
        return Err(Error::Argument("zero image dimension".into()));
    }
    if !(params.noise_sigma >= 0.0 && params.noise_sigma.is_finite()) {
        return Err(Error::Argument(format!(
            "noise_sigma must be >= 0, got {}",
            params.noise_sigma
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let noise = Normal::new(0.0, params.noise_sigma)
        .map_err(|e| Error::Argument(format!("noise_sigma: {e}")))?;
    let shift = params.shift_max as i64;
    let mut samples = Vec::with_capacity(params.n_subjects * params.n_samples);
    for subject in 0..params.n_subjects {
        let mut field_rng = ChaCha8Rng::seed_from_u64(params.seed);
        field_rng.set_stream(subject as u64);
        let field = CosineField::random(&mut field_rng, params.width, params.height, shift);
        let subject_id = format!("s{subject:03}");
        for sample in 0..params.n_samples {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(1));
            rng.set_stream((subject * params.n_samples + sample) as u64);
            let dx = rng.random_range(-shift..=shift) as f64;
            let dy = rng.random_range(-shift..=shift) as f64;
            let mut pixels = Vec::with_capacity(params.width * params.height);
            for y in 0..params.height {
                for x in 0..params.width {
                    let base = field.value(x as f64 - dx, y as f64 - dy);
                    let n = if params.noise_sigma > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    pixels.push((base + n).clamp(0.0, 1.0));
                }
            }
            let img = GrayImage::new(params.width, params.height, pixels)?;
            let image_path = out_dir.join(format!("{subject_id}_{sample:02}.pgm"));
            write_pgm16(&img, &image_path)?;
            samples.push(SampleRecord {
                subject_id: subject_id.clone(),
                ear_side: EarSide::Left,
                sample_index: sample as u32,
                image_path,
            });
        }
    }
    let manifest = DatasetManifest::new(samples)?;
    write_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_manifest(subjects: usize, per_subject: usize) -> DatasetManifest {
        let mut samples = Vec::new();
        for s in 0..subjects {
            for i in 0..per_subject {
                samples.push(SampleRecord {
                    subject_id: format!("s{s}"),
                    ear_side: EarSide::Left,
                    sample_index: i as u32,
                    image_path: PathBuf::from(format!("s{s}_{i}.pgm")),
                });
            }
        }
        DatasetManifest::new(samples).unwrap()
    }

    #[test]
    fn manifest_rows_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "path,subject_id,ear_side,sample_index\nb.pgm,s2,left,0\na.pgm,s1,right,3\nc.pgm,s1,left,1\n",
        )
        .unwrap();
        let m = load_manifest(&p).unwrap();
        let ids: Vec<_> = m.samples().iter().map(SampleRecord::id).collect();
        assert_eq!(ids, ["s2_left_0", "s1_right_3", "s1_left_1"]);
        assert_eq!(m.samples()[0].image_path, dir.path().join("b.pgm"));
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "path,subject_id,ear_side,sample_index\na,s1,left,0\nb,s1,left,0\n",
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("duplicate sample"), "{err}");

        fs::write(&p, "path,subject_id,ear_side,sample_index\n").unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("empty manifest"), "{err}");

        fs::write(&p, "path,subject_id,ear_side,sample_index\na,s1,middle,0\n").unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("unknown ear_side"), "{err}");

        fs::write(&p, "path,subject_id,sample_index\na,s1,0\n").unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("missing column \"ear_side\""), "{err}");
    }

    #[test]
    fn protocol_counts_81_subjects() {
        let m = fake_manifest(81, 15);
        let p = make_protocol(&m, EarSide::Left, 50, 7, 7, 3).unwrap();
        assert_eq!(p.training.len(), 350);
        assert_eq!(p.gallery.len(), 81);
        assert_eq!(p.probes.len(), 567);
        assert_eq!(p.training_subjects().len(), 50);
        // with 15 samples the 7 held-out images cover training exactly
        assert!(p.training.iter().all(|r| r.sample_index >= 8));
    }

    #[test]
    fn small_protocol_is_disjoint() {
        let m = fake_manifest(2, 3);
        let p = make_protocol(&m, EarSide::Left, 2, 2, 2, 11).unwrap();
        assert_eq!(p.gallery.len(), 2);
        assert_eq!(p.probes.len(), 4);
        assert_eq!(p.training.len(), 4);
        let gallery: HashSet<_> = p.gallery.iter().collect();
        assert!(p.probes.iter().all(|r| !gallery.contains(r)));
    }

    #[test]
    fn protocol_is_deterministic_and_seed_dependent() {
        let m = fake_manifest(30, 12);
        let a = make_protocol(&m, EarSide::Left, 10, 3, 5, 42).unwrap();
        let b = make_protocol(&m, EarSide::Left, 10, 3, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = make_protocol(&m, EarSide::Left, 10, 3, 5, 43).unwrap();
        assert_ne!(a.training, c.training);
    }

    #[test]
    fn protocol_insufficient_data() {
        let m = fake_manifest(3, 4);
        assert!(make_protocol(&m, EarSide::Left, 4, 2, 2, 0).is_err());
        assert!(make_protocol(&m, EarSide::Left, 2, 2, 4, 0).is_err());
        assert!(make_protocol(&m, EarSide::Left, 2, 5, 2, 0).is_err());
        assert!(make_protocol(&m, EarSide::Right, 1, 1, 1, 0).is_err());
    }

    #[test]
    fn synth_counts_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let params = SynthParams {
            n_subjects: 3,
            n_samples: 4,
            width: 12,
            height: 16,
            noise_sigma: 0.05,
            shift_max: 2,
            seed: 9,
        };
        let m = synth_dataset(a.path(), &params).unwrap();
        synth_dataset(b.path(), &params).unwrap();
        assert_eq!(m.len(), 12);
        let reloaded = load_manifest(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(reloaded, m);
        for s in m.samples() {
            let name = s.image_path.file_name().unwrap();
            assert_eq!(
                fs::read(&s.image_path).unwrap(),
                fs::read(b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn synth_noiseless_samples_identical() {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams {
            n_subjects: 2,
            n_samples: 3,
            width: 10,
            height: 10,
            noise_sigma: 0.0,
            shift_max: 0,
            seed: 1,
        };
        let m = synth_dataset(dir.path(), &params).unwrap();
        let bytes: Vec<_> = m
            .samples()
            .iter()
            .map(|s| fs::read(&s.image_path).unwrap())
            .collect();
        assert_eq!(bytes[0], bytes[1]);
        assert_eq!(bytes[1], bytes[2]);
        assert_ne!(bytes[0], bytes[3]);
    }

    #[test]
    fn synth_rejects_bad_arguments() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = SynthParams {
            n_subjects: 1,
            ..SynthParams::default()
        };
        assert!(synth_dataset(dir.path(), &params).is_err());
        params.n_subjects = 2;
        params.noise_sigma = -1.0;
        assert!(synth_dataset(dir.path(), &params).is_err());
    }
}
