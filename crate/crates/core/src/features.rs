//! Image descriptors: raw intensity, uniform LBP histograms, LPQ histograms
//! and HOG.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// A method-tagged real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub method: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(method: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            method: method.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Block layout used by the histogram descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub blocks_x: usize,
    pub blocks_y: usize,
}

impl GridSpec {
    pub fn new(blocks_x: usize, blocks_y: usize) -> Result<Self> {
        let grid = Self { blocks_x, blocks_y };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks_x == 0 || self.blocks_y == 0 {
            return Err(Error::Feature(format!(
                "grid {}x{} must have at least one block per axis",
                self.blocks_x, self.blocks_y
            )));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.blocks_x * self.blocks_y
    }

    /// Block index of pixel `(x, y)` when the grid partitions a
    /// `width` x `height` image.
    #[inline]
    fn block_of(&self, x: usize, y: usize, width: usize, height: usize) -> usize {
        let bx = x * self.blocks_x / width;
        let by = y * self.blocks_y / height;
        by * self.blocks_x + bx
    }

    /// Counts the pixels of the region `[x0, x1) x [y0, y1)` per block and
    /// fails if any block gets none.
    fn check_coverage(
        &self,
        width: usize,
        height: usize,
        (x0, x1): (usize, usize),
        (y0, y1): (usize, usize),
    ) -> Result<()> {
        let mut counts = vec![0usize; self.count()];
        for y in y0..y1 {
            for x in x0..x1 {
                counts[self.block_of(x, y, width, height)] += 1;
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Feature(format!(
                "grid block {} ({}x{} grid on {width}x{height} image) contains no interior pixel",
                empty, self.blocks_x, self.blocks_y
            )));
        }
        Ok(())
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            blocks_x: 4,
            blocks_y: 4,
        }
    }
}

/// Descriptor settings shared by every pipeline of an experiment. The uLBP
/// radius is part of the method name (`ulbp_8_2`) and not configurable here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorParams {
    pub ulbp_grid: GridSpec,
    pub lpq_window: usize,
    pub lpq_grid: GridSpec,
    pub hog_cell: usize,
    pub hog_block_cells: usize,
    pub hog_bins: usize,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            ulbp_grid: GridSpec::default(),
            lpq_window: 7,
            lpq_grid: GridSpec::default(),
            hog_cell: 10,
            hog_block_cells: 2,
            hog_bins: 9,
        }
    }
}

/// Row-major flattening of the image.
pub fn intensity_vector(img: &GrayImage) -> FeatureVector {
    FeatureVector::new("intensity", img.pixels().to_vec())
}

// ---------------------------------------------------------------------------
// Uniform LBP

/// Number of 0/1 transitions in the circular bit string `code` of `bits` bits.
pub fn circular_transitions(code: u32, bits: u32) -> u32 {
    let rotated = (code >> 1) | ((code & 1) << (bits - 1));
    (code ^ rotated).count_ones()
}

/// Number of histogram bins of the u2 mapping: one per uniform pattern plus
/// a shared non-uniform bin.
pub fn ulbp_bins(points: u32) -> usize {
    (points * (points - 1) + 3) as usize
}

/// Maps every `points`-bit code to its u2 bin. Uniform codes get bins in
/// increasing code order; all other codes share the last bin.
fn uniform_table(points: u32) -> Vec<u16> {
    let non_uniform = (ulbp_bins(points) - 1) as u16;
    let mut next = 0u16;
    (0..1u32 << points)
        .map(|code| {
            if circular_transitions(code, points) <= 2 {
                next += 1;
                next - 1
            } else {
                non_uniform
            }
        })
        .collect()
}

fn cached_uniform_table(points: u32) -> &'static [u16] {
    static P8: OnceLock<Vec<u16>> = OnceLock::new();
    static P16: OnceLock<Vec<u16>> = OnceLock::new();
    match points {
        8 => P8.get_or_init(|| uniform_table(8)),
        16 => P16.get_or_init(|| uniform_table(16)),
        _ => unreachable!("validated by caller"),
    }
}

/// Bin index of `code` under the u2 mapping for `points` neighbours.
pub fn ulbp_bin_of(code: u32, points: u32) -> usize {
    cached_uniform_table(points)[code as usize] as usize
}

pub fn ulbp_tag(points: u32, radius: f64) -> String {
    format!("ulbp_{points}_{radius}")
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Per-pixel u2 LBP code image over the interior, or `None` outside it.
fn lbp_codes(img: &GrayImage, points: u32, radius: f64) -> Vec<Option<u32>> {
    let (w, h) = (img.width(), img.height());
    let margin = radius.ceil() as usize;
    let offsets: Vec<(f64, f64)> = (0..points)
        .map(|p| {
            let angle = 2.0 * PI * p as f64 / points as f64;
            (snap(radius * angle.cos()), snap(-radius * angle.sin()))
        })
        .collect();
    let mut codes = vec![None; w * h];
    for y in margin..h.saturating_sub(margin) {
        for x in margin..w.saturating_sub(margin) {
            let center = img.get(x, y);
            let mut code = 0u32;
            for (bit, &(dx, dy)) in offsets.iter().enumerate() {
                let (sx, sy) = (x as f64 + dx, y as f64 + dy);
                let neighbour = if sx.fract() == 0.0 && sy.fract() == 0.0 {
                    img.get(sx as usize, sy as usize)
                } else {
                    img.sample_bilinear(sx, sy)
                };
                if neighbour >= center {
                    code |= 1 << bit;
                }
            }
            codes[y * w + x] = Some(code);
        }
    }
    codes
}

/// Block-wise uniform LBP histogram with `points` neighbours on a circle of
/// `radius`. Raw counts, concatenated over the grid blocks.
pub fn ulbp_histogram(
    img: &GrayImage,
    points: u32,
    radius: f64,
    grid: GridSpec,
) -> Result<FeatureVector> {
    if points != 8 && points != 16 {
        return Err(Error::Feature(format!(
            "uLBP supports 8 or 16 neighbours, got {points}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Feature(format!(
            "uLBP radius must be > 0, got {radius}"
        )));
    }
    grid.validate()?;
    let (w, h) = (img.width(), img.height());
    let margin = radius.ceil() as usize;
    if 2 * margin >= w || 2 * margin >= h {
        return Err(Error::Feature(format!(
            "image {w}x{h} too small for uLBP radius {radius}"
        )));
    }
    grid.check_coverage(w, h, (margin, w - margin), (margin, h - margin))?;

    let bins = ulbp_bins(points);
    let table = cached_uniform_table(points);
    let codes = lbp_codes(img, points, radius);
    let mut hist = vec![0.0; bins * grid.count()];
    for y in margin..h - margin {
        for x in margin..w - margin {
            let code = codes[y * w + x].expect("interior pixel has a code");
            let block = grid.block_of(x, y, w, h);
            hist[block * bins + table[code as usize] as usize] += 1.0;
        }
    }
    Ok(FeatureVector::new(ulbp_tag(points, radius), hist))
}

// ---------------------------------------------------------------------------
// LPQ

#[derive(Debug, Clone, Copy, Default)]
struct Cplx {
    re: f64,
    im: f64,
}

impl Cplx {
    #[inline]
    fn add(self, o: Cplx) -> Cplx {
        Cplx {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }

    #[inline]
    fn sub(self, o: Cplx) -> Cplx {
        Cplx {
            re: self.re - o.re,
            im: self.im - o.im,
        }
    }

    #[inline]
    fn mul(self, o: Cplx) -> Cplx {
        Cplx {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }

    #[inline]
    fn conj(self) -> Cplx {
        Cplx {
            re: self.re,
            im: -self.im,
        }
    }
}

pub const LPQ_BINS: usize = 256;

/// Per-pixel 8-bit LPQ codes over the valid region `[r, w-r) x [r, h-r)`.
///
/// The short-term Fourier transform at the four lowest non-zero
/// frequencies is computed separably. Every pass with a non-DC kernel
/// subtracts the window centre first; the kernel sums to zero so the result
/// is unchanged, but a flat neighbourhood gives exactly zero.
fn lpq_codes(img: &GrayImage, window: usize) -> Vec<Option<u8>> {
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as isize;
    let a = 1.0 / window as f64;
    let kernel: Vec<Cplx> = (-r..=r)
        .map(|k| {
            let phase = -2.0 * PI * a * k as f64;
            Cplx {
                re: phase.cos(),
                im: phase.sin(),
            }
        })
        .collect();

    // horizontal pass: DC (h0) and first frequency (h1) for every row
    let mut h0 = vec![0.0; w * h];
    let mut h1 = vec![Cplx::default(); w * h];
    for y in 0..h {
        for x in r as usize..w - r as usize {
            let center = img.get(x, y);
            let mut dc = 0.0;
            let mut acc = Cplx::default();
            for (i, k) in (-r..=r).enumerate() {
                let v = img.get((x as isize + k) as usize, y);
                dc += v;
                let d = v - center;
                acc = acc.add(Cplx {
                    re: d * kernel[i].re,
                    im: d * kernel[i].im,
                });
            }
            h0[y * w + x] = dc;
            h1[y * w + x] = acc;
        }
    }

    let mut codes = vec![None; w * h];
    for y in r as usize..h - r as usize {
        for x in r as usize..w - r as usize {
            let c0 = h0[y * w + x];
            let c1 = h1[y * w + x];
            let mut f1 = Cplx::default();
            let mut f2 = Cplx::default();
            let mut f3 = Cplx::default();
            let mut f4 = Cplx::default();
            for (i, l) in (-r..=r).enumerate() {
                let idx = (y as isize + l) as usize * w + x;
                let d0 = h0[idx] - c0;
                let d1 = h1[idx].sub(c1);
                f1 = f1.add(h1[idx]);
                f2 = f2.add(Cplx {
                    re: d0 * kernel[i].re,
                    im: d0 * kernel[i].im,
                });
                f3 = f3.add(d1.mul(kernel[i]));
                f4 = f4.add(d1.mul(kernel[i].conj()));
            }
            let parts = [f1.re, f2.re, f3.re, f4.re, f1.im, f2.im, f3.im, f4.im];
            let code =
                parts.iter().enumerate().fold(
                    0u8,
                    |acc, (bit, &v)| if v >= 0.0 { acc | 1 << bit } else { acc },
                );
            codes[y * w + x] = Some(code);
        }
    }
    codes
}

/// Block-wise LPQ histogram (256 bins per block, raw counts) for a
/// `window` x `window` neighbourhood.
pub fn lpq_histogram(img: &GrayImage, window: usize, grid: GridSpec) -> Result<FeatureVector> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Feature(format!(
            "LPQ window must be odd and >= 3, got {window}"
        )));
    }
    grid.validate()?;
    let (w, h) = (img.width(), img.height());
    if w <= window || h <= window {
        return Err(Error::Feature(format!(
            "LPQ window {window} larger than image {w}x{h}"
        )));
    }
    let r = window / 2;
    grid.check_coverage(w, h, (r, w - r), (r, h - r))?;
    let codes = lpq_codes(img, window);
    let mut hist = vec![0.0; LPQ_BINS * grid.count()];
    for y in r..h - r {
        for x in r..w - r {
            let code = codes[y * w + x].expect("valid pixel has a code");
            hist[grid.block_of(x, y, w, h) * LPQ_BINS + code as usize] += 1.0;
        }
    }
    Ok(FeatureVector::new("lpq", hist))
}

// ---------------------------------------------------------------------------
// HOG

/// Length of the HOG descriptor for a `width` x `height` image.
pub fn hog_len(width: usize, height: usize, cell: usize, block_cells: usize, bins: usize) -> usize {
    let (cx, cy) = (width / cell, height / cell);
    if cx < block_cells || cy < block_cells {
        return 0;
    }
    (cx - block_cells + 1) * (cy - block_cells + 1) * block_cells * block_cells * bins
}

/// Histogram of oriented gradients with unsigned orientation, bilinear bin
/// voting and L2-hys block normalisation (clip 0.2).
pub fn hog_descriptor(
    img: &GrayImage,
    cell: usize,
    block_cells: usize,
    bins: usize,
) -> Result<FeatureVector> {
    const CLIP: f64 = 0.2;
    if cell < 2 || block_cells < 1 || bins < 2 {
        return Err(Error::Feature(format!(
            "invalid HOG geometry: cell={cell}, block_cells={block_cells}, bins={bins}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let (ncx, ncy) = (w / cell, h / cell);
    if ncx < block_cells || ncy < block_cells {
        return Err(Error::Feature(format!(
            "image {w}x{h} holds {ncx}x{ncy} cells of {cell}px, fewer than a {block_cells}x{block_cells} block"
        )));
    }

    let bin_width = 180.0 / bins as f64;
    let mut cells = vec![0.0; ncx * ncy * bins];
    for y in 0..ncy * cell {
        for x in 0..ncx * cell {
            let (xi, yi) = (x as isize, y as isize);
            let gx = img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi);
            let gy = img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1);
            let magnitude = gx.hypot(gy);
            if magnitude == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let pos = angle / bin_width;
            let lo_f = pos.floor();
            let frac = pos - lo_f;
            let lo = (lo_f as usize) % bins;
            let hi = (lo + 1) % bins;
            let base = ((y / cell) * ncx + x / cell) * bins;
            cells[base + lo] += magnitude * (1.0 - frac);
            if frac > 0.0 {
                cells[base + hi] += magnitude * frac;
            }
        }
    }

    let (nbx, nby) = (ncx - block_cells + 1, ncy - block_cells + 1);
    let block_len = block_cells * block_cells * bins;
    let mut out = Vec::with_capacity(nbx * nby * block_len);
    let mut block = Vec::with_capacity(block_len);
    for by in 0..nby {
        for bx in 0..nbx {
            block.clear();
            for cy in by..by + block_cells {
                for cx in bx..bx + block_cells {
                    let base = (cy * ncx + cx) * bins;
                    block.extend_from_slice(&cells[base..base + bins]);
                }
            }
            l2_normalize(&mut block);
            block.iter_mut().for_each(|v| *v = v.min(CLIP));
            l2_normalize(&mut block);
            out.extend_from_slice(&block);
        }
    }
    Ok(FeatureVector::new("hog", out))
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}
