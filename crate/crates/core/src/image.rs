//! Grayscale image type, PGM/PNG loading and bilinear resampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Default protocol image size: 60 columns by 80 rows.
pub const PROTOCOL_WIDTH: usize = 60;
pub const PROTOCOL_HEIGHT: usize = 80;

/// Row-major grid of intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} grid",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidImage(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with coordinates clamped to the image border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at a fractional position, clamped at the borders.
    ///
    /// Written as nested linear interpolations so that a constant
    /// neighbourhood yields exactly its value.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = lerp(self.get(x0, y0), self.get(x1, y0), fx);
        let bottom = lerp(self.get(x0, y1), self.get(x1, y1), fx);
        lerp(top, bottom, fy)
    }

    /// Bilinear resampling to `width` x `height` with edge clamping.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-dimension resize target {width}x{height}"
            )));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                pixels.push(self.sample_bilinear(src_x, src_y).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, pixels)
    }

    /// Applies `f` to every intensity; the result must stay in `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.pixels.iter().map(|&p| f(p)).collect(),
        )
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Loads a grayscale PGM (P5) or PNG image, normalising intensities by the
/// source maxval, and optionally resamples it to `target = (width, height)`.
pub fn load_image(path: impl AsRef<Path>, target: Option<(usize, usize)>) -> Result<GrayImage> {
    let path = path.as_ref();
    if let Some((w, h)) = target {
        if w == 0 || h == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-dimension resize target {w}x{h}"
            )));
        }
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = if bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(|reason| Error::Image {
            path: path.to_path_buf(),
            reason,
        })?
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
        return Err(Error::Image {
            path: path.to_path_buf(),
            reason: "color image (PPM) not supported".into(),
        });
    } else {
        decode_png(&bytes).map_err(|reason| Error::Image {
            path: path.to_path_buf(),
            reason,
        })?
    };
    match target {
        Some((w, h)) => img.resize(w, h),
        None => Ok(img),
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header number")?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header terminator".into());
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let n = width * height;
    let data = &bytes[pos..];
    let scale = maxval as f64;
    let pixels: Vec<f64> = if maxval < 256 {
        if data.len() < n {
            return Err("truncated raster".into());
        }
        data[..n].iter().map(|&v| v as f64 / scale).collect()
    } else {
        if data.len() < 2 * n {
            return Err("truncated raster".into());
        }
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    if pixels.iter().any(|&p| p > 1.0) {
        return Err("sample exceeds maxval".into());
    }
    GrayImage::new(width, height, pixels).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage, String> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| format!("not a readable PGM/PNG: {e}"))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<f64> = match decoded {
        image::DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        image::DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => return Err(format!("color image ({:?}) not supported", other.color())),
    };
    GrayImage::new(width, height, pixels).map_err(|e| e.to_string())
}

/// Encodes an image as a 16-bit binary PGM (maxval 65535, big-endian).
pub fn encode_pgm16(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n65535\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + 2 * img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    for &p in &img.pixels {
        let v = (p.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_pgm16(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_pgm16(img))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn pgm8_normalizes_by_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 255, 0]);
        let p = write_tmp(&dir, "a.pgm", &bytes);
        let img = load_image(&p, None).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn pgm16_maxval_maps_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend_from_slice(&65535u16.to_be_bytes());
        let p = write_tmp(&dir, "b.pgm", &bytes);
        assert_eq!(load_image(&p, None).unwrap().pixels(), &[1.0]);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P5\n# made by hand\n1 2\n# depth\n255\n".to_vec();
        bytes.extend_from_slice(&[51, 102]);
        let p = write_tmp(&dir, "c.pgm", &bytes);
        assert_eq!(load_image(&p, None).unwrap().pixels(), &[0.2, 0.4]);
    }

    #[test]
    fn constant_resize_is_exact() {
        let img = GrayImage::constant(4, 4, 0.5).unwrap();
        let small = img.resize(2, 2).unwrap();
        assert_eq!(small.pixels(), &[0.5; 4]);
        let big = img.resize(7, 9).unwrap();
        assert!(big.pixels().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn zero_target_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "d.pgm", b"P5 1 1 255\n\x10");
        assert!(load_image(&p, Some((0, 4))).is_err());
    }

    #[test]
    fn missing_file_and_color_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("nope.pgm"), None),
            Err(Error::Io { .. })
        ));
        let p = write_tmp(&dir, "e.ppm", b"P6 1 1 255\n\x00\x00\x00");
        assert!(matches!(load_image(&p, None), Err(Error::Image { .. })));

        let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([1, 2, 3]));
        let png = dir.path().join("rgb.png");
        rgb.save(&png).unwrap();
        assert!(matches!(load_image(&png, None), Err(Error::Image { .. })));
    }

    #[test]
    fn png_gray8_and_gray16_load() {
        let dir = tempfile::tempdir().unwrap();
        let g8 = image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap();
        let p8 = dir.path().join("g8.png");
        g8.save(&p8).unwrap();
        assert_eq!(load_image(&p8, None).unwrap().pixels(), &[0.0, 1.0]);

        let g16 =
            image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![65535u16]).unwrap();
        let p16 = dir.path().join("g16.png");
        g16.save(&p16).unwrap();
        assert_eq!(load_image(&p16, None).unwrap().pixels(), &[1.0]);
    }

    #[test]
    fn pgm16_round_trip_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| ((x * 13 + y * 7) % 17) as f64 / 16.3).unwrap();
        let p = dir.path().join("rt.pgm");
        write_pgm16(&img, &p).unwrap();
        let back = load_image(&p, None).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn invalid_images_rejected() {
        assert!(GrayImage::new(0, 1, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
    }
}
