//! Spectrogram preprocessing: STFT image, 2x bilinear downsize, per-image
//! min-max normalization and conversion of time columns to input steps.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const WINDOW: usize = 1024;
pub const HOP: usize = 256;
pub const FRAMES: usize = 512;
/// Frequency rows of the native image: the shifted spectrum summed over bin pairs.
pub const BINS: usize = WINDOW / 2;
pub const FLOOR_DB: f64 = -120.0;
/// Shortest record that yields [`FRAMES`] full frames.
pub const MIN_SAMPLES: usize = WINDOW + (FRAMES - 1) * HOP;

/// Real image, frequency along rows (row 0 lowest) and time along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl SpectrogramImage {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                pixels.push(f(r, c));
            }
        }
        Self { rows, cols, pixels }
    }

    pub fn from_row_major(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::Input(format!(
                "{} pixels cannot form a {rows}x{cols} image",
                pixels.len()
            )));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.cols + col]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Row holding the largest value of each column; ties go to the lowest row.
    pub fn column_argmax(&self) -> Vec<usize> {
        (0..self.cols)
            .map(|c| {
                let mut best = 0;
                for r in 1..self.rows {
                    if self.get(r, c) > self.get(best, c) {
                        best = r;
                    }
                }
                best
            })
            .collect()
    }
}

/// Reusable short-time Fourier transform with a periodic Hann window.
#[derive(Clone)]
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(WINDOW);
        let window = (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / WINDOW as f64).cos())
            .collect();
        Self { fft, window }
    }
}

impl Stft {
    /// `BINS × FRAMES` power image in dB.
    ///
    /// Each frame's spectrum is reordered to ascend from `-fs/2` to
    /// `+fs/2` and adjacent bin pairs are summed, so row `r` covers shifted
    /// bins `2r` and `2r + 1`.
    pub fn spectrogram(&self, samples: &[Complex64]) -> Result<SpectrogramImage> {
        if samples.len() < MIN_SAMPLES {
            return Err(Error::Input(format!(
                "record has {} samples; the spectrogram needs at least {MIN_SAMPLES}",
                samples.len()
            )));
        }
        let mut pixels = vec![0.0; BINS * FRAMES];
        let mut frame = vec![Complex64::new(0.0, 0.0); WINDOW];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..FRAMES {
            let chunk = &samples[t * HOP..t * HOP + WINDOW];
            for ((f, s), w) in frame.iter_mut().zip(chunk).zip(&self.window) {
                *f = s * w;
            }
            self.fft.process_with_scratch(&mut frame, &mut scratch);
            for r in 0..BINS {
                let a = frame[(2 * r + WINDOW / 2) % WINDOW].norm_sqr();
                let b = frame[(2 * r + 1 + WINDOW / 2) % WINDOW].norm_sqr();
                pixels[r * FRAMES + t] = (10.0 * (a + b).log10()).max(FLOOR_DB);
            }
        }
        Ok(SpectrogramImage {
            rows: BINS,
            cols: FRAMES,
            pixels,
        })
    }
}

pub fn spectrogram(samples: &[Complex64]) -> Result<SpectrogramImage> {
    Stft::default().spectrogram(samples)
}

/// Half-pixel-centre bilinear resampling, restricted to exact 2x reduction
/// in both dimensions; at that ratio every output pixel is the mean of its
/// 2x2 source block.
pub fn resize_bilinear(image: &SpectrogramImage, out_rows: usize, out_cols: usize) -> Result<SpectrogramImage> {
    if image.rows % 2 != 0 || image.cols % 2 != 0 || out_rows * 2 != image.rows || out_cols * 2 != image.cols {
        return Err(Error::Unsupported(format!(
            "only exact 2x downsizing of even-sized images is supported ({}x{} -> {out_rows}x{out_cols})",
            image.rows, image.cols
        )));
    }
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis(out_rows, image.rows);
    let cols = axis(out_cols, image.cols);
    Ok(SpectrogramImage::from_fn(out_rows, out_cols, |r, c| {
        let (r0, r1, fr) = rows[r];
        let (c0, c1, fc) = cols[c];
        let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
        let bottom = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
        top * (1.0 - fr) + bottom * fr
    }))
}

/// Ordered reservoir inputs, one per image column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub steps: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }
}

/// Min-max scales the image to [0, 1] (a constant image becomes zeros) and
/// emits column `t` as step `t`.
pub fn normalize_and_sequence(image: &SpectrogramImage) -> Result<FeatureSequence> {
    if image.pixels.iter().any(|p| !p.is_finite()) {
        return Err(Error::Input("image contains non-finite pixels".into()));
    }
    let lo = image.pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scale = |p: f64| if span > 0.0 { (p - lo) / span } else { 0.0 };
    let steps = (0..image.cols)
        .map(|c| (0..image.rows).map(|r| scale(image.get(r, c))).collect())
        .collect();
    Ok(FeatureSequence { steps })
}

/// Full preprocessing chain for one record.
pub fn record_sequence(stft: &Stft, samples: &[Complex64]) -> Result<FeatureSequence> {
    let native = stft.spectrogram(samples)?;
    let small = resize_bilinear(&native, native.rows() / 2, native.cols() / 2)?;
    normalize_and_sequence(&small)
}

/// Writes a binary graymap (P5, maxval 255), image min mapped to 0 and max
/// to 255. Row 0 of the file is row 0 of the image (lowest frequency).
pub fn write_pgm(image: &SpectrogramImage, path: &Path) -> Result<()> {
    let seq = normalize_and_sequence(image)?;
    let mut out = format!("P5\n{} {}\n255\n", image.cols, image.rows).into_bytes();
    for r in 0..image.rows {
        for c in 0..image.cols {
            out.push((seq.steps[c][r] * 255.0).round() as u8);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
