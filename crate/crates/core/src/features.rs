//! CSI pre-processing, DFT codebooks and beam metrics.
//!
//! Inputs to the inference models are angular-domain magnitudes, log-whitened
//! per vector. Targets are indices into a DFT codebook. Angular power spectra
//! are evaluated on a uniform grid in spatial frequency (uniform in sine of
//! the angle for half-wavelength arrays), which lines up with DFT beams.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("zero channel vector has no preferred beam")]
    DegenerateInput,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("beamformer must have unit norm, got {0}")]
    NotUnitNorm(f64),
    #[error("empty input")]
    Empty,
    #[error("grid size {grid} smaller than array size {m}")]
    GridTooSmall { grid: usize, m: usize },
    #[error("codeword index {index} out of range for {size} codewords")]
    IndexOutOfRange { index: usize, size: usize },
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Zero-padded forward DFT `X_k = Σ_n h_n exp(-j 2π k n / len)`.
pub(crate) fn padded_dft(h: &[Complex64], len: usize) -> Vec<Complex64> {
    debug_assert!(len >= h.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..h.len()].copy_from_slice(h);
    forward(len).process(&mut buf);
    buf
}

/// Unitary DFT of a channel vector (beamspace representation).
pub fn angular_transform(h: &[Complex64]) -> Vec<Complex64> {
    if h.is_empty() {
        return Vec::new();
    }
    let scale = 1.0 / (h.len() as f64).sqrt();
    padded_dft(h, h.len()).into_iter().map(|v| v * scale).collect()
}

pub fn inverse_angular_transform(x: &[Complex64]) -> Vec<Complex64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut buf = x.to_vec();
    inverse(x.len()).process(&mut buf);
    let scale = 1.0 / (x.len() as f64).sqrt();
    buf.into_iter().map(|v| v * scale).collect()
}

/// Natural log of `max(x_i, floor)`, standardized to zero mean and unit
/// (population) variance. Constant vectors map to zeros.
pub fn log_whiten(x: &[f64], floor: f64) -> Vec<f64> {
    let logs: Vec<f64> = x.iter().map(|&v| v.max(floor).ln()).collect();
    standardize(logs)
}

/// [`log_whiten`] with the floor set to `1e-12` of the vector maximum.
pub fn log_whiten_relative(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(0.0_f64, f64::max);
    let floor = if max > 0.0 { max * 1e-12 } else { f64::MIN_POSITIVE };
    log_whiten(x, floor)
}

fn standardize(mut v: Vec<f64>) -> Vec<f64> {
    if v.is_empty() {
        return v;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    // relative threshold: logs of a constant vector can differ by rounding
    if sd <= 1e-12 * mean.abs().max(1.0) {
        v.iter_mut().for_each(|a| *a = 0.0);
    } else {
        v.iter_mut().for_each(|a| *a = (*a - mean) / sd);
    }
    v
}

/// Angular-domain magnitudes of `h`, log-whitened. This is the feature vector
/// fed to the inference networks.
pub fn angular_features(h: &[Complex64]) -> Vec<f64> {
    let mags: Vec<f64> = angular_transform(h).iter().map(|v| v.norm()).collect();
    log_whiten_relative(&mags)
}

/// Oversampled DFT beamforming codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    num_elements: usize,
    oversampling: usize,
    codewords: Vec<Vec<Complex64>>,
}

/// Codeword `k`, element `n`: `exp(j 2π k n / (Q M)) / sqrt(M)`.
pub fn build_dft_codebook(m: usize, oversampling: usize) -> Codebook {
    assert!(m >= 1 && oversampling >= 1, "codebook needs M >= 1 and Q >= 1");
    let k_total = m * oversampling;
    let norm = 1.0 / (m as f64).sqrt();
    let codewords = (0..k_total)
        .map(|k| {
            (0..m)
                .map(|n| {
                    // reduce k*n first so the phase stays exact for large codebooks
                    let r = ((k * n) % k_total) as f64 / k_total as f64;
                    Complex64::from_polar(norm, 2.0 * std::f64::consts::PI * r)
                })
                .collect()
        })
        .collect();
    Codebook {
        num_elements: m,
        oversampling,
        codewords,
    }
}

impl Codebook {
    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn oversampling(&self) -> usize {
        self.oversampling
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn codeword(&self, k: usize) -> &[Complex64] {
        &self.codewords[k]
    }

    pub fn codewords(&self) -> &[Vec<Complex64>] {
        &self.codewords
    }

    fn check_len(&self, h: &[Complex64]) -> Result<(), FeatureError> {
        if h.len() != self.num_elements {
            return Err(FeatureError::LengthMismatch {
                expected: self.num_elements,
                got: h.len(),
            });
        }
        Ok(())
    }

    /// Beamforming gains `|<c_k, h>|^2` for every codeword.
    pub fn gains(&self, h: &[Complex64]) -> Result<Vec<f64>, FeatureError> {
        self.check_len(h)?;
        let scale = 1.0 / self.num_elements as f64;
        Ok(padded_dft(h, self.len())
            .iter()
            .map(|v| v.norm_sqr() * scale)
            .collect())
    }

    /// Codeword nearest to spatial frequency `psi` (cycles per element).
    pub fn nearest_to_spatial_frequency(&self, psi: f64) -> usize {
        let k = self.len() as f64;
        ((psi * k).round() as i64).rem_euclid(self.len() as i64) as usize
    }

    /// Codeword nearest to a boresight-relative angle for an array with the
    /// given element spacing (in wavelengths).
    pub fn nearest_to_angle(&self, spacing: f64, relative_angle: f64) -> usize {
        self.nearest_to_spatial_frequency(spacing * relative_angle.sin())
    }
}

/// Index of the codeword with the largest `|<c_k, h>|`; ties go to the
/// smallest index.
pub fn quantize(h: &[Complex64], codebook: &Codebook) -> Result<usize, FeatureError> {
    let gains = codebook.gains(h)?;
    argmax_first(&gains).ok_or(FeatureError::DegenerateInput)
}

/// First index of the maximum; `None` if every entry is zero or the slice is empty.
pub(crate) fn argmax_first(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.filter(|&(_, b)| b > 0.0).map(|(i, _)| i)
}

pub fn inner(w: &[Complex64], h: &[Complex64]) -> Complex64 {
    w.iter().zip(h).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(h: &[Complex64]) -> f64 {
    h.iter().map(|v| v.norm_sqr()).sum()
}

/// `|<w, h>|^2` for a unit-norm beamformer `w`.
pub fn beamforming_gain(h: &[Complex64], w: &[Complex64]) -> Result<f64, FeatureError> {
    if h.len() != w.len() {
        return Err(FeatureError::LengthMismatch {
            expected: w.len(),
            got: h.len(),
        });
    }
    let n = norm_sqr(w).sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(FeatureError::NotUnitNorm(n));
    }
    Ok(inner(w, h).norm_sqr())
}

/// `1 - gain(h, c_inferred) / gain(h, c_opt)` where `c_opt` is the codeword
/// chosen by [`quantize`]. Lies in [0, 1].
pub fn normalized_error(
    h: &[Complex64],
    inferred: usize,
    codebook: &Codebook,
) -> Result<f64, FeatureError> {
    if inferred >= codebook.len() {
        return Err(FeatureError::IndexOutOfRange {
            index: inferred,
            size: codebook.len(),
        });
    }
    let gains = codebook.gains(h)?;
    let best = argmax_first(&gains).ok_or(FeatureError::DegenerateInput)?;
    Ok((1.0 - gains[inferred] / gains[best]).clamp(0.0, 1.0))
}

/// Ratio `gain(h, c_k) / gain(h, c_opt)` in [0, 1].
pub fn gain_ratio(h: &[Complex64], index: usize, codebook: &Codebook) -> Result<f64, FeatureError> {
    normalized_error(h, index, codebook).map(|e| 1.0 - e)
}

/// Angular power spectrum on a grid of `G` spatial frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Aps {
    pub bins: Vec<f64>,
    /// Boresight-relative angles of the bins for a half-wavelength array.
    pub grid: Vec<f64>,
}

impl Aps {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Bin with the largest power (first on ties).
    pub fn peak(&self) -> Option<usize> {
        argmax_first(&self.bins)
    }

    /// Spatial frequency of bin `g` in cycles per element.
    pub fn spatial_frequency(&self, g: usize) -> f64 {
        aps_spatial_frequency(self.bins.len(), g)
    }
}

/// Spatial frequency `(g - floor(G/2)) / G` of ascending APS bin `g`.
pub fn aps_spatial_frequency(grid_size: usize, g: usize) -> f64 {
    (g as f64 - (grid_size / 2) as f64) / grid_size as f64
}

pub fn aps_grid(grid_size: usize) -> Vec<f64> {
    (0..grid_size)
        .map(|g| (2.0 * aps_spatial_frequency(grid_size, g)).clamp(-1.0, 1.0).asin())
        .collect()
}

/// Mean over snapshots of `(M / G) |<a_g / sqrt(M), h>|^2`, bins ordered by
/// ascending spatial frequency. The `M / G` factor makes every spectrum sum
/// to `||h||^2`.
pub fn compute_aps(samples: &[Vec<Complex64>], grid_size: usize) -> Result<Aps, FeatureError> {
    let first = samples.first().ok_or(FeatureError::Empty)?;
    let m = first.len();
    if m == 0 {
        return Err(FeatureError::Empty);
    }
    if grid_size < m {
        return Err(FeatureError::GridTooSmall { grid: grid_size, m });
    }
    let mut bins = vec![0.0; grid_size];
    let half = grid_size / 2;
    for h in samples {
        if h.len() != m {
            return Err(FeatureError::LengthMismatch {
                expected: m,
                got: h.len(),
            });
        }
        let spec = padded_dft(h, grid_size);
        for (g, b) in bins.iter_mut().enumerate() {
            let k = (g + grid_size - half) % grid_size;
            *b += spec[k].norm_sqr();
        }
    }
    let scale = 1.0 / (grid_size as f64 * samples.len() as f64);
    bins.iter_mut().for_each(|b| *b *= scale);
    Ok(Aps {
        bins,
        grid: aps_grid(grid_size),
    })
}
