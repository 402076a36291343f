//! Canonical correlation analysis via the whitened cross-covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CcaError {
    #[error("X has {x} rows but Y has {y}")]
    RowMismatch { x: usize, y: usize },
    #[error("need at least two samples and one column per block")]
    TooSmall,
    #[error("covariance of {block} is rank deficient (min eigenvalue {min_eig:e}); use ridge > 0")]
    RankDeficient { block: &'static str, min_eig: f64 },
    #[error("non-finite input")]
    NonFinite,
}

/// Real-imaginary concatenation `[Re h; Im h]` of a complex vector.
pub fn stack_real_imag(h: &[Complex64]) -> Vec<f64> {
    h.iter().map(|v| v.re).chain(h.iter().map(|v| v.im)).collect()
}

fn centered_gram(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() as f64;
    a.transpose() * b / (n - 1.0)
}

fn center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for j in 0..c.ncols() {
        let mean = c.column(j).mean();
        c.column_mut(j).add_scalar_mut(-mean);
    }
    c
}

/// `C^{-1/2}` after adding `ridge · trace(C) / dim` to the diagonal.
fn inv_sqrt(mut c: DMatrix<f64>, ridge: f64, block: &'static str) -> Result<DMatrix<f64>, CcaError> {
    let dim = c.nrows();
    let shift = ridge * c.trace() / dim as f64;
    for i in 0..dim {
        c[(i, i)] += shift;
    }
    let eig = SymmetricEigen::new(c);
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * max) || max <= 0.0 {
        return Err(CcaError::RankDeficient { block, min_eig: min });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// All `min(p, q)` canonical correlations, descending, clamped to [0, 1].
pub fn canonical_correlations(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<Vec<f64>, CcaError> {
    if x.nrows() != y.nrows() {
        return Err(CcaError::RowMismatch { x: x.nrows(), y: y.nrows() });
    }
    if x.nrows() < 2 || x.ncols() == 0 || y.ncols() == 0 {
        return Err(CcaError::TooSmall);
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(CcaError::NonFinite);
    }
    let xc = center(x);
    let yc = center(y);
    let wx = inv_sqrt(centered_gram(&xc, &xc), ridge, "X")?;
    let wy = inv_sqrt(centered_gram(&yc, &yc), ridge, "Y")?;
    let k = wx * centered_gram(&xc, &yc) * wy;
    let mut s: Vec<f64> = k.singular_values().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(x.ncols().min(y.ncols()));
    Ok(s)
}

/// Mean of the canonical correlation coefficients between the column spaces
/// of `x` (n × p) and `y` (n × q).
pub fn avg_canonical_correlation(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<f64, CcaError> {
    let s = canonical_correlations(x, y, ridge)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
