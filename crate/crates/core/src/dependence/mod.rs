//! Dependence measures between quantized CSI at two sites.
//!
//! Plug-in entropy and mutual information over codebook indices capture any
//! functional dependence, while the average canonical correlation only sees
//! linear structure. The two together separate "linearly uncorrelated" from
//! "independent".

mod cca;
mod scaling;

use std::collections::BTreeMap;

pub use cca::{avg_canonical_correlation, canonical_correlations, stack_real_imag, CcaError};
pub use scaling::{
    estimate_aoa_ml, remote_aoa_scaling, LocalizationMode, ScalingConfig, ScalingError,
    ScalingReport,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DependenceError {
    #[error("no samples")]
    Empty,
    #[error("symbol {symbol} outside alphabet of size {size}")]
    SymbolOutOfRange { symbol: usize, size: usize },
    #[error("count matrix has {got} cells, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// `Σ (c/n) log2(n/c)` over non-zero counts, in the given order.
fn entropy_from_counts<'a>(counts: impl IntoIterator<Item = &'a u64>, n: u64) -> f64 {
    let nf = n as f64;
    counts
        .into_iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c = c as f64;
            (c / nf) * (nf / c).log2()
        })
        .sum()
}

/// Plug-in (maximum-likelihood) Shannon entropy in bits.
pub fn plug_in_entropy<T: Ord>(symbols: &[T]) -> Result<f64, DependenceError> {
    if symbols.is_empty() {
        return Err(DependenceError::Empty);
    }
    let mut counts: BTreeMap<&T, u64> = BTreeMap::new();
    for s in symbols {
        *counts.entry(s).or_default() += 1;
    }
    Ok(entropy_from_counts(counts.values(), symbols.len() as u64))
}

/// Empirical joint law of two discrete variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    n: u64,
}

impl DiscreteJoint {
    /// From a row-major `rows × cols` count matrix.
    pub fn from_counts(rows: usize, cols: usize, counts: Vec<u64>) -> Result<Self, DependenceError> {
        if counts.len() != rows * cols {
            return Err(DependenceError::ShapeMismatch {
                expected: rows * cols,
                got: counts.len(),
            });
        }
        let n = counts.iter().sum();
        if n == 0 {
            return Err(DependenceError::Empty);
        }
        Ok(Self {
            rows,
            cols,
            counts,
            n,
        })
    }

    /// Tallies `(a, b)` index pairs with alphabets of size `rows` and `cols`.
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (usize, usize)>,
        rows: usize,
        cols: usize,
    ) -> Result<Self, DependenceError> {
        let mut counts = vec![0u64; rows * cols];
        for (a, b) in pairs {
            if a >= rows {
                return Err(DependenceError::SymbolOutOfRange { symbol: a, size: rows });
            }
            if b >= cols {
                return Err(DependenceError::SymbolOutOfRange { symbol: b, size: cols });
            }
            counts[a * cols + b] += 1;
        }
        Self::from_counts(rows, cols, counts)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    pub fn count(&self, a: usize, b: usize) -> u64 {
        self.counts[a * self.cols + b]
    }

    pub fn row_marginal(&self) -> Vec<u64> {
        (0..self.rows)
            .map(|a| self.counts[a * self.cols..(a + 1) * self.cols].iter().sum())
            .collect()
    }

    pub fn col_marginal(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|b| (0..self.rows).map(|a| self.count(a, b)).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0u64; self.counts.len()];
        for a in 0..self.rows {
            for b in 0..self.cols {
                counts[b * self.rows + a] = self.count(a, b);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            counts,
            n: self.n,
        }
    }

    pub fn entropy_rows(&self) -> f64 {
        entropy_from_counts(&self.row_marginal(), self.n)
    }

    pub fn entropy_cols(&self) -> f64 {
        entropy_from_counts(&self.col_marginal(), self.n)
    }

    /// Number of distinct symbols actually observed on each side.
    pub fn support_sizes(&self) -> (usize, usize) {
        (
            self.row_marginal().iter().filter(|&&c| c > 0).count(),
            self.col_marginal().iter().filter(|&&c| c > 0).count(),
        )
    }
}

/// Plug-in mutual information in bits, clamped to `[0, min(H(A), H(B))]`.
///
/// Terms use the same `(c/n) log2(...)` form as [`plug_in_entropy`], so a
/// diagonal joint reproduces the marginal entropy bit for bit.
pub fn mutual_information(joint: &DiscreteJoint) -> f64 {
    let rows = joint.row_marginal();
    let cols = joint.col_marginal();
    let n = joint.n as f64;
    let mut mi = 0.0;
    for a in 0..joint.rows {
        for b in 0..joint.cols {
            let c = joint.count(a, b);
            if c == 0 {
                continue;
            }
            let c = c as f64;
            let ratio = (c * n) / (rows[a] as f64 * cols[b] as f64);
            mi += (c / n) * ratio.log2();
        }
    }
    let h_a = entropy_from_counts(&rows, joint.n);
    let h_b = entropy_from_counts(&cols, joint.n);
    mi.min(h_a).min(h_b).max(0.0)
}

/// First-order (Miller–Madow style) bias of the plug-in MI estimate under
/// independence: `(Ka - 1)(Kb - 1) / (2 n ln 2)` with observed supports.
pub fn independence_bias_bits(joint: &DiscreteJoint) -> f64 {
    let (ka, kb) = joint.support_sizes();
    (ka.saturating_sub(1) * kb.saturating_sub(1)) as f64 / (2.0 * joint.n as f64 * std::f64::consts::LN_2)
}

/// Summary row for a dependence analysis run.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceSummary {
    pub samples: usize,
    pub alphabet_a: usize,
    pub alphabet_b: usize,
    pub entropy_b_bits: f64,
    pub mi_bits: f64,
    pub avg_cca: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn test_entropy_examples() {
        assert_eq!(plug_in_entropy(&[0, 1, 2, 3]).unwrap(), 2.0);
        assert_eq!(plug_in_entropy(&["a"; 7]).unwrap(), 0.0);
        assert_eq!(plug_in_entropy(&['a', 'a', 'b', 'c']).unwrap(), 1.5);
        assert_eq!(plug_in_entropy::<u8>(&[]), Err(DependenceError::Empty));
    }

    #[test]
    fn test_mi_identity_joint_one_bit() {
        let j = DiscreteJoint::from_counts(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(mutual_information(&j), 1.0);
    }

    #[test]
    fn test_mi_product_joint_zero() {
        let j = DiscreteJoint::from_counts(2, 3, vec![1, 2, 3, 2, 4, 6]).unwrap();
        assert!(mutual_information(&j).abs() < 1e-15);
    }

    #[test]
    fn test_mi_hand_evaluated_joint() {
        // p = [[1/4, 1/4], [0, 1/2]]; p(a) = [1/2, 1/2]; p(b) = [1/4, 3/4]
        let j = DiscreteJoint::from_counts(2, 2, vec![1, 1, 0, 2]).unwrap();
        let expect = 0.25 * (0.25f64 / (0.5 * 0.25)).log2()
            + 0.25 * (0.25f64 / (0.5 * 0.75)).log2()
            + 0.5 * (0.5f64 / (0.5 * 0.75)).log2();
        assert!((mutual_information(&j) - expect).abs() < 1e-12);
    }

    #[test]
    fn test_from_pairs_checks_range() {
        assert!(matches!(
            DiscreteJoint::from_pairs([(0, 0), (3, 1)], 2, 2),
            Err(DependenceError::SymbolOutOfRange { symbol: 3, .. })
        ));
        assert_eq!(DiscreteJoint::from_pairs(std::iter::empty(), 2, 2), Err(DependenceError::Empty));
    }

    fn joint_strategy() -> impl Strategy<Value = DiscreteJoint> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            prop::collection::vec(0u64..20, r * c).prop_filter_map("empty", move |v| {
                DiscreteJoint::from_counts(r, c, v).ok()
            })
        })
    }

    proptest! {
        #[test]
        fn prop_mi_bounded_by_entropies(j in joint_strategy()) {
            let mi = mutual_information(&j);
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= j.entropy_rows());
            prop_assert!(mi <= j.entropy_cols());
        }

        #[test]
        fn prop_mi_symmetric(j in joint_strategy()) {
            prop_assert!((mutual_information(&j) - mutual_information(&j.transpose())).abs() <= 1e-12);
        }

        #[test]
        fn prop_self_information_equals_entropy(xs in prop::collection::vec(0usize..8, 1..200)) {
            let j = DiscreteJoint::from_pairs(xs.iter().map(|&x| (x, x)), 8, 8).unwrap();
            prop_assert_eq!(mutual_information(&j), plug_in_entropy(&xs).unwrap());
        }

        #[test]
        fn prop_entropy_at_most_log_alphabet(xs in prop::collection::vec(0usize..8, 1..200)) {
            let distinct = xs.iter().collect::<std::collections::BTreeSet<_>>().len();
            prop_assert!(plug_in_entropy(&xs).unwrap() <= (distinct as f64).log2() + 1e-12);
        }
    }
}
