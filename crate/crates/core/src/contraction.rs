//! The channel informativeness matrix `H(W)` and its norms.
//!
//! For a channel on `k` inputs (paired as `(2i, 2i + 1)`, 0-based),
//!
//! ```text
//! H(W)[i1, i2] = sum_y (W(y|2i1) - W(y|2i1+1)) (W(y|2i2) - W(y|2i2+1)) / sum_x W(y|x)
//! ```
//!
//! with outputs of zero row sum skipped. `H(W) = sum_y b_y b_y^T` is PSD;
//! its nuclear norm controls learning and private-coin testing, its
//! Frobenius norm public-coin testing.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::channels::{check_comm, check_ldp, Constraint, ConstraintSpec};
use crate::error::{Error, Result};
use crate::prob::Channel;

/// Largest input alphabet accepted by [`h_matrix`].
pub const MAX_K: usize = 1 << 12;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-9;
/// Eigenvalues smaller than this in magnitude are set to zero.
const EIGEN_ZERO: f64 = 1e-12;

/// A symmetric PSD matrix with its spectrum precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    entries: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    nuclear: f64,
    frobenius: f64,
    spectral_radius: f64,
    rank: usize,
}

impl HMatrix {
    /// Symmetrizes `m` as `(m + m^T)/2`, then diagonalizes.
    ///
    /// Eigenvalues are sorted ascending; ties keep the solver's order.
    pub fn from_symmetric(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidParameter(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
        }
        let scale = m.abs().max().max(1.0);
        let asym = (&m - m.transpose()).abs().max();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidParameter(format!("matrix is not symmetric (max |H - H^T| = {asym:e})")));
        }
        let entries = (&m + m.transpose()) * 0.5;
        let dim = entries.nrows();
        if dim == 0 {
            return Ok(Self {
                entries,
                eigenvalues: Vec::new(),
                eigenvectors: DMatrix::zeros(0, 0),
                nuclear: 0.0,
                frobenius: 0.0,
                spectral_radius: 0.0,
                rank: 0,
            });
        }
        let eig = SymmetricEigen::new(entries.clone());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let eigenvalues: Vec<f64> = order
            .iter()
            .map(|&i| {
                let l = eig.eigenvalues[i];
                if l.abs() < EIGEN_ZERO * scale {
                    0.0
                } else {
                    l
                }
            })
            .collect();
        let min = eigenvalues[0];
        if min < -PSD_TOL * scale {
            return Err(Error::NotPsd(min));
        }
        let eigenvalues: Vec<f64> = eigenvalues.into_iter().map(|l| l.max(0.0)).collect();
        let eigenvectors = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
        let nuclear = eigenvalues.iter().sum();
        let spectral_radius = eigenvalues.last().copied().unwrap_or(0.0);
        let rank = eigenvalues.iter().filter(|&&l| l > 0.0).count();
        let frobenius = entries.norm();
        Ok(Self { entries, eigenvalues, eigenvectors, nuclear, frobenius, spectral_radius, rank })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, in the order of [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn nuclear(&self) -> f64 {
        self.nuclear
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.frobenius * self.frobenius
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }
}

/// The vectors `b_y(i) = (W(y|2i) - W(y|2i+1)) / sqrt(sum_x W(y|x))` as
/// columns; unreachable outputs give zero columns.
pub fn decomposition_vectors(w: &Channel) -> Result<DMatrix<f64>> {
    let k = w.k();
    if !k.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("H(W) needs even k, got {k}")));
    }
    if k > MAX_K {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds the dense limit {MAX_K}")));
    }
    let sums = w.row_sums();
    Ok(DMatrix::from_fn(k / 2, w.m(), |i, y| {
        if sums[y] > 0.0 {
            (w.prob(y, 2 * i) - w.prob(y, 2 * i + 1)) / sums[y].sqrt()
        } else {
            0.0
        }
    }))
}

pub fn h_matrix(w: &Channel) -> Result<HMatrix> {
    let b = decomposition_vectors(w)?;
    HMatrix::from_symmetric(&b * b.transpose())
}

/// Entrywise mean of `H(W_j)` over the sequence.
pub fn h_bar(channels: &[Channel]) -> Result<HMatrix> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty channel sequence".into()))?;
    let k = first.k();
    let mut acc = DMatrix::zeros(k / 2, k / 2);
    for w in channels {
        if w.k() != k {
            return Err(Error::DimensionMismatch { expected: k, got: w.k() });
        }
        let b = decomposition_vectors(w)?;
        acc += &b * b.transpose();
    }
    HMatrix::from_symmetric(acc / channels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBoundCheck {
    pub constraint: String,
    pub nuclear: f64,
    pub frobenius_sq: f64,
    pub bound_nuclear: f64,
    pub bound_frobenius_sq: f64,
    pub pass: bool,
}

/// Relative slack on the norm-bound comparisons (the parity channel meets
/// the communication bounds with equality).
const BOUND_SLACK: f64 = 1e-9;

/// Checks the nuclear/Frobenius bounds of the constraint family on `w`.
///
/// Communication: `||H||_* <= 2^l`, `||H||_F^2 <= 2^(l+1)`.
/// LDP: `||H||_* <= (e^rho - 1)^2 / 2`, `||H||_F^2 <= ||H||_*^2`.
pub fn verify_norm_bounds(w: &Channel, spec: &ConstraintSpec) -> Result<NormBoundCheck> {
    if w.k() != spec.k {
        return Err(Error::DimensionMismatch { expected: spec.k, got: w.k() });
    }
    let h = h_matrix(w)?;
    let nuclear = h.nuclear();
    let frobenius_sq = h.frobenius_sq();
    let (bound_nuclear, bound_frobenius_sq) = match spec.constraint {
        Constraint::Comm { bits } => {
            if !check_comm(w, bits) {
                return Err(Error::ConstraintViolated(format!("more than 2^{bits} reachable outputs")));
            }
            let cap = 2f64.powi(bits as i32);
            (cap, 2.0 * cap)
        }
        Constraint::Ldp { rho } => {
            let check = check_ldp(w, rho);
            if !check.passes {
                return Err(Error::ConstraintViolated(format!(
                    "likelihood ratio {} exceeds e^{rho}",
                    check.worst_ratio
                )));
            }
            let b = (rho.exp() - 1.0).powi(2) / 2.0;
            (b, b * b)
        }
    };
    let pass = nuclear <= bound_nuclear * (1.0 + BOUND_SLACK) + BOUND_SLACK
        && frobenius_sq <= bound_frobenius_sq * (1.0 + BOUND_SLACK) + BOUND_SLACK
        && frobenius_sq <= nuclear * nuclear * (1.0 + BOUND_SLACK) + BOUND_SLACK;
    Ok(NormBoundCheck { constraint: spec.label(), nuclear, frobenius_sq, bound_nuclear, bound_frobenius_sq, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{random_channel, standard_channel, StandardChannel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_gives_twice_identity() {
        for k in [2, 4, 10] {
            let h = h_matrix(&standard_channel(StandardChannel::Identity, k).unwrap()).unwrap();
            let expected = DMatrix::identity(k / 2, k / 2) * 2.0;
            assert!((h.entries() - expected).abs().max() < 1e-15);
            assert_close!(h.nuclear(), k as f64, 1e-12);
            assert_close!(h.frobenius_sq(), 2.0 * k as f64, 1e-12);
            assert_eq!(h.rank(), k / 2);
        }
    }

    #[test]
    fn constant_gives_zero() {
        let h = h_matrix(&standard_channel(StandardChannel::Constant, 6).unwrap()).unwrap();
        assert_eq!(h.entries().abs().max(), 0.0);
        assert_eq!(h.nuclear(), 0.0);
        assert_eq!(h.rank(), 0);
    }

    #[test]
    fn parity_k4_is_all_ones() {
        let h = h_matrix(&standard_channel(StandardChannel::Parity, 4).unwrap()).unwrap();
        assert!((h.entries() - DMatrix::from_element(2, 2, 1.0)).abs().max() < 1e-15);
        assert_close!(h.nuclear(), 2.0, 1e-12);
        assert_close!(h.frobenius_sq(), 4.0, 1e-12);
        assert_eq!(h.eigenvalues()[0], 0.0);
        assert_close!(h.eigenvalues()[1], 2.0, 1e-14);
    }

    #[test]
    fn odd_k_rejected() {
        let w = standard_channel(StandardChannel::Identity, 3).unwrap();
        assert!(h_matrix(&w).is_err());
    }

    #[test]
    fn h_bar_examples() {
        let id = standard_channel(StandardChannel::Identity, 6).unwrap();
        let constant = standard_channel(StandardChannel::Constant, 6).unwrap();
        let same = h_bar(&[id.clone(), id.clone(), id.clone()]).unwrap();
        assert!((same.entries() - h_matrix(&id).unwrap().entries()).abs().max() < 1e-15);
        let avg = h_bar(&[id.clone(), constant]).unwrap();
        assert!((avg.entries() - DMatrix::identity(3, 3)).abs().max() < 1e-15);
        let other = standard_channel(StandardChannel::Identity, 4).unwrap();
        assert!(h_bar(&[id, other]).is_err());
        assert!(h_bar(&[]).is_err());
    }

    #[test]
    fn h_bar_nuclear_is_at_most_the_largest() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let chans: Vec<_> = (0..rng.random_range(1..5)).map(|_| random_channel(8, 3, &mut rng).unwrap()).collect();
            let bar = h_bar(&chans).unwrap();
            let max = chans.iter().map(|w| h_matrix(w).unwrap().nuclear()).fold(0.0, f64::max);
            assert!(bar.nuclear() <= max + 1e-12);
        }
    }

    #[test]
    fn verify_examples() {
        let parity = standard_channel(StandardChannel::Parity, 4).unwrap();
        let r = verify_norm_bounds(&parity, &ConstraintSpec::comm(1, 4).unwrap()).unwrap();
        assert!(r.pass);
        assert_close!(r.nuclear, 2.0, 1e-12);
        assert_close!(r.frobenius_sq, 4.0, 1e-12);
        assert_eq!((r.bound_nuclear, r.bound_frobenius_sq), (2.0, 4.0));

        let rho = 2f64.ln();
        let rr = standard_channel(StandardChannel::RandomizedResponse { rho }, 4).unwrap();
        let r = verify_norm_bounds(&rr, &ConstraintSpec::ldp(rho, 4).unwrap()).unwrap();
        assert_close!(r.nuclear, 0.16, 1e-12);
        assert_close!(r.bound_nuclear, 0.5, 1e-12);
        assert!(r.pass);

        let constant = standard_channel(StandardChannel::Constant, 4).unwrap();
        for spec in [ConstraintSpec::comm(1, 4).unwrap(), ConstraintSpec::ldp(0.1, 4).unwrap()] {
            let r = verify_norm_bounds(&constant, &spec).unwrap();
            assert_eq!(r.nuclear, 0.0);
            assert!(r.pass);
        }

        let id = standard_channel(StandardChannel::Identity, 4).unwrap();
        assert!(matches!(
            verify_norm_bounds(&id, &ConstraintSpec::comm(1, 4).unwrap()),
            Err(Error::ConstraintViolated(_))
        ));
    }

    #[test]
    fn randomized_response_closed_form() {
        for (k, rho) in [(4, 0.3), (8, 1.0), (16, 2.5)] {
            let rr = standard_channel(StandardChannel::RandomizedResponse { rho }, k).unwrap();
            let e = f64::exp(rho);
            let expected = k as f64 * (e - 1.0).powi(2) / (e + k as f64 - 1.0).powi(2);
            assert_close!(h_matrix(&rr).unwrap().nuclear(), expected, 1e-12);
        }
    }

    #[test]
    fn from_symmetric_rejects_bad_matrices() {
        assert!(HMatrix::from_symmetric(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(matches!(
            HMatrix::from_symmetric(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])),
            Err(Error::NotPsd(_))
        ));
        assert!(HMatrix::from_symmetric(DMatrix::zeros(2, 3)).is_err());
    }
}
