//! Finite distributions, channels, and the divergences between them.
//!
//! Alphabets are index sets `0..k` (inputs) and `0..m` (outputs). A channel
//! is stored as an `m x k` column-stochastic matrix whose `(y, x)` entry is
//! `W(y | x)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row/column sums accepted at construction.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Default cap on the size of an enumerated product space.
pub const DEFAULT_PRODUCT_CAP: u128 = 10_000_000;

/// A probability vector over `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates and renormalizes `probs`.
    ///
    /// Entries must be finite and nonnegative (values down to `-1e-9` are
    /// treated as rounding noise and clamped to zero) and must sum to one
    /// within [`STOCHASTIC_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        let mut probs = probs;
        for (x, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidDistribution(format!("entry {x} is not finite")));
            }
            if *p < -STOCHASTIC_TOL {
                return Err(Error::InvalidDistribution(format!("entry {x} is negative ({p})")));
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}, not 1")));
        }
        if !at_rounding_level(total, probs.len()) {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidDistribution("alphabet size must be positive".into()));
        }
        Ok(Self { probs: vec![1.0 / k as f64; k] })
    }

    pub fn point_mass(k: usize, x: usize) -> Result<Self> {
        if x >= k {
            return Err(Error::InvalidParameter(format!("point {x} outside alphabet of size {k}")));
        }
        let mut probs = vec![0.0; k];
        probs[x] = 1.0;
        Ok(Self { probs })
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, x: usize) -> &f64 {
        &self.probs[x]
    }
}

/// Whether a sum of `terms` entries differs from 1 only by accumulated rounding.
fn at_rounding_level(total: f64, terms: usize) -> bool {
    (total - 1.0).abs() <= terms as f64 * f64::EPSILON
}

/// A column-stochastic transition matrix `W(y | x)` from `0..k` to `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    w: DMatrix<f64>,
}

impl Channel {
    /// Builds a channel from an `m x k` matrix with entry `(y, x) = W(y | x)`.
    ///
    /// Columns are checked against [`STOCHASTIC_TOL`] and renormalized once.
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let (m, k) = w.shape();
        if m == 0 || k == 0 {
            return Err(Error::InvalidChannel(format!("empty matrix ({m}x{k})")));
        }
        let mut w = w;
        for x in 0..k {
            let mut col = w.column_mut(x);
            for (y, v) in col.iter_mut().enumerate() {
                if !v.is_finite() || *v < -STOCHASTIC_TOL || *v > 1.0 + STOCHASTIC_TOL {
                    return Err(Error::InvalidChannel(format!("entry W({y}|{x}) = {v} outside [0,1]")));
                }
                *v = v.clamp(0.0, 1.0);
            }
            let total: f64 = col.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidChannel(format!("column {x} sums to {total}, not 1")));
            }
            if !at_rounding_level(total, m) {
                col.iter_mut().for_each(|v| *v /= total);
            }
        }
        Ok(Self { w })
    }

    /// Builds a channel from output rows: `rows[y][x] = W(y | x)`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if let Some((y, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != k) {
            return Err(Error::InvalidChannel(format!("row {y} has {} entries, expected {k}", row.len())));
        }
        Self::new(DMatrix::from_fn(m, k, |y, x| rows[y][x]))
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    /// `W(y | x)`.
    pub fn prob(&self, y: usize, x: usize) -> f64 {
        self.w[(y, x)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.w.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Column `x` as a distribution over outputs.
    pub fn output_given(&self, x: usize) -> Distribution {
        Distribution { probs: self.w.column(x).iter().copied().collect() }
    }

    /// `sum_x W(y | x)` for every output `y`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.w.row_iter().map(|r| r.sum()).collect()
    }

    /// Pads the output alphabet with unreachable outputs up to `m`.
    fn padded(&self, m: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, self.k());
        out.view_mut((0, 0), (self.m(), self.k())).copy_from(&self.w);
        out
    }
}

/// Which divergence [`divergence`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Tv,
    Kl,
    Chi2,
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceKind::Tv => "tv",
            DivergenceKind::Kl => "kl",
            DivergenceKind::Chi2 => "chi2",
        })
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tv" => Ok(DivergenceKind::Tv),
            "kl" => Ok(DivergenceKind::Kl),
            "chi2" => Ok(DivergenceKind::Chi2),
            other => Err(Error::InvalidParameter(format!("unknown divergence kind {other:?}"))),
        }
    }
}

/// Total variation, KL (nats) or chi-square distance of `p` from `q`.
///
/// KL and chi-square return `f64::INFINITY` when `p` puts mass where `q`
/// does not.
pub fn divergence(p: &Distribution, q: &Distribution, kind: DivergenceKind) -> Result<f64> {
    divergence_slices(p.probs(), q.probs(), kind)
}

/// [`divergence`] on raw probability vectors (used by the product-space
/// oracles, which never materialize a [`Distribution`]).
pub fn divergence_slices(p: &[f64], q: &[f64], kind: DivergenceKind) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: q.len(), got: p.len() });
    }
    let pairs = p.iter().zip(q);
    let value = match kind {
        DivergenceKind::Tv => 0.5 * pairs.map(|(a, b)| (a - b).abs()).sum::<f64>(),
        DivergenceKind::Kl => {
            let mut acc = 0.0;
            for (&a, &b) in pairs {
                if a > 0.0 {
                    if b <= 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    acc += a * (a / b).ln();
                }
            }
            acc.max(0.0)
        }
        DivergenceKind::Chi2 => {
            let mut acc = 0.0;
            for (&a, &b) in pairs {
                if b <= 0.0 {
                    if a > 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    continue;
                }
                acc += (a - b) * (a - b) / b;
            }
            acc
        }
    };
    Ok(value)
}

/// Output law `y -> sum_x p(x) W(y | x)`.
pub fn apply_channel(w: &Channel, p: &Distribution) -> Result<Distribution> {
    if w.k() != p.k() {
        return Err(Error::DimensionMismatch { expected: w.k(), got: p.k() });
    }
    let out = w.matrix() * nalgebra::DVector::from_column_slice(p.probs());
    Distribution::new(out.iter().copied().collect())
}

/// Convex combination of channels sharing an input alphabet.
///
/// Output alphabets are unioned by index: a channel with fewer outputs is
/// padded with unreachable outputs.
pub fn mix_channels(parts: &[(Channel, f64)]) -> Result<Channel> {
    let (first, _) = parts
        .first()
        .ok_or_else(|| Error::InvalidParameter("mix of zero channels".into()))?;
    let k = first.k();
    let m = parts.iter().map(|(c, _)| c.m()).max().unwrap_or(0);
    let mut total = 0.0;
    let mut acc = DMatrix::zeros(m, k);
    for (c, weight) in parts {
        if c.k() != k {
            return Err(Error::DimensionMismatch { expected: k, got: c.k() });
        }
        if !weight.is_finite() || *weight < 0.0 {
            return Err(Error::InvalidParameter(format!("mixing weight {weight} is negative")));
        }
        total += weight;
        acc += c.padded(m) * *weight;
    }
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidParameter(format!("mixing weights sum to {total}, not 1")));
    }
    Channel::new(acc)
}

/// An ordered list of independent factors whose product law is enumerated.
#[derive(Debug, Clone)]
pub struct ProductSpec {
    factors: Vec<Distribution>,
    cap: u128,
}

impl ProductSpec {
    pub fn new(factors: Vec<Distribution>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("product of zero factors".into()));
        }
        Ok(Self { factors, cap: DEFAULT_PRODUCT_CAP })
    }

    /// Factors given as channel outputs `W_j ∘ p_j`.
    pub fn from_channels(pairs: &[(&Channel, &Distribution)]) -> Result<Self> {
        let factors = pairs
            .iter()
            .map(|(w, p)| apply_channel(w, p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    pub fn with_cap(mut self, cap: u128) -> Self {
        self.cap = cap;
        self
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Distribution] {
        &self.factors
    }

    /// Number of joint outcomes, `prod_j m_j`.
    pub fn size(&self) -> u128 {
        self.factors
            .iter()
            .try_fold(1u128, |acc, f| acc.checked_mul(f.k() as u128))
            .unwrap_or(u128::MAX)
    }
}

/// Joint law of the product, indexed in mixed radix with the first factor
/// most significant.
pub fn enumerate_product(spec: &ProductSpec) -> Result<Vec<f64>> {
    let size = spec.size();
    if size > spec.cap {
        return Err(Error::CapExceeded { size, cap: spec.cap });
    }
    product_of_slices(spec.factors.iter().map(Distribution::probs))
}

/// Tensor product of probability vectors without a cap check.
pub(crate) fn product_of_slices<'a>(factors: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    let mut joint = vec![1.0];
    for f in factors {
        let mut next = Vec::with_capacity(joint.len() * f.len());
        for &a in &joint {
            next.extend(f.iter().map(|&b| a * b));
        }
        joint = next;
    }
    Ok(joint)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn divergence_examples() {
        let half = d(&[0.5, 0.5]);
        for kind in [DivergenceKind::Tv, DivergenceKind::Kl, DivergenceKind::Chi2] {
            assert_eq!(divergence(&half, &half, kind).unwrap(), 0.0);
        }
        let p = d(&[0.6, 0.4]);
        assert_close!(divergence(&p, &half, DivergenceKind::Tv).unwrap(), 0.1, 1e-15);
        assert_close!(divergence(&p, &half, DivergenceKind::Chi2).unwrap(), 0.04, 1e-15);
    }

    #[test]
    fn divergence_outside_support_is_infinite() {
        let p = d(&[0.5, 0.5]);
        let q = d(&[1.0, 0.0]);
        assert_eq!(divergence(&p, &q, DivergenceKind::Kl).unwrap(), f64::INFINITY);
        assert_eq!(divergence(&p, &q, DivergenceKind::Chi2).unwrap(), f64::INFINITY);
        assert_close!(divergence(&p, &q, DivergenceKind::Tv).unwrap(), 0.5, 1e-15);
        // the reverse direction is finite
        assert!(divergence(&q, &p, DivergenceKind::Kl).unwrap().is_finite());
    }

    #[test]
    fn divergence_dimension_mismatch() {
        let err = divergence(&d(&[1.0]), &d(&[0.5, 0.5]), DivergenceKind::Tv).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn distribution_rejects_bad_input() {
        assert!(Distribution::new(vec![0.5, 0.6]).is_err());
        assert!(Distribution::new(vec![-0.1, 1.1]).is_err());
        assert!(Distribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(Distribution::new(vec![]).is_err());
        let p = Distribution::new(vec![0.5 + 4e-10, 0.5]).unwrap();
        assert_close!(p.probs().iter().sum::<f64>(), 1.0, 1e-15);
    }

    #[test]
    fn apply_channel_examples() {
        let p = d(&[0.1, 0.2, 0.3, 0.4]);
        let id = Channel::new(DMatrix::identity(4, 4)).unwrap();
        assert_eq!(apply_channel(&id, &p).unwrap(), p);

        let constant = Channel::new(DMatrix::from_element(3, 4, 1.0 / 3.0)).unwrap();
        for v in apply_channel(&constant, &p).unwrap().probs() {
            assert_close!(*v, 1.0 / 3.0, 1e-15);
        }

        // x (1-based) odd -> y = 1
        let parity = Channel::from_rows(&[vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0, 0.0]]).unwrap();
        let out = apply_channel(&parity, &Distribution::uniform(4).unwrap()).unwrap();
        assert_eq!(out.probs(), &[0.5, 0.5]);
        assert!(apply_channel(&parity, &d(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn channel_rejects_non_stochastic_columns() {
        assert!(Channel::from_rows(&[vec![0.5, 1.0], vec![0.4, 0.0]]).is_err());
        assert!(Channel::from_rows(&[vec![1.5, 1.0], vec![-0.5, 0.0]]).is_err());
        assert!(Channel::from_rows(&[vec![1.0, 1.0], vec![0.0]]).is_err());
    }

    #[test]
    fn mix_examples() {
        let a = Channel::from_rows(&[vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]).unwrap();
        let b = Channel::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(mix_channels(&[(a.clone(), 1.0)]).unwrap(), a);
        let mixed = mix_channels(&[(a.clone(), 0.5), (b, 0.5)]).unwrap();
        assert!(mixed.matrix().iter().all(|&v| v == 0.0 || v == 0.5 || v == 1.0));
        assert!(mix_channels(&[(a.clone(), 0.7)]).is_err());
        let other_k = Channel::new(DMatrix::identity(2, 2)).unwrap();
        assert!(mix_channels(&[(a, 0.5), (other_k, 0.5)]).is_err());
    }

    #[test]
    fn mix_pads_smaller_output_alphabets() {
        let small = Channel::new(DMatrix::from_element(1, 3, 1.0)).unwrap();
        let big = Channel::new(DMatrix::identity(3, 3)).unwrap();
        let mixed = mix_channels(&[(small, 0.5), (big, 0.5)]).unwrap();
        assert_eq!(mixed.m(), 3);
        assert_close!(mixed.prob(0, 0), 1.0, 1e-15);
        assert_close!(mixed.prob(0, 1), 0.5, 1e-15);
    }

    #[test]
    fn product_examples() {
        let coin = d(&[0.6, 0.4]);
        let single = enumerate_product(&ProductSpec::new(vec![coin.clone()]).unwrap()).unwrap();
        assert_eq!(single, coin.probs());

        let fair = d(&[0.5, 0.5]);
        let two = enumerate_product(&ProductSpec::new(vec![fair.clone(), fair.clone()]).unwrap()).unwrap();
        assert_eq!(two, vec![0.25; 4]);

        let mixed = enumerate_product(&ProductSpec::new(vec![coin, fair.clone()]).unwrap()).unwrap();
        for (a, b) in mixed.iter().zip([0.3, 0.3, 0.2, 0.2]) {
            assert_close!(*a, b, 1e-15);
        }

        let capped = ProductSpec::new(vec![fair.clone(); 4]).unwrap().with_cap(8);
        assert!(matches!(enumerate_product(&capped), Err(Error::CapExceeded { size: 16, cap: 8 })));
    }

    #[test]
    fn product_from_channels_applies_each_factor() {
        let id = Channel::new(DMatrix::identity(2, 2)).unwrap();
        let flip = Channel::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = d(&[0.75, 0.25]);
        let spec = ProductSpec::from_channels(&[(&id, &p), (&flip, &p)]).unwrap();
        let joint = enumerate_product(&spec).unwrap();
        for (a, b) in joint.iter().zip([0.1875, 0.5625, 0.0625, 0.1875]) {
            assert_close!(*a, b, 1e-15);
        }
    }
}
