//! Perturbed families `{p_z}` around a nominal distribution `q`.
//!
//! Inputs are grouped in consecutive pairs `(2i, 2i + 1)` (0-based). A
//! member moves mass within each pair:
//!
//! ```text
//! p_z(2i)     = q(2i)     * (1 + s * z_i)
//! p_z(2i + 1) = q(2i + 1) * (1 - s * z_i)
//! ```
//!
//! where `s` is the family scale and `z` is drawn from the parameter law.
//! Paninski's family is `q` uniform, `s = 2ε`, `z` uniform on the cube.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{Channel, Distribution};
use crate::rademacher::{random_signs, MAX_EXHAUSTIVE_SIGNS};
use crate::rng;

/// Tolerance on `q(2i) == q(2i + 1)` and on uniformity of `q`.
const PAIR_TOL: f64 = 1e-12;

/// One-sided 99% standard normal quantile.
const Z_99: f64 = 2.326_347_874_040_841;

/// Law of the parameter `Z`: always `Z = V Y` with `Y` uniform on
/// `{-1, +1}^r`.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamLaw {
    /// `Z` uniform on `{-1, +1}^dim` (`V = I`).
    Rademacher { dim: usize },
    /// `Z = V Y` for a `dim x r` matrix `V`.
    Linear { v: DMatrix<f64> },
}

impl ParamLaw {
    pub fn dim(&self) -> usize {
        match self {
            ParamLaw::Rademacher { dim } => *dim,
            ParamLaw::Linear { v } => v.nrows(),
        }
    }

    /// Length `r` of the underlying sign vector `Y`.
    pub fn sign_count(&self) -> usize {
        match self {
            ParamLaw::Rademacher { dim } => *dim,
            ParamLaw::Linear { v } => v.ncols(),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            ParamLaw::Rademacher { dim } => DMatrix::identity(*dim, *dim),
            ParamLaw::Linear { v } => v.clone(),
        }
    }

    /// Whether expectations over `Y` are computed by full enumeration.
    pub fn is_exhaustive(&self) -> bool {
        self.sign_count() <= MAX_EXHAUSTIVE_SIGNS
    }

    pub fn map(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            ParamLaw::Rademacher { .. } => y.clone(),
            ParamLaw::Linear { v } => v * y,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.map(&random_signs(self.sign_count(), rng))
    }

    /// `sup |Z_i|` over the support, i.e. the largest row 1-norm of `V`.
    pub fn sup_abs_coordinate(&self) -> f64 {
        match self {
            ParamLaw::Rademacher { dim } => {
                if *dim == 0 {
                    0.0
                } else {
                    1.0
                }
            }
            ParamLaw::Linear { v } => v.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedFamily {
    q: Distribution,
    scale: f64,
    law: ParamLaw,
}

impl PerturbedFamily {
    /// `q` must have even support size, full support and equal mass on the
    /// two inputs of every pair (so every `p_z` sums to one).
    pub fn new(q: Distribution, scale: f64, law: ParamLaw) -> Result<Self> {
        let k = q.k();
        if !k.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("perturbed families need even k, got {k}")));
        }
        if !q.is_strictly_positive() {
            return Err(Error::InvalidDistribution("nominal distribution must have full support".into()));
        }
        for i in 0..k / 2 {
            let (a, b) = (q[2 * i], q[2 * i + 1]);
            if (a - b).abs() > PAIR_TOL * a.max(b).max(1.0) {
                return Err(Error::InvalidDistribution(format!(
                    "nominal mass differs within pair {i}: {a} vs {b}"
                )));
            }
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidParameter(format!("scale must be nonnegative, got {scale}")));
        }
        if law.dim() != k / 2 {
            return Err(Error::DimensionMismatch { expected: k / 2, got: law.dim() });
        }
        if let ParamLaw::Linear { v } = &law {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter("parameter matrix has non-finite entries".into()));
            }
        }
        Ok(Self { q, scale, law })
    }

    pub fn q(&self) -> &Distribution {
        &self.q
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn law(&self) -> &ParamLaw {
        &self.law
    }

    pub fn k(&self) -> usize {
        self.q.k()
    }

    pub fn dim(&self) -> usize {
        self.q.k() / 2
    }

    /// Nominal uniform and `Z` uniform on the cube: the setting in which the
    /// closed forms hold.
    pub fn is_uniform_rademacher(&self) -> bool {
        matches!(self.law, ParamLaw::Rademacher { .. }) && is_uniform(&self.q)
    }

    /// Every member in the support of the law is a valid distribution.
    pub fn all_members_valid(&self) -> bool {
        self.scale * self.law.sup_abs_coordinate() <= 1.0 + PAIR_TOL
    }

    /// Entries of `p_z`, without a validity check.
    pub fn member_probs(&self, z: &[f64]) -> Vec<f64> {
        let mut p = self.q.probs().to_vec();
        for (i, zi) in z.iter().enumerate() {
            p[2 * i] *= 1.0 + self.scale * zi;
            p[2 * i + 1] *= 1.0 - self.scale * zi;
        }
        p
    }

    /// `p_z`, rejecting parameters that produce a negative entry.
    pub fn member(&self, z: &[f64]) -> Result<Distribution> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        let p = self.member_probs(z);
        let min_entry = p.iter().copied().fold(f64::INFINITY, f64::min);
        if min_entry < -PAIR_TOL {
            return Err(Error::InvalidMember { min_entry });
        }
        Distribution::new(p.into_iter().map(|v| v.max(0.0)).collect())
    }

    /// The normalized perturbation `δ_z`, entries `±s z_i`.
    pub fn perturbation(&self, z: &[f64]) -> PerturbationVector {
        let delta = z.iter().flat_map(|zi| [self.scale * zi, -self.scale * zi]).collect();
        PerturbationVector { delta, weights: self.q.probs().to_vec() }
    }

    /// `d_TV(p_z, q) = (1/2) sum_x q(x) |δ_z(x)|`.
    pub fn tv_from_nominal(&self, z: &[f64]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(i, zi)| 0.5 * self.scale * zi.abs() * (self.q[2 * i] + self.q[2 * i + 1]))
            .sum()
    }

    /// Matrix `G` of the bilinear form `(z, z') -> <δ_z^W, δ_z'^W>` under
    /// `W ∘ q` (or `<δ_z, δ_z'>` under `q` when no channel is given).
    ///
    /// Outputs with zero mass under `W ∘ q` are skipped.
    pub fn gram(&self, channel: Option<&Channel>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let s = self.scale;
        let Some(w) = channel else {
            return Ok(DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    s * s * (self.q[2 * i] + self.q[2 * i + 1])
                } else {
                    0.0
                }
            }));
        };
        if w.k() != self.k() {
            return Err(Error::DimensionMismatch { expected: self.k(), got: w.k() });
        }
        let mass = w.matrix() * DVector::from_column_slice(self.q.probs());
        let m = w.m();
        // column i: the induced numerator for z = e_i, scaled by 1/sqrt(mass)
        let mut u = DMatrix::zeros(m, d);
        for y in 0..m {
            if mass[y] <= 0.0 {
                continue;
            }
            let norm = mass[y].sqrt();
            for i in 0..d {
                let a = self.q[2 * i] * w.prob(y, 2 * i) - self.q[2 * i + 1] * w.prob(y, 2 * i + 1);
                u[(y, i)] = s * a / norm;
            }
        }
        let g = u.transpose() * &u;
        Ok((&g + g.transpose()) * 0.5)
    }

    /// A draw of `Z` whose member is a valid distribution, resampling invalid
    /// draws. Returns the draw and the number of rejections.
    pub fn sample_valid<R: Rng + ?Sized>(&self, rng: &mut R, max_attempts: usize) -> Result<(DVector<f64>, usize)> {
        for rejected in 0..max_attempts {
            let z = self.law.sample(rng);
            if z.iter().all(|zi| self.scale * zi.abs() <= 1.0 + PAIR_TOL) {
                return Ok((z, rejected));
            }
        }
        Err(Error::InvalidParameter(format!("no valid member in {max_attempts} draws")))
    }
}

pub(crate) fn is_uniform(q: &Distribution) -> bool {
    let target = 1.0 / q.k() as f64;
    q.probs().iter().all(|&p| (p - target).abs() <= PAIR_TOL)
}

/// Paninski's family: uniform nominal, `p_z = (1 ± 2ε z_i)/k`, `z` uniform
/// on `{-1, +1}^{k/2}`.
pub fn paninski_family(k: usize, eps: f64) -> Result<PerturbedFamily> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("Paninski family needs even k >= 2, got {k}")));
    }
    if !(0.0..=0.5).contains(&eps) {
        return Err(Error::InvalidParameter(format!("eps must lie in [0, 1/2], got {eps}")));
    }
    PerturbedFamily::new(Distribution::uniform(k)?, 2.0 * eps, ParamLaw::Rademacher { dim: k / 2 })
}

/// Family `p_z = (1 ± c ε z_i)/k` around the uniform distribution.
pub fn general_family(q: &Distribution, c: f64, eps: f64, law: ParamLaw) -> Result<PerturbedFamily> {
    if !is_uniform(q) {
        return Err(Error::InvalidDistribution("general family is built around the uniform distribution".into()));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!("scale constant must be positive, got {c}")));
    }
    if !(eps >= 0.0 && eps * c < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in [0, 1/c) = [0, {}), got {eps}", 1.0 / c)));
    }
    PerturbedFamily::new(q.clone(), c * eps, law)
}

/// A vector `δ` together with the reference weights its inner product uses.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationVector {
    pub delta: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PerturbationVector {
    /// `sum_x w(x) a(x) b(x)`; both vectors must share weights.
    pub fn inner(&self, other: &PerturbationVector) -> Result<f64> {
        if self.delta.len() != other.delta.len() {
            return Err(Error::DimensionMismatch { expected: self.delta.len(), got: other.delta.len() });
        }
        Ok(self
            .weights
            .iter()
            .zip(self.delta.iter().zip(&other.delta))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().zip(&self.delta).map(|(w, d)| w * d * d).sum()
    }

    /// `sum_x w(x) δ(x)`, zero for every genuine perturbation.
    pub fn weighted_mean(&self) -> f64 {
        self.weights.iter().zip(&self.delta).map(|(w, d)| w * d).sum()
    }
}

/// `δ(x) = (p(x) - q(x)) / q(x)`.
pub fn normalized_perturbation(p: &Distribution, q: &Distribution) -> Result<PerturbationVector> {
    if p.k() != q.k() {
        return Err(Error::DimensionMismatch { expected: q.k(), got: p.k() });
    }
    if !q.is_strictly_positive() {
        return Err(Error::InvalidDistribution("reference distribution must have full support".into()));
    }
    let delta = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b) / b).collect();
    Ok(PerturbationVector { delta, weights: q.probs().to_vec() })
}

/// Image of `δ` under `W`: `δ^W(y) = sum_x q(x) W(y|x) δ(x) / (W ∘ q)(y)`,
/// with `δ^W(y) = 0` (and zero weight) where `(W ∘ q)(y) = 0`.
pub fn induce(w: &Channel, delta: &PerturbationVector) -> Result<PerturbationVector> {
    if w.k() != delta.delta.len() {
        return Err(Error::DimensionMismatch { expected: w.k(), got: delta.delta.len() });
    }
    let q = DVector::from_column_slice(&delta.weights);
    let weighted = DVector::from_iterator(q.len(), delta.weights.iter().zip(&delta.delta).map(|(a, b)| a * b));
    let mass = w.matrix() * q;
    let num = w.matrix() * weighted;
    let out = mass
        .iter()
        .zip(num.iter())
        .map(|(&mq, &n)| if mq > 0.0 { n / mq } else { 0.0 })
        .collect();
    Ok(PerturbationVector { delta: out, weights: mass.iter().copied().collect() })
}

pub fn induced_perturbation(w: &Channel, p: &Distribution, q: &Distribution) -> Result<PerturbationVector> {
    if w.k() != p.k() {
        return Err(Error::DimensionMismatch { expected: w.k(), got: p.k() });
    }
    induce(w, &normalized_perturbation(p, q)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlmostPerturbationCheck {
    pub trials: usize,
    /// Fraction of draws with `d_TV(p_Z, q) >= eps`.
    pub alpha_hat: f64,
    /// One-sided 99% Wilson lower confidence bound on the true fraction.
    pub lower_bound: f64,
    /// Lower bound at least the required 1/10.
    pub pass: bool,
}

pub const ALMOST_PERTURBATION_ALPHA: f64 = 0.1;

/// One-sided 99% Wilson lower bound for `successes / trials`.
pub fn wilson_lower_bound(successes: usize, trials: usize) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_99 * Z_99;
    let center = p + z2 / (2.0 * n);
    let spread = Z_99 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - spread) / (1.0 + z2 / n)).max(0.0)
}

/// Monte Carlo certificate that `f` is an almost `eps`-perturbation.
pub fn check_almost_perturbation(f: &PerturbedFamily, eps: f64, trials: usize, seed: u64) -> Result<AlmostPerturbationCheck> {
    if trials < 1000 {
        return Err(Error::InvalidParameter(format!("need at least 1000 trials, got {trials}")));
    }
    let mut rng = rng::seeded(seed);
    let hits = (0..trials)
        .filter(|_| {
            let z = f.law().sample(&mut rng);
            f.tv_from_nominal(z.as_slice()) >= eps - 1e-12
        })
        .count();
    let lower_bound = wilson_lower_bound(hits, trials);
    Ok(AlmostPerturbationCheck {
        trials,
        alpha_hat: hits as f64 / trials as f64,
        lower_bound,
        pass: lower_bound >= ALMOST_PERTURBATION_ALPHA,
    })
}
