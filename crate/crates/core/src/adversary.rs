//! The perturbation that a fixed channel sequence sees least.
//!
//! Given channels `W_1..W_n` on `[k]`, the family perturbs the uniform
//! distribution along `Z = V Y`, where the columns of `V` span the `k/4`
//! smallest eigenvalues of `H̄`, the mean of the `H(W_j)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contraction::{h_bar, h_matrix, HMatrix};
use crate::error::{Error, Result};
use crate::fluctuation::{induced_decoupled_fluctuation, FluctuationReport};
use crate::perturbation::{
    check_almost_perturbation, general_family, paninski_family, AlmostPerturbationCheck, ParamLaw, PerturbedFamily,
};
use crate::prob::{Channel, Distribution};
use crate::rademacher::for_each_image;
use crate::rng;

/// Scale constant of the adversarial family.
pub const DEFAULT_C: f64 = 12.0 * std::f64::consts::SQRT_2;

/// One-sided 99% standard normal quantile.
const Z_99: f64 = 2.326_347_874_040_841;

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryBasis {
    /// `(k/2) x (k/4)`, orthonormal columns.
    pub v: DMatrix<f64>,
    /// Eigenvalues of `H̄` belonging to the columns of `v`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Full ascending spectrum of `H̄`.
    pub spectrum: Vec<f64>,
    pub c: f64,
}

impl AdversaryBasis {
    pub fn k(&self) -> usize {
        2 * self.v.nrows()
    }

    /// `V^T H̄ V`.
    pub fn restricted(&self, hbar: &HMatrix) -> DMatrix<f64> {
        self.v.transpose() * hbar.entries() * &self.v
    }

    /// `||V^T H̄ V||_F^2 <= (4/k) ||H̄||_*^2`, returning both sides.
    pub fn norm_relation(&self, hbar: &HMatrix) -> (f64, f64) {
        let lhs = self.restricted(hbar).norm_squared();
        let rhs = 4.0 / self.k() as f64 * hbar.nuclear() * hbar.nuclear();
        (lhs, rhs)
    }
}

pub fn adversarial_basis(hbar: &HMatrix, c: f64) -> Result<AdversaryBasis> {
    let d = hbar.dim();
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("k = {} is not divisible by 4", 2 * d)));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!("c must be positive, got {c}")));
    }
    let r = d / 2;
    let mut v = hbar.eigenvectors().columns(0, r).into_owned();
    orthonormalize(&mut v);
    orthonormalize(&mut v);
    for mut col in v.column_iter_mut() {
        let lead = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() + 1e-12 { x } else { a });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok(AdversaryBasis {
        v,
        eigenvalues: hbar.eigenvalues()[..r].to_vec(),
        spectrum: hbar.eigenvalues().to_vec(),
        c,
    })
}

/// Modified Gram-Schmidt on the columns.
fn orthonormalize(v: &mut DMatrix<f64>) {
    for j in 0..v.ncols() {
        for i in 0..j {
            let proj = v.column(i).dot(&v.column(j));
            let ci = v.column(i).into_owned();
            v.column_mut(j).axpy(-proj, &ci, 1.0);
        }
        let norm = v.column(j).norm();
        v.column_mut(j).unscale_mut(norm);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryOptions {
    pub c: f64,
    /// Constant in the validity regime `n <= C k^{3/2} / (ε^2 max_j ||H(W_j)||_*)`;
    /// defaults to `1/(8c^2)`.
    pub regime_constant: Option<f64>,
    pub certificate_trials: usize,
    pub seed: u64,
}

impl Default for AdversaryOptions {
    fn default() -> Self {
        Self { c: DEFAULT_C, regime_constant: None, certificate_trials: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryReport {
    pub k: usize,
    pub n: usize,
    pub eps: f64,
    pub c: f64,
    pub induced_decoupled: FluctuationReport,
    pub almost_perturbation: AlmostPerturbationCheck,
    /// Probability that `p_Z` has a negative entry.
    pub invalid_rate: f64,
    pub invalid_rate_exact: bool,
    /// `(8 c^4 n^2 ε^4 / (3 k^3)) (tr H̄)^2`.
    pub ceiling: f64,
    pub regime_constant: f64,
    pub max_nuclear: f64,
    pub within_regime: bool,
    pub norm_relation_lhs: f64,
    pub norm_relation_rhs: f64,
}

#[derive(Debug, Clone)]
pub struct Adversary {
    pub family: PerturbedFamily,
    pub basis: AdversaryBasis,
    pub hbar: HMatrix,
    pub report: AdversaryReport,
}

pub fn adversarial_perturbation(channels: &[Channel], eps: f64) -> Result<Adversary> {
    adversarial_perturbation_with(channels, eps, AdversaryOptions::default())
}

pub fn adversarial_perturbation_with(channels: &[Channel], eps: f64, opts: AdversaryOptions) -> Result<Adversary> {
    let hbar = h_bar(channels)?;
    let k = 2 * hbar.dim();
    if k % 4 != 0 {
        return Err(Error::InvalidParameter(format!("k = {k} is not divisible by 4")));
    }
    let basis = adversarial_basis(&hbar, opts.c)?;
    let uniform = Distribution::uniform(k)?;
    let family = general_family(&uniform, opts.c, eps, ParamLaw::Linear { v: basis.v.clone() })?;

    let n = channels.len();
    let induced_decoupled = induced_decoupled_fluctuation(channels, &family)?;
    let almost_perturbation = check_almost_perturbation(&family, eps, opts.certificate_trials, opts.seed)?;
    let (invalid_rate, invalid_rate_exact) = invalid_rate(&family, opts.certificate_trials, opts.seed);

    let c = opts.c;
    let kf = k as f64;
    let ceiling = 8.0 * c.powi(4) * (n * n) as f64 * eps.powi(4) / (3.0 * kf.powi(3)) * hbar.trace().powi(2);
    let regime_constant = opts.regime_constant.unwrap_or(1.0 / (8.0 * c * c));
    let max_nuclear = channels
        .iter()
        .map(|w| h_matrix(w).map(|h| h.nuclear()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let within_regime = eps == 0.0
        || max_nuclear == 0.0
        || n as f64 * eps * eps * max_nuclear <= regime_constant * kf.powf(1.5);
    let (norm_relation_lhs, norm_relation_rhs) = basis.norm_relation(&hbar);

    let report = AdversaryReport {
        k,
        n,
        eps,
        c,
        induced_decoupled,
        almost_perturbation,
        invalid_rate,
        invalid_rate_exact,
        ceiling,
        regime_constant,
        max_nuclear,
        within_regime,
        norm_relation_lhs,
        norm_relation_rhs,
    };
    Ok(Adversary { family, basis, hbar, report })
}

/// Probability that a member has a negative entry: exact when the sign
/// vector is enumerable, otherwise estimated from `samples` draws.
pub fn invalid_rate(f: &PerturbedFamily, samples: usize, seed: u64) -> (f64, bool) {
    let invalid = |z: &[f64]| f.member_probs(z).iter().any(|&p| p < 0.0);
    if f.all_members_valid() {
        return (0.0, true);
    }
    if f.law().is_exhaustive() {
        let (mut bad, mut total) = (0u64, 0u64);
        for_each_image(&f.law().matrix(), false, |_, z| {
            total += 1;
            bad += invalid(z) as u64;
        });
        (bad as f64 / total as f64, true)
    } else {
        let mut rng = rng::seeded(seed);
        let bad = (0..samples.max(1)).filter(|_| invalid(f.law().sample(&mut rng).as_slice())).count();
        (bad as f64 / samples.max(1) as f64, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1MassCheck {
    pub samples: usize,
    pub threshold: f64,
    pub p_hat: f64,
    /// `p_hat` plus the one-sided 99% sampling slack clears `1/9`.
    pub pass: bool,
}

/// Estimates `P(||V Y||_1 >= threshold)`.
pub fn l1_mass_probability(v: &DMatrix<f64>, threshold: f64, samples: usize, seed: u64) -> Result<L1MassCheck> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let mut rng = rng::seeded(seed);
    let law = ParamLaw::Linear { v: v.clone() };
    let hits = (0..samples)
        .filter(|_| law.sample(&mut rng).iter().map(|x| x.abs()).sum::<f64>() >= threshold)
        .count();
    let p_hat = hits as f64 / samples as f64;
    let target = 1.0 / 9.0;
    let slack = Z_99 * (target * (1.0 - target) / samples as f64).sqrt();
    Ok(L1MassCheck { samples, threshold, p_hat, pass: p_hat >= target - slack })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxminGap {
    pub paninski_value: f64,
    pub adversarial_value: f64,
    /// `adversarial / paninski`; `None` when the Paninski value vanishes.
    pub ratio: Option<f64>,
    /// `adversarial <= paninski + 1e-9`.
    pub dominated: bool,
}

/// Induced decoupled fluctuation of Paninski's family against the
/// adversarial family built at the same scale `2ε`.
pub fn maxmin_gap(channels: &[Channel], eps: f64) -> Result<MaxminGap> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty channel sequence".into()))?;
    let paninski = paninski_family(first.k(), eps)?;
    let paninski_value = induced_decoupled_fluctuation(channels, &paninski)?.value;
    let basis = adversarial_basis(&h_bar(channels)?, 2.0)?;
    let adv = general_family(&Distribution::uniform(first.k())?, 2.0, eps, ParamLaw::Linear { v: basis.v })?;
    let adversarial_value = induced_decoupled_fluctuation(channels, &adv)?.value;
    Ok(MaxminGap {
        paninski_value,
        adversarial_value,
        ratio: (paninski_value > 0.0).then(|| adversarial_value / paninski_value),
        dominated: adversarial_value <= paninski_value + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{random_channel, standard_channel, StandardChannel};
    use crate::fluctuation::brute_force_mixture_stats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(d: usize, rng: &mut impl Rng) -> HMatrix {
        let a = DMatrix::from_fn(d, d + 1, |_, _| rng.random_range(-1.0..1.0));
        HMatrix::from_symmetric(&a * a.transpose()).unwrap()
    }

    fn check_basis(b: &AdversaryBasis, hbar: &HMatrix) {
        let r = b.v.ncols();
        assert!((b.v.transpose() * &b.v - DMatrix::identity(r, r)).abs().max() < 1e-9);
        let restricted = b.restricted(hbar);
        for i in 0..r {
            for j in 0..r {
                let expected = if i == j { b.eigenvalues[i] } else { 0.0 };
                assert!((restricted[(i, j)] - expected).abs() < 1e-9);
            }
        }
        assert!(b.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let (lhs, rhs) = b.norm_relation(hbar);
        assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }

    #[test]
    fn isotropic_basis() {
        let h = HMatrix::from_symmetric(DMatrix::identity(4, 4)).unwrap();
        let b = adversarial_basis(&h, DEFAULT_C).unwrap();
        assert_eq!(b.v.shape(), (4, 2));
        check_basis(&b, &h);
    }

    #[test]
    fn parity_basis_is_the_antisymmetric_vector() {
        let h = h_matrix(&standard_channel(StandardChannel::Parity, 4).unwrap()).unwrap();
        let b = adversarial_basis(&h, DEFAULT_C).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_close!(b.v[(0, 0)], s, 1e-12);
        assert_close!(b.v[(1, 0)], -s, 1e-12);
        assert_close!(b.eigenvalues[0], 0.0, 1e-12);
    }

    #[test]
    fn random_bases_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [2, 4, 8, 16] {
            for _ in 0..25 {
                let h = random_psd(d, &mut rng);
                check_basis(&adversarial_basis(&h, DEFAULT_C).unwrap(), &h);
            }
        }
        let h = random_psd(3, &mut rng);
        assert!(adversarial_basis(&h, DEFAULT_C).is_err());
    }

    #[test]
    fn parity_family_is_invisible() {
        let parity = standard_channel(StandardChannel::Parity, 4).unwrap();
        for n in 1..=3 {
            let chans = vec![parity.clone(); n];
            let adv = adversarial_perturbation(&chans, 0.05).unwrap();
            assert!(adv.report.induced_decoupled.value.abs() < 1e-12);
            assert_eq!(adv.report.invalid_rate, 0.0);
            assert!(adv.report.almost_perturbation.pass);
            let stats = brute_force_mixture_stats(Some(&chans), &adv.family, n).unwrap();
            assert!(stats.tv < 1e-12 && stats.chi2.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_eps_gives_zero_family() {
        let chans = vec![standard_channel(StandardChannel::Identity, 8).unwrap(); 2];
        let adv = adversarial_perturbation(&chans, 0.0).unwrap();
        assert_eq!(adv.report.induced_decoupled.value, 0.0);
        assert_eq!(adv.family.scale(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let id = standard_channel(StandardChannel::Identity, 6).unwrap();
        assert!(adversarial_perturbation(&[id], 0.01).is_err());
        let id = standard_channel(StandardChannel::Identity, 8).unwrap();
        assert!(adversarial_perturbation(std::slice::from_ref(&id), 0.1).is_err());
        assert!(adversarial_perturbation(&[], 0.01).is_err());
    }

    #[test]
    fn value_stays_below_ceiling_in_regime() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        for _ in 0..40 {
            let k = [8, 16][rng.random_range(0..2)];
            let n = rng.random_range(1..=4);
            let chans: Vec<_> = (0..n).map(|_| random_channel(k, 2, &mut rng).unwrap()).collect();
            let opts = AdversaryOptions { certificate_trials: 1000, ..Default::default() };
            let adv = adversarial_perturbation_with(&chans, 0.005, opts).unwrap();
            if adv.report.within_regime {
                checked += 1;
                assert!(adv.report.induced_decoupled.value <= adv.report.ceiling + 1e-12);
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn l1_mass_is_large() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [8, 16, 32] {
            let chans: Vec<_> = (0..3).map(|_| random_channel(k, 2, &mut rng).unwrap()).collect();
            let b = adversarial_basis(&h_bar(&chans).unwrap(), DEFAULT_C).unwrap();
            let check = l1_mass_probability(&b.v, k as f64 / DEFAULT_C, 2000, 1).unwrap();
            assert!(check.pass, "{check:?}");
        }
    }

    #[test]
    fn maxmin_gap_examples() {
        let parity = vec![standard_channel(StandardChannel::Parity, 4).unwrap(); 2];
        let g = maxmin_gap(&parity, 0.1).unwrap();
        assert!(g.paninski_value > 0.0);
        assert!(g.adversarial_value.abs() < 1e-12);
        assert_close!(g.ratio.unwrap(), 0.0, 1e-12);

        let id = vec![standard_channel(StandardChannel::Identity, 8).unwrap(); 3];
        let g = maxmin_gap(&id, 0.1).unwrap();
        assert!(g.dominated && g.adversarial_value > 0.0);
        assert!(g.ratio.unwrap() <= 1.0 + 1e-9);

        let constant = vec![standard_channel(StandardChannel::Constant, 8).unwrap(); 3];
        let g = maxmin_gap(&constant, 0.1).unwrap();
        assert_eq!((g.paninski_value, g.adversarial_value, g.ratio), (0.0, 0.0, None));
    }
}
