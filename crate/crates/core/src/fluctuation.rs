//! Chi-square fluctuations of perturbed families, plain and induced by
//! channels, with the exact mixture chi-square and brute-force oracles.
//!
//! Every family here has normalized perturbations linear in the parameter,
//! so inner products reduce to bilinear forms `z^T G z'` (see
//! [`PerturbedFamily::gram`]). With `Z = V Y` and `Y` Rademacher,
//! expectations over the second copy collapse analytically:
//!
//! ```text
//! E_{Y'} exp(Y^T B Y') = prod_j cosh((B^T Y)_j),    B = V^T A V
//! ```
//!
//! leaving one expectation over `Y`, done by enumeration when `Y` has at
//! most 20 coordinates and by Monte Carlo otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contraction::{h_bar, HMatrix};
use crate::error::{Error, Result};
use crate::perturbation::{is_uniform, ParamLaw, PerturbedFamily};
use crate::prob::{apply_channel, divergence_slices, product_of_slices, Channel, DivergenceKind, DEFAULT_PRODUCT_CAP};
use crate::rademacher::{for_each_image, log_cosh, random_signs, LogMeanExp, MAX_EXHAUSTIVE_SIGNS};
use crate::rng;

/// Largest `2r` for which the pair expectation in [`ingster_chi2`] is enumerated.
const MAX_EXHAUSTIVE_PAIR_SIGNS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluctuationKind {
    Chi2,
    Decoupled,
    InducedChi2,
    InducedDecoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Exhaustive,
    MonteCarlo,
}

/// How expectations over the parameter law are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    /// Closed form when one exists, else enumeration when affordable, else
    /// Monte Carlo with [`Evaluation::DEFAULT_SAMPLES`] draws and seed 0.
    Auto,
    Exhaustive,
    MonteCarlo { samples: usize, seed: u64 },
}

impl Evaluation {
    pub const DEFAULT_SAMPLES: usize = 20_000;
}

/// A computed expectation and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub method: Method,
    pub mc_stderr: Option<f64>,
}

impl Estimate {
    fn exact(value: f64, method: Method) -> Self {
        Self { value, method, mc_stderr: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub kind: FluctuationKind,
    pub value: f64,
    pub method: Method,
    pub mc_stderr: Option<f64>,
    pub n: usize,
    pub family_id: Option<String>,
    pub channel_ids: Vec<String>,
}

impl FluctuationReport {
    fn new(kind: FluctuationKind, estimate: Estimate, n: usize) -> Self {
        Self {
            kind,
            value: estimate.value,
            method: estimate.method,
            mc_stderr: estimate.mc_stderr,
            n,
            family_id: None,
            channel_ids: Vec::new(),
        }
    }

    pub fn with_ids(mut self, family_id: impl Into<String>, channel_ids: Vec<String>) -> Self {
        self.family_id = Some(family_id.into());
        self.channel_ids = channel_ids;
        self
    }
}

fn require_valid_members(f: &PerturbedFamily) -> Result<()> {
    if f.all_members_valid() {
        Ok(())
    } else {
        let worst = 1.0 - f.scale() * f.law().sup_abs_coordinate();
        Err(Error::InvalidMember { min_entry: worst * f.q().probs().iter().copied().fold(f64::INFINITY, f64::min) })
    }
}

/// `E_Z[z^T G z] = tr(V^T G V)` since `E[Y Y^T] = I`.
fn mean_quadratic(law: &ParamLaw, g: &DMatrix<f64>) -> f64 {
    let v = law.matrix();
    (v.transpose() * g * v).trace()
}

/// `E_Z[chi2(p_Z, q)]`.
pub fn chi2_fluctuation(f: &PerturbedFamily) -> Result<FluctuationReport> {
    require_valid_members(f)?;
    let value = mean_quadratic(f.law(), &f.gram(None)?);
    Ok(FluctuationReport::new(FluctuationKind::Chi2, Estimate::exact(value, Method::ClosedForm), 1))
}

/// `E_Z[chi2(W ∘ p_Z, W ∘ q)]`.
pub fn induced_chi2_fluctuation(w: &Channel, f: &PerturbedFamily) -> Result<FluctuationReport> {
    require_valid_members(f)?;
    let value = mean_quadratic(f.law(), &f.gram(Some(w))?);
    Ok(FluctuationReport::new(FluctuationKind::InducedChi2, Estimate::exact(value, Method::ClosedForm), 1))
}

/// `ln E_{Z,Z'} exp(z^T A z')` for independent `Z, Z'` drawn from `law`.
pub fn log_bilinear_mgf(law: &ParamLaw, a: &DMatrix<f64>, eval: Evaluation) -> Result<Estimate> {
    let v = law.matrix();
    let b = v.transpose() * a * &v;
    let bt = b.transpose();
    let r = law.sign_count();
    let summand = |img: &[f64]| img.iter().map(|&x| log_cosh(x)).sum::<f64>();
    let estimate = match eval {
        Evaluation::Exhaustive | Evaluation::Auto if r <= MAX_EXHAUSTIVE_SIGNS => {
            let mut acc = LogMeanExp::new();
            // the summand is even in y, so half the cube suffices
            for_each_image(&bt, true, |_, img| acc.push(summand(img)));
            Estimate::exact(if r == 0 { 0.0 } else { acc.log_mean() }, Method::Exhaustive)
        }
        Evaluation::Exhaustive => {
            return Err(Error::CapExceeded { size: 1u128 << r.min(127), cap: 1u128 << MAX_EXHAUSTIVE_SIGNS });
        }
        Evaluation::Auto | Evaluation::MonteCarlo { .. } => {
            let (samples, seed) = match eval {
                Evaluation::MonteCarlo { samples, seed } => (samples, seed),
                _ => (Evaluation::DEFAULT_SAMPLES, 0),
            };
            if samples < 2 {
                return Err(Error::InvalidParameter("Monte Carlo needs at least 2 samples".into()));
            }
            let mut rng = rng::seeded(seed);
            let mut acc = LogMeanExp::new();
            for _ in 0..samples {
                let y = random_signs(r, &mut rng);
                let img = &bt * y;
                acc.push(summand(img.as_slice()));
            }
            Estimate { value: acc.log_mean(), method: Method::MonteCarlo, mc_stderr: Some(acc.log_mean_stderr()) }
        }
    };
    if !estimate.value.is_finite() {
        return Err(Error::Overflow(format!("log-MGF evaluated to {}", estimate.value)));
    }
    Ok(estimate)
}

/// `ln E exp(n <δ_Z, δ_Z'>)`.
///
/// For a Rademacher law the form is diagonal and the value is
/// `sum_i ln cosh(n G_ii)`, which for Paninski's family is
/// `(k/2) ln cosh(8 n ε^2 / k)`.
pub fn decoupled_fluctuation(f: &PerturbedFamily, n: usize) -> Result<FluctuationReport> {
    decoupled_fluctuation_with(f, n, Evaluation::Auto)
}

pub fn decoupled_fluctuation_with(f: &PerturbedFamily, n: usize, eval: Evaluation) -> Result<FluctuationReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let g = f.gram(None)? * n as f64;
    let estimate = match (eval, f.law()) {
        (Evaluation::Auto, ParamLaw::Rademacher { .. }) => {
            let value = g.diagonal().iter().map(|&x| log_cosh(x)).sum();
            Estimate::exact(value, Method::ClosedForm)
        }
        _ => log_bilinear_mgf(f.law(), &g, eval)?,
    };
    Ok(FluctuationReport::new(FluctuationKind::Decoupled, estimate, n))
}

/// Sum over players of the induced bilinear forms.
///
/// Around the uniform distribution this is `(s^2 n / k) H̄` with `H̄` the
/// mean of `H(W_j)`; otherwise the per-channel forms are summed directly.
pub fn induced_form(channels: &[Channel], f: &PerturbedFamily) -> Result<DMatrix<f64>> {
    if channels.is_empty() {
        return Err(Error::InvalidParameter("empty channel sequence".into()));
    }
    if let Some(w) = channels.iter().find(|w| w.k() != f.k()) {
        return Err(Error::DimensionMismatch { expected: f.k(), got: w.k() });
    }
    if is_uniform(f.q()) {
        let hbar = h_bar(channels)?;
        let s = f.scale();
        Ok(hbar.entries() * (s * s * channels.len() as f64 / f.k() as f64))
    } else {
        let mut acc = DMatrix::zeros(f.dim(), f.dim());
        for w in channels {
            acc += f.gram(Some(w))?;
        }
        Ok(acc)
    }
}

/// `ln E exp(sum_j <δ_Z^{W_j}, δ_Z'^{W_j}>)`.
pub fn induced_decoupled_fluctuation(channels: &[Channel], f: &PerturbedFamily) -> Result<FluctuationReport> {
    induced_decoupled_fluctuation_with(channels, f, Evaluation::Auto)
}

pub fn induced_decoupled_fluctuation_with(
    channels: &[Channel],
    f: &PerturbedFamily,
    eval: Evaluation,
) -> Result<FluctuationReport> {
    let a = induced_form(channels, f)?;
    let estimate = log_bilinear_mgf(f.law(), &a, eval)?;
    Ok(FluctuationReport::new(FluctuationKind::InducedDecoupled, estimate, channels.len()))
}

/// Chi-square distance of the mixture `E_Z[⊗_j W_j ∘ p_Z]` from
/// `⊗_j W_j ∘ q`, as `E_{Z,Z'}[prod_j (1 + <δ_Z^{W_j}, δ_Z'^{W_j}>)] - 1`.
pub fn ingster_chi2(channels: &[Channel], f: &PerturbedFamily) -> Result<f64> {
    Ok(ingster_chi2_with(channels, f, Evaluation::Auto)?.value)
}

pub fn ingster_chi2_with(channels: &[Channel], f: &PerturbedFamily, eval: Evaluation) -> Result<Estimate> {
    if channels.is_empty() {
        return Err(Error::InvalidParameter("empty channel sequence".into()));
    }
    let grams = channels
        .iter()
        .map(|w| f.gram(Some(w)))
        .collect::<Result<Vec<_>>>()?;
    ingster_from_grams(f.law(), &grams, eval)
}

fn ingster_from_grams(law: &ParamLaw, grams: &[DMatrix<f64>], eval: Evaluation) -> Result<Estimate> {
    let r = law.sign_count();
    let term = |z: &DVector<f64>, gz: &[DVector<f64>]| -> f64 {
        gz.iter().map(|g| 1.0 + z.dot(g)).product::<f64>()
    };
    match eval {
        Evaluation::Exhaustive | Evaluation::Auto if 2 * r <= MAX_EXHAUSTIVE_PAIR_SIGNS => {
            let mut zs = Vec::with_capacity(1 << r);
            for_each_image(&law.matrix(), false, |_, z| zs.push(DVector::from_column_slice(z)));
            let images: Vec<Vec<DVector<f64>>> = zs.iter().map(|z| grams.iter().map(|g| g * z).collect()).collect();
            let mut total = 0.0;
            for z in &zs {
                for gz in &images {
                    total += term(z, gz);
                }
            }
            let pairs = (zs.len() * zs.len()) as f64;
            Ok(Estimate::exact(total / pairs - 1.0, Method::Exhaustive))
        }
        Evaluation::Exhaustive => Err(Error::CapExceeded {
            size: 1u128 << (2 * r).min(127),
            cap: 1u128 << MAX_EXHAUSTIVE_PAIR_SIGNS,
        }),
        Evaluation::Auto | Evaluation::MonteCarlo { .. } => {
            let (samples, seed) = match eval {
                Evaluation::MonteCarlo { samples, seed } => (samples, seed),
                _ => (Evaluation::DEFAULT_SAMPLES, 0),
            };
            if samples < 2 {
                return Err(Error::InvalidParameter("Monte Carlo needs at least 2 samples".into()));
            }
            let mut rng = rng::seeded(seed);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..samples {
                let z = law.sample(&mut rng);
                let z2 = law.sample(&mut rng);
                let gz: Vec<_> = grams.iter().map(|g| g * &z2).collect();
                let t = term(&z, &gz);
                sum += t;
                sum_sq += t * t;
            }
            let n = samples as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
            Ok(Estimate { value: mean - 1.0, method: Method::MonteCarlo, mc_stderr: Some((var / n).sqrt()) })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureStats {
    pub chi2: f64,
    pub tv: f64,
}

/// Materializes the mixture `E_Z[⊗_j W_j ∘ p_Z]` and the nominal product
/// over the full output space and compares them directly.
///
/// With `channels = None` the `n` samples are observed without a channel.
pub fn brute_force_mixture_stats(channels: Option<&[Channel]>, f: &PerturbedFamily, n: usize) -> Result<MixtureStats> {
    let (mixture, nominal) = brute_force_laws(channels, f, n)?;
    Ok(MixtureStats {
        chi2: divergence_slices(&mixture, &nominal, DivergenceKind::Chi2)?,
        tv: divergence_slices(&mixture, &nominal, DivergenceKind::Tv)?,
    })
}

/// The exact mixture and nominal laws of the `n` players' outputs.
pub fn brute_force_laws(channels: Option<&[Channel]>, f: &PerturbedFamily, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(chans) = channels {
        if chans.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: chans.len() });
        }
        if let Some(w) = chans.iter().find(|w| w.k() != f.k()) {
            return Err(Error::DimensionMismatch { expected: f.k(), got: w.k() });
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let r = f.law().sign_count();
    if r > MAX_EXHAUSTIVE_SIGNS {
        return Err(Error::CapExceeded { size: 1u128 << r.min(127), cap: 1u128 << MAX_EXHAUSTIVE_SIGNS });
    }
    require_valid_members(f)?;
    let outputs = |j: usize| channels.map_or(f.k(), |c| c[j].m());
    let size = (0..n).try_fold(1u128, |acc, j| acc.checked_mul(outputs(j) as u128)).unwrap_or(u128::MAX);
    if size > DEFAULT_PRODUCT_CAP {
        return Err(Error::CapExceeded { size, cap: DEFAULT_PRODUCT_CAP });
    }
    let observe = |p: &crate::prob::Distribution| -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|j| match channels {
                Some(c) => Ok(apply_channel(&c[j], p)?.into_probs()),
                None => Ok(p.probs().to_vec()),
            })
            .collect()
    };
    let nominal = product_of_slices(observe(f.q())?.iter().map(Vec::as_slice))?;
    let mut mixture = vec![0.0; nominal.len()];
    let v = f.law().matrix();
    let mut members = 0usize;
    let mut failure = None;
    for_each_image(&v, false, |_, z| {
        if failure.is_some() {
            return;
        }
        let joint = f
            .member(z)
            .and_then(|p| observe(&p))
            .and_then(|outs| product_of_slices(outs.iter().map(Vec::as_slice)));
        match joint {
            Ok(joint) => {
                mixture.iter_mut().zip(joint).for_each(|(m, j)| *m += j);
                members += 1;
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    mixture.iter_mut().for_each(|m| *m /= members as f64);
    Ok((mixture, nominal))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosMgf {
    /// `ln E_θ prod_j cosh(λ (H θ)_j)` by enumeration.
    pub exact_log_mgf: f64,
    /// `(λ^2/2) ||H||_F^2 / (1 - 4 λ^2 ρ(H)^2)`, infinite outside validity.
    pub bound: f64,
    /// `λ < 1/(2 ρ(H))`.
    pub valid: bool,
}

/// Largest dimension for which [`chaos_mgf`] enumerates.
pub const CHAOS_MAX_DIM: usize = 20;

/// Exact log-MGF of the decoupled Rademacher chaos `λ θ^T H θ'` and its
/// Frobenius/spectral-radius upper bound.
pub fn chaos_mgf(h: &HMatrix, lambda: f64) -> Result<ChaosMgf> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    if h.dim() > CHAOS_MAX_DIM {
        return Err(Error::CapExceeded { size: 1u128 << h.dim(), cap: 1u128 << CHAOS_MAX_DIM });
    }
    let scaled = h.entries() * lambda;
    let mut acc = LogMeanExp::new();
    for_each_image(&scaled, true, |_, img| acc.push(img.iter().map(|&x| log_cosh(x)).sum()));
    let exact_log_mgf = if h.dim() == 0 { 0.0 } else { acc.log_mean() };
    let rho = h.spectral_radius();
    let valid = 2.0 * lambda * rho < 1.0;
    let bound = if valid {
        0.5 * lambda * lambda * h.frobenius_sq() / (1.0 - 4.0 * lambda * lambda * rho * rho)
    } else {
        f64::INFINITY
    };
    Ok(ChaosMgf { exact_log_mgf, bound, valid })
}
