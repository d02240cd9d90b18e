//! The invariant suite run by `chi-contract verify`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::adversary::{adversarial_basis, adversarial_perturbation, l1_mass_probability, DEFAULT_C};
use crate::bounds::{lb_general, lb_table, Task};
use crate::channels::{random_channel, random_comm_channel, random_ldp_channel, standard_channel, ConstraintSpec, StandardChannel};
use crate::contraction::{h_bar, h_matrix, verify_norm_bounds, HMatrix};
use crate::fluctuation::{
    brute_force_mixture_stats, chaos_mgf, chi2_fluctuation, decoupled_fluctuation, decoupled_fluctuation_with,
    induced_chi2_fluctuation, induced_decoupled_fluctuation, ingster_chi2, Evaluation,
};
use crate::perturbation::paninski_family;
use crate::prob::{apply_channel, divergence, Channel, Distribution, DivergenceKind};
use crate::rng;
use crate::sim::{simulate_smp, ChannelRule, CoinMode, ProtocolConfig};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn(bool) -> std::result::Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("divergence_inequalities", divergences),
    ("data_processing", data_processing),
    ("ingster_exactness", ingster),
    ("pairwise_identity", pairwise),
    ("norm_bounds", norm_bounds),
    ("chaos_mgf_bound", chaos),
    ("maxmin_construction", maxmin),
    ("fluctuation_values", fluctuation_values),
    ("table_reproduction", table),
    ("simulator_fidelity", simulator),
];

/// Runs every check; `quick` shrinks instance counts.
pub fn run_suite(quick: bool) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let (pass, detail) = match check(quick) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome { name, pass, detail, seconds: start.elapsed().as_secs_f64() }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e(err: crate::Error) -> String {
    err.to_string()
}

fn random_dist(k: usize, rng: &mut impl Rng) -> Distribution {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Distribution::new(raw.into_iter().map(|x| x / total).collect()).expect("normalized")
}

fn divergences(quick: bool) -> std::result::Result<String, String> {
    let mut rng = rng::seeded(101);
    let pairs = if quick { 200 } else { 1000 };
    for _ in 0..pairs {
        let k = rng.random_range(2..10);
        let (p, q) = (random_dist(k, &mut rng), random_dist(k, &mut rng));
        let tv = divergence(&p, &q, DivergenceKind::Tv).map_err(e)?;
        let kl = divergence(&p, &q, DivergenceKind::Kl).map_err(e)?;
        let chi2 = divergence(&p, &q, DivergenceKind::Chi2).map_err(e)?;
        ensure(2.0 * tv * tv <= kl + 1e-12, || format!("Pinsker fails: tv {tv}, kl {kl}"))?;
        ensure(kl <= chi2 + 1e-12, || format!("kl {kl} > chi2 {chi2}"))?;
        ensure(tv * tv <= chi2 / 4.0 + 1e-12, || format!("tv^2 {} > chi2/4 {}", tv * tv, chi2 / 4.0))?;
    }
    Ok(format!("{pairs} pairs"))
}

fn data_processing(quick: bool) -> std::result::Result<String, String> {
    let mut rng = rng::seeded(102);
    let count = if quick { 200 } else { 1000 };
    for _ in 0..count {
        let k = rng.random_range(2..8);
        let (p, q) = (random_dist(k, &mut rng), random_dist(k, &mut rng));
        let w = random_channel(k, rng.random_range(1..6), &mut rng).map_err(e)?;
        let (wp, wq) = (apply_channel(&w, &p).map_err(e)?, apply_channel(&w, &q).map_err(e)?);
        for kind in [DivergenceKind::Tv, DivergenceKind::Kl, DivergenceKind::Chi2] {
            let before = divergence(&p, &q, kind).map_err(e)?;
            let after = divergence(&wp, &wq, kind).map_err(e)?;
            ensure(after <= before + 1e-12, || format!("{kind} grew from {before} to {after}"))?;
        }
    }
    Ok(format!("{count} channel pairs"))
}

fn random_instances(count: usize, seed: u64) -> Vec<(usize, Vec<Channel>, crate::perturbation::PerturbedFamily)> {
    let mut rng = rng::seeded(seed);
    (0..count)
        .map(|i| {
            let k = [2, 4][i % 2];
            let n = 1 + (i / 2) % 3;
            let eps = rng.random_range(0.01..0.5);
            let chans = (0..n)
                .map(|j| {
                    if (i + j) % 5 == 0 {
                        standard_channel(StandardChannel::Identity, k).expect("identity")
                    } else {
                        random_channel(k, rng.random_range(1..5), &mut rng).expect("random channel")
                    }
                })
                .collect();
            (n, chans, paninski_family(k, eps).expect("family"))
        })
        .collect()
}

fn ingster(quick: bool) -> std::result::Result<String, String> {
    let count = if quick { 24 } else { 60 };
    let mut worst: f64 = 0.0;
    for (n, chans, f) in random_instances(count, 103) {
        let exact = ingster_chi2(&chans, &f).map_err(e)?;
        let brute = brute_force_mixture_stats(Some(&chans), &f, n).map_err(e)?;
        let dec = induced_decoupled_fluctuation(&chans, &f).map_err(e)?.value;
        worst = worst.max((exact - brute.chi2).abs());
        ensure((exact - brute.chi2).abs() <= 1e-9, || format!("ingster {exact} vs brute {}", brute.chi2))?;
        ensure(brute.tv * brute.tv <= brute.chi2 + 1e-12, || "tv^2 > chi2".into())?;
        ensure(brute.chi2 <= dec.exp_m1() + 1e-12, || format!("chi2 {} > e^dec - 1 {}", brute.chi2, dec.exp_m1()))?;
    }
    Ok(format!("{count} instances, worst gap {worst:.2e}"))
}

fn pairwise(quick: bool) -> std::result::Result<String, String> {
    let mut rng = rng::seeded(104);
    let per = if quick { 10 } else { 25 };
    let mut total = 0;
    for k in [4, 8, 16] {
        for eps in [0.05, 0.1, 0.3] {
            let f = paninski_family(k, eps).map_err(e)?;
            for _ in 0..per {
                let w = random_channel(k, rng.random_range(1..7), &mut rng).map_err(e)?;
                let lhs = induced_chi2_fluctuation(&w, &f).map_err(e)?.value;
                let rhs = 4.0 * eps * eps / k as f64 * h_matrix(&w).map_err(e)?.nuclear();
                ensure((lhs - rhs).abs() <= 1e-10, || format!("k={k} eps={eps}: {lhs} vs {rhs}"))?;
                total += 1;
            }
        }
    }
    Ok(format!("{total} channels"))
}

fn norm_bounds(quick: bool) -> std::result::Result<String, String> {
    let mut rng = rng::seeded(105);
    let per = if quick { 100 } else { 1000 };
    let k = 8;
    for bits in [1, 2, 3] {
        let spec = ConstraintSpec::comm(bits, k).map_err(e)?;
        for _ in 0..per {
            let w = random_comm_channel(k, bits, &mut rng).map_err(e)?;
            let check = verify_norm_bounds(&w, &spec).map_err(e)?;
            ensure(check.pass, || format!("{check:?}"))?;
        }
    }
    for rho in [0.1, 0.5, 1.0] {
        let spec = ConstraintSpec::ldp(rho, k).map_err(e)?;
        for _ in 0..per {
            let w = random_ldp_channel(k, rng.random_range(2..6), rho, &mut rng).map_err(e)?;
            let check = verify_norm_bounds(&w, &spec).map_err(e)?;
            ensure(check.pass, || format!("{check:?}"))?;
        }
    }
    let h = h_matrix(&standard_channel(StandardChannel::Parity, k).map_err(e)?).map_err(e)?;
    ensure((h.nuclear() - 2.0).abs() < 1e-12 && (h.frobenius_sq() - 4.0).abs() < 1e-12, || {
        format!("parity: nuclear {}, frobenius^2 {}", h.nuclear(), h.frobenius_sq())
    })?;
    Ok(format!("{} channels per constraint", per))
}

fn random_psd(d: usize, rng: &mut impl Rng) -> Result<HMatrix, String> {
    let rank = rng.random_range(1..=d);
    let a = DMatrix::from_fn(d, rank, |_, _| rng.random_range(-1.0..1.0));
    HMatrix::from_symmetric(&a * a.transpose()).map_err(e)
}

fn chaos(quick: bool) -> std::result::Result<String, String> {
    let mut rng = rng::seeded(106);
    let count = if quick { 100 } else { 1000 };
    let grid = [0.05, 0.25, 0.5, 0.75, 0.95];
    for _ in 0..count {
        let d = rng.random_range(1..=if quick { 10 } else { 14 });
        let h = random_psd(d, &mut rng)?;
        for frac in grid {
            let lambda = frac / (2.0 * h.spectral_radius());
            let r = chaos_mgf(&h, lambda).map_err(e)?;
            ensure(r.valid && r.exact_log_mgf <= r.bound, || format!("dim {d}, lambda {lambda}: {r:?}"))?;
        }
    }
    Ok(format!("{count} matrices x {} lambdas", grid.len()))
}

fn maxmin(quick: bool) -> std::result::Result<String, String> {
    let mut rng = rng::seeded(107);
    let samples = if quick { 2000 } else { 10_000 };
    for k in [8, 16, 32] {
        let chans: Vec<_> = (0..3).map(|_| random_channel(k, 2, &mut rng)).collect::<crate::Result<_>>().map_err(e)?;
        let hbar = h_bar(&chans).map_err(e)?;
        let basis = adversarial_basis(&hbar, DEFAULT_C).map_err(e)?;
        let (lhs, rhs) = basis.norm_relation(&hbar);
        ensure(lhs <= rhs + 1e-9, || format!("k={k}: {lhs} > {rhs}"))?;
        let mass = l1_mass_probability(&basis.v, k as f64 / DEFAULT_C, samples, k as u64).map_err(e)?;
        ensure(mass.pass, || format!("k={k}: {mass:?}"))?;
    }
    let parity = standard_channel(StandardChannel::Parity, 4).map_err(e)?;
    for n in 1..=3 {
        let chans = vec![parity.clone(); n];
        let adv = adversarial_perturbation(&chans, 0.05).map_err(e)?;
        let tv = brute_force_mixture_stats(Some(&chans), &adv.family, n).map_err(e)?.tv;
        let value = adv.report.induced_decoupled.value;
        ensure(value.abs() < 1e-12 && tv < 1e-12, || format!("parity n={n}: fluctuation {value}, tv {tv}"))?;
    }
    Ok("norm relation, l1 mass, parity invisibility".into())
}

fn fluctuation_values(_quick: bool) -> std::result::Result<String, String> {
    for k in (2..=24).step_by(2) {
        for eps in [0.05, 0.2, 0.45] {
            let f = paninski_family(k, eps).map_err(e)?;
            let chi2 = chi2_fluctuation(&f).map_err(e)?.value;
            ensure((chi2 - 4.0 * eps * eps).abs() <= 1e-15, || format!("chi2 {chi2} at k={k}"))?;
            for n in [1, 2, 5, 20] {
                let closed = decoupled_fluctuation(&f, n).map_err(e)?.value;
                let exhaustive = decoupled_fluctuation_with(&f, n, Evaluation::Exhaustive).map_err(e)?.value;
                ensure((closed - exhaustive).abs() <= 1e-10, || format!("k={k} n={n}: {closed} vs {exhaustive}"))?;
                let ceiling = 16.0 * (n * n) as f64 * eps.powi(4) / k as f64;
                ensure(closed <= ceiling * (1.0 + 1e-12), || format!("k={k} n={n}: {closed} > {ceiling}"))?;
            }
        }
    }
    Ok("k <= 24 grid".into())
}

fn table(_quick: bool) -> std::result::Result<String, String> {
    let cells = lb_table(256, 0.1, Some(1), None).map_err(e)?;
    let expected = [3_276_800.0, 25_600.0 / std::f64::consts::SQRT_2, 204_800.0];
    for (c, x) in cells.iter().zip(expected) {
        ensure((c.value - x).abs() <= 1e-6 * x, || format!("{}: {} vs {x}", c.task, c.value))?;
    }
    let (k, eps) = (256usize, 0.1);
    let learning = lb_general(Task::Learning, k, eps, k as f64, (2.0 * k as f64).sqrt()).map_err(e)?.value;
    ensure((learning - k as f64 / (eps * eps)).abs() < 1e-6, || format!("learning {learning}"))?;
    Ok(format!("cells {:.0} / {:.1} / {:.0}", cells[0].value, cells[1].value, cells[2].value))
}

fn simulator(quick: bool) -> std::result::Result<String, String> {
    let reps: u64 = if quick { 10 } else { 100 };
    let trials = if quick { 2000 } else { 10_000 };
    let id = standard_channel(StandardChannel::Identity, 4).map_err(e)?;
    let f = paninski_family(4, 0.3).map_err(e)?;
    let u = Distribution::uniform(4).map_err(e)?;
    let mut inside = 0;
    for rep in 0..reps {
        let cfg = ProtocolConfig::new(2, CoinMode::Private, ChannelRule::Fixed(vec![id.clone(); 2]), 1000 + rep);
        let r = simulate_smp(&cfg, &u, &f, trials).map_err(e)?;
        let exact = r.exact_tv.ok_or("missing exact tv")?;
        inside += ((r.empirical_tv - exact).abs() <= 3.0 * r.empirical_tv_stderr) as u64;
        if rep == 0 {
            let again = simulate_smp(&cfg, &u, &f, trials).map_err(e)?;
            ensure(again == r, || "rerun differs".into())?;
        }
    }
    ensure(inside * 100 >= 99 * reps, || format!("{inside}/{reps} within 3 stderr"))?;
    Ok(format!("{inside}/{reps} within 3 stderr"))
}
