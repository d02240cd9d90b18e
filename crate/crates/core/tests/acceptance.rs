//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chi_contract::adversary::{adversarial_basis, adversarial_perturbation, l1_mass_probability, DEFAULT_C};
use chi_contract::bounds::{lb_general, lb_table, Task};
use chi_contract::channels::{
    random_channel, random_comm_channel, random_ldp_channel, standard_channel, ConstraintSpec, StandardChannel,
};
use chi_contract::contraction::{h_bar, h_matrix, verify_norm_bounds, HMatrix};
use chi_contract::fluctuation::{
    brute_force_mixture_stats, chaos_mgf, chi2_fluctuation, decoupled_fluctuation, decoupled_fluctuation_with,
    induced_chi2_fluctuation, induced_decoupled_fluctuation, ingster_chi2, Evaluation, MixtureStats,
};
use chi_contract::perturbation::{paninski_family, PerturbedFamily};
use chi_contract::sim::{exact_bayes_error, simulate_smp, ChannelRule, CoinMode, ProtocolConfig};
use chi_contract::{Channel, Distribution};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: chi_contract::Error) -> String {
    e.to_string()
}

struct Instance {
    n: usize,
    channels: Option<Vec<Channel>>,
    family: PerturbedFamily,
}

/// Mixed instances over k in {2, 4} and n in {1, 2, 3}: raw samples,
/// identity channels, and heterogeneous random channels.
fn instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    for rep in 0..10 {
        for k in [2, 4] {
            for n in 1..=3 {
                let family = paninski_family(k, rng.random_range(0.02..0.5)).unwrap();
                let channels = match rep % 5 {
                    0 => None,
                    1 => Some(vec![standard_channel(StandardChannel::Identity, k).unwrap(); n]),
                    _ => Some((0..n).map(|_| random_channel(k, rng.random_range(1..=4), &mut rng).unwrap()).collect()),
                };
                out.push(Instance { n, channels, family });
            }
        }
    }
    out
}

fn identity_channels(i: &Instance) -> Vec<Channel> {
    vec![standard_channel(StandardChannel::Identity, i.family.k()).unwrap(); i.n]
}

fn criterion_1() -> Outcome {
    let cases = instances();
    let mut worst: f64 = 0.0;
    for case in &cases {
        let chans = case.channels.clone().unwrap_or_else(|| identity_channels(case));
        let exact = ingster_chi2(&chans, &case.family).map_err(err)?;
        let brute = brute_force_mixture_stats(case.channels.as_deref(), &case.family, case.n).map_err(err)?;
        worst = worst.max((exact - brute.chi2).abs());
        ensure((exact - brute.chi2).abs() <= 1e-9, || format!("k={} n={}: {exact} vs {}", case.family.k(), case.n, brute.chi2))?;
    }
    ensure(cases.len() >= 50, || format!("only {} instances", cases.len()))?;
    Ok(format!("{} instances, max |ingster - brute force| = {worst:.1e}", cases.len()))
}

/// `H(W)` from its entry formula; its nuclear norm is its trace.
fn h_trace_oracle(w: &Channel) -> f64 {
    let (k, m) = (w.k(), w.m());
    (0..m)
        .map(|y| {
            let mass: f64 = (0..k).map(|x| w.prob(y, x)).sum();
            if mass == 0.0 {
                return 0.0;
            }
            (0..k / 2).map(|i| (w.prob(y, 2 * i) - w.prob(y, 2 * i + 1)).powi(2)).sum::<f64>() / mass
        })
        .sum()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for k in [4, 8, 16] {
        for eps in [0.05, 0.1, 0.3] {
            let f = paninski_family(k, eps).unwrap();
            for _ in 0..25 {
                let w = random_channel(k, rng.random_range(1..=6), &mut rng).unwrap();
                let lhs = induced_chi2_fluctuation(&w, &f).map_err(err)?.value;
                let nuclear = h_matrix(&w).map_err(err)?.nuclear();
                let scale = 4.0 * eps * eps / k as f64;
                let gap = (lhs - scale * nuclear).abs().max((lhs - scale * h_trace_oracle(&w)).abs());
                worst = worst.max(gap);
                ensure(gap <= 1e-10, || format!("k={k} eps={eps}: {lhs} vs {}", scale * nuclear))?;
                count += 1;
            }
        }
    }
    ensure(count >= 200, || format!("only {count} channels"))?;
    Ok(format!("{count} channels, max gap {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 16;
    for bits in [1u32, 2, 3] {
        let spec = ConstraintSpec::comm(bits, k).unwrap();
        for _ in 0..1000 {
            let w = random_comm_channel(k, bits, &mut rng).map_err(err)?;
            let c = verify_norm_bounds(&w, &spec).map_err(err)?;
            let cap = (1u32 << bits) as f64;
            ensure(c.nuclear <= cap + 1e-9 && c.frobenius_sq <= 2.0 * cap + 1e-9, || format!("l={bits}: {c:?}"))?;
        }
    }
    for rho in [0.1, 0.5, 1.0] {
        let spec = ConstraintSpec::ldp(rho, k).unwrap();
        let cap = (f64::exp(rho) - 1.0).powi(2) / 2.0;
        for _ in 0..1000 {
            let w = random_ldp_channel(k, rng.random_range(2..=6), rho, &mut rng).map_err(err)?;
            let c = verify_norm_bounds(&w, &spec).map_err(err)?;
            ensure(c.nuclear <= cap * (1.0 + 1e-9), || format!("rho={rho}: {c:?}"))?;
        }
    }
    let parity = h_matrix(&standard_channel(StandardChannel::Parity, k).unwrap()).map_err(err)?;
    ensure((parity.nuclear() - 2.0).abs() <= 1e-12 && (parity.frobenius_sq() - 4.0).abs() <= 1e-12, || {
        format!("parity nuclear {} frobenius^2 {}", parity.nuclear(), parity.frobenius_sq())
    })?;
    Ok("3000 comm + 3000 LDP channels within bounds; parity nuclear 2, frobenius^2 4".into())
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = [0.05, 0.2, 0.4, 0.6, 0.8, 0.95];
    let mut violations = 0;
    for _ in 0..1000 {
        let d = rng.random_range(1..=14);
        let rank = rng.random_range(1..=d);
        let a = DMatrix::from_fn(d, rank, |_, _| rng.random_range(-1.0..1.0));
        let h = HMatrix::from_symmetric(&a * a.transpose()).map_err(err)?;
        for frac in grid {
            let r = chaos_mgf(&h, frac / (2.0 * h.spectral_radius())).map_err(err)?;
            if !(r.valid && r.exact_log_mgf <= r.bound) {
                violations += 1;
            }
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!("1000 PSD matrices x {} lambdas, 0 violations", grid.len()))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut probs = Vec::new();
    for k in [8, 16, 32] {
        for _ in 0..3 {
            let n = rng.random_range(1..=5);
            let chans: Vec<_> = (0..n).map(|_| random_channel(k, rng.random_range(2..=4), &mut rng).unwrap()).collect();
            let hbar = h_bar(&chans).map_err(err)?;
            let basis = adversarial_basis(&hbar, DEFAULT_C).map_err(err)?;
            let (lhs, rhs) = basis.norm_relation(&hbar);
            ensure(lhs <= rhs + 1e-9, || format!("k={k}: {lhs} > {rhs}"))?;
            let mass = l1_mass_probability(&basis.v, k as f64 / (12.0 * 2f64.sqrt()), 10_000, k as u64).map_err(err)?;
            ensure(mass.pass, || format!("k={k}: {mass:?}"))?;
            probs.push(mass.p_hat);
        }
    }
    let parity = standard_channel(StandardChannel::Parity, 4).unwrap();
    for n in 1..=3 {
        let chans = vec![parity.clone(); n];
        let adv = adversarial_perturbation(&chans, 0.05).map_err(err)?;
        let value = adv.report.induced_decoupled.value;
        let stats = brute_force_mixture_stats(Some(&chans), &adv.family, n).map_err(err)?;
        ensure(value.abs() <= 1e-12 && stats.tv <= 1e-12, || format!("parity n={n}: {value}, tv {}", stats.tv))?;
    }
    let min_p = probs.iter().copied().fold(1.0, f64::min);
    Ok(format!("norm relation on 9 bases; min P(|Z|_1 >= k/(12 sqrt 2)) = {min_p:.3}; parity fluctuation and TV 0 for n <= 3"))
}

fn criterion_6() -> Outcome {
    let mut compared = 0;
    for k in (2..=24).step_by(2) {
        for eps in [0.01, 0.05, 0.1, 0.25, 0.5] {
            let f = paninski_family(k, eps).unwrap();
            let chi2 = chi2_fluctuation(&f).map_err(err)?.value;
            ensure((chi2 - 4.0 * eps * eps).abs() <= 4.0 * f64::EPSILON * chi2, || format!("k={k}: chi2 {chi2}"))?;
            for n in [1, 2, 4, 10, 50] {
                let closed = decoupled_fluctuation(&f, n).map_err(err)?.value;
                let x = 8.0 * n as f64 * eps * eps / k as f64;
                let formula = (k as f64 / 2.0) * (2.0 * (x / 2.0).sinh().powi(2)).ln_1p();
                let exhaustive = decoupled_fluctuation_with(&f, n, Evaluation::Exhaustive).map_err(err)?.value;
                ensure((closed - exhaustive).abs() <= 1e-10 && (closed - formula).abs() <= 1e-10, || {
                    format!("k={k} n={n} eps={eps}: {closed} vs {exhaustive}")
                })?;
                let ceiling = 16.0 * (n * n) as f64 * eps.powi(4) / k as f64;
                ensure(closed <= ceiling, || format!("k={k} n={n} eps={eps}: {closed} > {ceiling}"))?;
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} grid points: closed form = exhaustive, below 16n^2eps^4/k"))
}

fn criterion_7() -> Outcome {
    let cases = instances();
    for case in &cases {
        let MixtureStats { chi2, tv } = brute_force_mixture_stats(case.channels.as_deref(), &case.family, case.n).map_err(err)?;
        let chans = case.channels.clone().unwrap_or_else(|| identity_channels(case));
        let dec = induced_decoupled_fluctuation(&chans, &case.family).map_err(err)?.value;
        ensure(tv * tv <= chi2 + 1e-12 && chi2 <= dec.exp_m1() + 1e-12, || {
            format!("k={} n={}: tv^2 {} chi2 {chi2} e^dec-1 {}", case.family.k(), case.n, tv * tv, dec.exp_m1())
        })?;
    }
    Ok(format!("tv^2 <= chi2 <= exp(decoupled) - 1 on {} instances", cases.len()))
}

fn criterion_8() -> Outcome {
    let cells = lb_table(256, 0.1, Some(1), None).map_err(err)?;
    // k^2/(eps^2 2^l), k/(eps^2 2^(l/2)), k^(3/2)/(eps^2 2^l) at k=256, eps=0.1, l=1
    let expected = [3_276_800.0, 18_101.933_598_375_6, 204_800.0];
    for (cell, x) in cells.iter().zip(expected) {
        ensure((cell.value - x).abs() <= 1e-9 * x, || format!("{}: {} vs {x}", cell.task, cell.value))?;
    }
    ensure(cells[1].value.round() == 18_102.0, || "testing_public does not round to 18,102".into())?;
    let (k, eps) = (256usize, 0.1);
    let kf = k as f64;
    let learning = lb_general(Task::Learning, k, eps, kf, (2.0 * kf).sqrt()).map_err(err)?.value;
    let public = lb_general(Task::TestingPublic, k, eps, kf, (2.0 * kf).sqrt()).map_err(err)?.value;
    ensure((learning - kf / (eps * eps)).abs() <= 1e-9 * learning, || format!("learning {learning}"))?;
    let ratio = public / (kf.sqrt() / (eps * eps));
    ensure((ratio - 1.0 / 2f64.sqrt()).abs() <= 1e-12, || format!("testing_public / (sqrt(k)/eps^2) = {ratio}"))?;
    Ok(format!(
        "comm cells {:.0} / {:.0} / {:.0}; identity norms give k/eps^2 and sqrt(k)/eps^2 / sqrt 2",
        cells[0].value, cells[1].value, cells[2].value
    ))
}

fn criterion_9() -> Outcome {
    let (k, n, trials, reps) = (4, 2, 10_000, 100);
    let id = standard_channel(StandardChannel::Identity, k).unwrap();
    let f = paninski_family(k, 0.3).unwrap();
    let u = Distribution::uniform(k).unwrap();
    let exact = exact_bayes_error(&vec![id.clone(); n], &f, n).map_err(err)?.tv;
    let mut inside = 0;
    for rep in 0..reps {
        let cfg = ProtocolConfig::new(n, CoinMode::Private, ChannelRule::Fixed(vec![id.clone(); n]), 90_000 + rep);
        let first = simulate_smp(&cfg, &u, &f, trials).map_err(err)?;
        if rep < 3 {
            let again = simulate_smp(&cfg, &u, &f, trials).map_err(err)?;
            let (a, b) = (serde_json::to_string(&first).unwrap(), serde_json::to_string(&again).unwrap());
            ensure(a == b, || format!("seed {} not reproducible", cfg.seed))?;
        }
        ensure(first.exact_tv == Some(exact), || "report exact tv differs from oracle".into())?;
        if (first.empirical_tv - exact).abs() <= 3.0 * first.empirical_tv_stderr {
            inside += 1;
        }
    }
    ensure(inside >= 99, || format!("{inside}/{reps} within 3 stderr"))?;
    Ok(format!("exact tv {exact:.4}; {inside}/{reps} repetitions within 3 stderr; reruns bitwise identical"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("ingster exactness", criterion_1, Duration::from_secs(30)),
        ("pairwise identity", criterion_2, Duration::from_secs(10)),
        ("norm bounds", criterion_3, Duration::from_secs(60)),
        ("chaos mgf bound", criterion_4, Duration::from_secs(60)),
        ("maxmin construction", criterion_5, Duration::from_secs(60)),
        ("fluctuation values", criterion_6, Duration::from_secs(30)),
        ("le cam chain", criterion_7, Duration::from_secs(30)),
        ("table reproduction", criterion_8, Duration::from_secs(1)),
        ("simulator fidelity", criterion_9, Duration::from_secs(120)),
    ];
    let mut failures = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= *limit => (true, d),
            Ok(d) => (false, format!("{d}; runtime {elapsed:.2?} exceeds {limit:?}")),
            Err(d) => (false, d),
        };
        failures += !pass as usize;
        println!(
            "criterion {} ({name}): {} [{:.2?}] {detail}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed
        );
    }
    if failures == 0 {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
