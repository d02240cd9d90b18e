//! The `chi-contract` command line.
//!
//! Every subcommand writes its JSON or CSV result to `--out` (or stdout when
//! absent) and prints a one-line summary. Usage errors exit with 2; numeric
//! and input failures exit with 1 after printing a JSON error record to
//! stderr.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::adversary::{adversarial_perturbation_with, AdversaryOptions, DEFAULT_C};
use crate::bounds::{lb_table, BoundReport};
use crate::channels::{
    check_comm, check_ldp, random_channel, random_comm_channel, random_ldp_channel, reachable_outputs, standard_channel,
    ConstraintSpec, StandardChannel,
};
use crate::contraction::{h_matrix, verify_norm_bounds};
use crate::error::{Error, Result};
use crate::fluctuation::{
    chi2_fluctuation, decoupled_fluctuation_with, induced_chi2_fluctuation, induced_decoupled_fluctuation_with,
    ingster_chi2_with, Evaluation, FluctuationReport,
};
use crate::io;
use crate::perturbation::{paninski_family, PerturbedFamily};
use crate::prob::Channel;
use crate::rng;
use crate::sim::{simulate_smp, ChannelRule, CoinMode, ProtocolConfig, Statistic};
use crate::verify::run_suite;

#[derive(Debug, Parser)]
#[command(name = "chi-contract", version, about = "Chi-square contraction bounds for locally constrained inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or inspect channels.
    #[command(subcommand)]
    Channel(ChannelCommand),
    /// The H(W) matrix of a channel and its norms.
    Hmatrix(HmatrixArgs),
    /// Chi-square fluctuations of a perturbed family.
    Fluctuation(FluctuationArgs),
    /// Build the perturbation hardest for a channel sequence to detect.
    Adversary(AdversaryArgs),
    /// Order-level sample-complexity lower bounds.
    Bound(BoundArgs),
    /// Simulate a simultaneous-message-passing protocol.
    Simulate(SimulateArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ChannelKind {
    Identity,
    Constant,
    Parity,
    Quantizer,
    RandomizedResponse,
    Random,
    RandomComm,
    RandomLdp,
}

#[derive(Debug, Subcommand)]
enum ChannelCommand {
    /// Write a reference or random channel.
    Make {
        #[arg(long, value_enum)]
        kind: ChannelKind,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        rho: Option<f64>,
        /// Output alphabet size for random channels.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report reachable outputs and constraint membership.
    Check {
        #[arg(long)]
        channel: PathBuf,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct HmatrixArgs {
    #[arg(long)]
    channel: PathBuf,
    /// Also check the communication norm bounds for this many bits.
    #[arg(long)]
    bits: Option<u32>,
    /// Also check the LDP norm bound at this level.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Where the perturbed family comes from.
#[derive(Debug, Args)]
struct FamilySource {
    /// Family JSON file.
    #[arg(long, conflicts_with = "paninski")]
    family: Option<PathBuf>,
    /// Use Paninski's family on `--k` symbols at distance `--eps`.
    #[arg(long, requires_all = ["k", "eps"])]
    paninski: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
}

impl FamilySource {
    fn load(&self) -> Result<PerturbedFamily> {
        match (&self.family, self.paninski, self.k, self.eps) {
            (Some(path), _, _, _) => io::read_family(path),
            (None, true, Some(k), Some(eps)) => paninski_family(k, eps),
            _ => Err(Error::InvalidParameter("give --family or --paninski --k K --eps E".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum FluctuationKindArg {
    Chi2,
    Decoupled,
    InducedChi2,
    InducedDecoupled,
    Ingster,
}

#[derive(Debug, Args)]
struct FluctuationArgs {
    #[command(flatten)]
    source: FamilySource,
    /// Comma-separated channel files, one per player.
    #[arg(long, value_delimiter = ',')]
    channels: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, value_enum)]
    kind: FluctuationKindArg,
    /// Force Monte Carlo with this many samples.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdversaryArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    channels: Vec<PathBuf>,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
    /// Constant of the validity regime; defaults to 1/(8c^2).
    #[arg(long)]
    regime_constant: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    certificate_trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Family JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report JSON output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum CoinArg {
    Private,
    Public,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StatisticArg {
    Joint,
    OutputHistogram,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: FamilySource,
    /// Null distribution file; defaults to the family's nominal.
    #[arg(long)]
    null: Option<PathBuf>,
    /// Fixed per-player channels (comma-separated, one per player).
    #[arg(long, value_delimiter = ',', conflicts_with = "pool")]
    channels: Vec<PathBuf>,
    /// Channel pool drawn from by the coins.
    #[arg(long, value_delimiter = ',')]
    pool: Vec<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "private")]
    coin: CoinArg,
    #[arg(long, value_enum, default_value = "joint")]
    statistic: StatisticArg,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Smaller instance counts.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(Outcome { summary, ok }) => {
            println!("{summary}");
            if ok {
                0
            } else {
                1
            }
        }
        Err(err) => {
            eprintln!("{}", json!({ "error": err.code(), "message": err.to_string() }));
            1
        }
    }
}

struct Outcome {
    summary: String,
    ok: bool,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Self { summary, ok: true }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => io::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    emit(out, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_channels(paths: &[PathBuf]) -> Result<Vec<Channel>> {
    paths.iter().map(io::read_channel).collect()
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Channel(c) => channel(c),
        Command::Hmatrix(a) => hmatrix(a),
        Command::Fluctuation(a) => fluctuation(a),
        Command::Adversary(a) => adversary(a),
        Command::Bound(a) => bound(a),
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
    }
}

fn need<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidParameter(format!("this channel kind needs --{flag}")))
}

fn channel(cmd: ChannelCommand) -> Result<Outcome> {
    match cmd {
        ChannelCommand::Make { kind, k, bits, rho, m, seed, out } => {
            let mut rng = rng::seeded(seed);
            let w = match kind {
                ChannelKind::Identity => standard_channel(StandardChannel::Identity, k)?,
                ChannelKind::Constant => standard_channel(StandardChannel::Constant, k)?,
                ChannelKind::Parity => standard_channel(StandardChannel::Parity, k)?,
                ChannelKind::Quantizer => standard_channel(StandardChannel::Quantizer { bits: need(bits, "bits")? }, k)?,
                ChannelKind::RandomizedResponse => {
                    standard_channel(StandardChannel::RandomizedResponse { rho: need(rho, "rho")? }, k)?
                }
                ChannelKind::Random => random_channel(k, need(m, "m")?, &mut rng)?,
                ChannelKind::RandomComm => random_comm_channel(k, need(bits, "bits")?, &mut rng)?,
                ChannelKind::RandomLdp => random_ldp_channel(k, need(m, "m")?, need(rho, "rho")?, &mut rng)?,
            };
            emit(&out, &(io::encode_channel(&w) + "\n"))?;
            Ok(Outcome::ok(format!("channel {kind:?}: k={} m={}", w.k(), w.m())))
        }
        ChannelCommand::Check { channel, bits, rho, out } => {
            let w = io::read_channel(&channel)?;
            let reachable = reachable_outputs(&w);
            let comm = bits.map(|b| check_comm(&w, b));
            let ldp = rho.map(|r| check_ldp(&w, r));
            emit_json(&out, &json!({
                "k": w.k(),
                "m": w.m(),
                "reachable_outputs": reachable,
                "comm_ok": comm,
                "ldp": ldp,
            }))?;
            let ok = comm.unwrap_or(true) && ldp.is_none_or(|c| c.passes);
            Ok(Outcome {
                summary: format!("channel k={} m={} reachable={reachable} admitted={ok}", w.k(), w.m()),
                ok,
            })
        }
    }
}

fn hmatrix(a: HmatrixArgs) -> Result<Outcome> {
    let w = io::read_channel(&a.channel)?;
    let h = h_matrix(&w)?;
    let mut checks = Vec::new();
    if let Some(bits) = a.bits {
        checks.push(verify_norm_bounds(&w, &ConstraintSpec::comm(bits, w.k())?)?);
    }
    if let Some(rho) = a.rho {
        checks.push(verify_norm_bounds(&w, &ConstraintSpec::ldp(rho, w.k())?)?);
    }
    let entries: Vec<Vec<f64>> = h.entries().row_iter().map(|r| r.iter().copied().collect()).collect();
    emit_json(&a.out, &json!({
        "dim": h.dim(),
        "entries": entries,
        "eigenvalues": h.eigenvalues(),
        "nuclear": h.nuclear(),
        "frobenius": h.frobenius(),
        "spectral_radius": h.spectral_radius(),
        "rank": h.rank(),
        "bound_checks": checks,
    }))?;
    let ok = checks.iter().all(|c| c.pass);
    Ok(Outcome {
        summary: format!(
            "H(W): dim={} nuclear={:.6} frobenius={:.6} rank={} bounds_ok={ok}",
            h.dim(),
            h.nuclear(),
            h.frobenius(),
            h.rank()
        ),
        ok,
    })
}

fn fluctuation(a: FluctuationArgs) -> Result<Outcome> {
    let f = a.source.load()?;
    let channels = load_channels(&a.channels)?;
    let eval = match a.samples {
        Some(samples) => Evaluation::MonteCarlo { samples, seed: a.seed },
        None => Evaluation::Auto,
    };
    let need_channels = |count: Option<usize>| -> Result<()> {
        match count {
            Some(c) if channels.len() != c => Err(Error::DimensionMismatch { expected: c, got: channels.len() }),
            None if channels.is_empty() => Err(Error::InvalidParameter("this kind needs --channels".into())),
            _ => Ok(()),
        }
    };
    let ids: Vec<String> = a.channels.iter().map(|p| p.display().to_string()).collect();
    let family_id = match (&a.source.family, a.source.k, a.source.eps) {
        (Some(p), _, _) => p.display().to_string(),
        (None, Some(k), Some(eps)) => format!("paninski(k={k},eps={eps})"),
        _ => "family".into(),
    };
    let value = |report: FluctuationReport| report.with_ids(family_id.clone(), ids.clone());
    let report = match a.kind {
        FluctuationKindArg::Chi2 => serde_json::to_value(value(chi2_fluctuation(&f)?))?,
        FluctuationKindArg::Decoupled => serde_json::to_value(value(decoupled_fluctuation_with(&f, a.n, eval)?))?,
        FluctuationKindArg::InducedChi2 => {
            need_channels(Some(1))?;
            serde_json::to_value(value(induced_chi2_fluctuation(&channels[0], &f)?))?
        }
        FluctuationKindArg::InducedDecoupled => {
            need_channels(None)?;
            serde_json::to_value(value(induced_decoupled_fluctuation_with(&channels, &f, eval)?))?
        }
        FluctuationKindArg::Ingster => {
            need_channels(None)?;
            let est = ingster_chi2_with(&channels, &f, eval)?;
            json!({
                "kind": "ingster_chi2",
                "value": est.value,
                "method": est.method,
                "mc_stderr": est.mc_stderr,
                "n": channels.len(),
                "family_id": family_id,
                "channel_ids": ids,
            })
        }
    };
    emit_json(&a.out, &report)?;
    Ok(Outcome::ok(format!(
        "{}: {} ({})",
        report["kind"].as_str().unwrap_or("fluctuation"),
        report["value"],
        report["method"].as_str().unwrap_or("")
    )))
}

fn adversary(a: AdversaryArgs) -> Result<Outcome> {
    let channels = load_channels(&a.channels)?;
    let opts = AdversaryOptions {
        c: a.c,
        regime_constant: a.regime_constant,
        certificate_trials: a.certificate_trials,
        seed: a.seed,
    };
    let adv = adversarial_perturbation_with(&channels, a.eps, opts)?;
    emit(&a.out, &(io::encode_family(&adv.family) + "\n"))?;
    if let Some(path) = &a.report {
        io::write_json(path, &adv.report)?;
    }
    let r = &adv.report;
    Ok(Outcome::ok(format!(
        "adversary: k={} n={} induced_decoupled={:.6e} ceiling={:.6e} within_regime={} invalid_rate={:.4}",
        r.k, r.n, r.induced_decoupled.value, r.ceiling, r.within_regime, r.invalid_rate
    )))
}

fn bound(a: BoundArgs) -> Result<Outcome> {
    let cells = lb_table(a.k, a.eps, a.bits, a.rho)?;
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&cells)? + "\n",
        Format::Csv => {
            let mut s = String::from(BoundReport::CSV_HEADER);
            s.push('\n');
            for c in &cells {
                s.push_str(&c.csv_row());
                s.push('\n');
            }
            s
        }
    };
    emit(&a.out, &text)?;
    let values: Vec<String> = cells.iter().map(|c| format!("{}={:.1}", c.task, c.value)).collect();
    Ok(Outcome::ok(format!("bounds k={} eps={}: {}", a.k, a.eps, values.join(" "))))
}

fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let f = a.source.load()?;
    let null = match &a.null {
        Some(p) => io::read_distribution(p)?,
        None => f.q().clone(),
    };
    let rule = if !a.pool.is_empty() {
        ChannelRule::Pool(load_channels(&a.pool)?)
    } else if !a.channels.is_empty() {
        ChannelRule::Fixed(load_channels(&a.channels)?)
    } else {
        return Err(Error::InvalidParameter("give --channels or --pool".into()));
    };
    let coin = match a.coin {
        CoinArg::Private => CoinMode::Private,
        CoinArg::Public => CoinMode::Public,
    };
    let mut cfg = ProtocolConfig::new(a.n, coin, rule, a.seed);
    cfg.statistic = match a.statistic {
        StatisticArg::Joint => Statistic::Joint,
        StatisticArg::OutputHistogram => Statistic::OutputHistogram,
    };
    let report = simulate_smp(&cfg, &null, &f, a.trials)?;
    emit_json(&a.out, &report)?;
    let exact = report.exact_tv.map_or("n/a".to_string(), |t| format!("{t:.6}"));
    Ok(Outcome::ok(format!(
        "simulate: trials={} empirical_tv={:.6} stderr={:.6} exact_tv={exact}",
        report.trials, report.empirical_tv, report.empirical_tv_stderr
    )))
}

fn verify(a: VerifyArgs) -> Result<Outcome> {
    let outcomes = run_suite(a.quick);
    emit_json(&a.out, &outcomes)?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    for o in &outcomes {
        eprintln!("{} {} ({:.2}s): {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.seconds, o.detail);
    }
    Ok(Outcome {
        summary: if failed.is_empty() {
            format!("verify: {} checks passed", outcomes.len())
        } else {
            format!("verify: {} of {} checks failed: {}", failed.len(), outcomes.len(), failed.join(", "))
        },
        ok: failed.is_empty(),
    })
}
