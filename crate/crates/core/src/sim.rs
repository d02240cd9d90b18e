//! Simultaneous-message-passing simulation.
//!
//! Each trial runs two arms. The null arm draws `X_1..X_n` i.i.d. from the
//! null distribution; the alternative arm draws a parameter `Z`, then
//! `X_1..X_n` i.i.d. from `p_Z`. Every player passes its sample through a
//! channel chosen by the protocol's coins and the referee records the
//! messages (and the shared coin in public mode). The report compares the
//! two arms' empirical message laws.
//!
//! All randomness comes from [`rng::substream`] with the trial index as the
//! stream and the player index as the lane, so reports are bitwise
//! reproducible and independent of evaluation order.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::adversarial_perturbation;
use crate::error::{Error, Result};
use crate::fluctuation::brute_force_mixture_stats;
use crate::perturbation::{paninski_family, PerturbedFamily};
use crate::prob::{divergence, mix_channels, Channel, Distribution, DivergenceKind};
use crate::rng::{self, SHARED_LANE};

pub const TRIAL_REPORT_SCHEMA: &str = "trial-report/1";

/// Largest number of distinct message records kept for plug-in estimates.
pub const PLUGIN_CAP: u128 = 1 << 20;

/// Rejection-sampling budget for a valid member per trial.
const MAX_MEMBER_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoinMode {
    Private,
    Public,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelRule {
    /// Player `i` always uses channel `i`.
    Fixed(Vec<Channel>),
    /// Channels drawn uniformly from the pool: one shared draw for all
    /// players in public mode, one draw per player in private mode.
    Pool(Vec<Channel>),
}

/// What the referee's record is reduced to before comparing arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// The full message vector.
    Joint,
    /// How many players sent each output symbol.
    OutputHistogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub n: usize,
    pub coin_mode: CoinMode,
    pub rule: ChannelRule,
    pub seed: u64,
    pub statistic: Statistic,
}

impl ProtocolConfig {
    pub fn new(n: usize, coin_mode: CoinMode, rule: ChannelRule, seed: u64) -> Self {
        Self { n, coin_mode, rule, seed, statistic: Statistic::Joint }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        let chans = match &self.rule {
            ChannelRule::Fixed(c) => {
                if c.len() != self.n {
                    return Err(Error::DimensionMismatch { expected: self.n, got: c.len() });
                }
                c
            }
            ChannelRule::Pool(c) => {
                if c.is_empty() {
                    return Err(Error::InvalidParameter("empty channel pool".into()));
                }
                c
            }
        };
        if let Some(w) = chans.iter().find(|w| w.k() != k) {
            return Err(Error::DimensionMismatch { expected: k, got: w.k() });
        }
        Ok(())
    }

    fn max_outputs(&self) -> usize {
        match &self.rule {
            ChannelRule::Fixed(c) | ChannelRule::Pool(c) => c.iter().map(Channel::m).max().unwrap_or(1),
        }
    }

    /// Upper bound on the number of distinct records.
    fn record_space(&self) -> u128 {
        let m = self.max_outputs() as u128;
        let n = self.n as u32;
        let base = match self.statistic {
            Statistic::Joint => m.checked_pow(n),
            Statistic::OutputHistogram => (n as u128 + 1).checked_pow(m.min(u32::MAX as u128) as u32),
        }
        .unwrap_or(u128::MAX);
        match (&self.rule, self.coin_mode) {
            (ChannelRule::Pool(p), CoinMode::Public) => base.saturating_mul(p.len() as u128),
            _ => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageCount {
    pub message: Vec<u32>,
    pub null: u64,
    pub alt: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub schema: String,
    pub trials: usize,
    pub n: usize,
    pub coin_mode: CoinMode,
    pub statistic: Statistic,
    pub seed: u64,
    /// Records observed in either arm, in lexicographic order. In public
    /// mode the first entry is the shared coin.
    pub empirical_message_stats: Vec<MessageCount>,
    /// Draws of `Z` rejected because `p_Z` had a negative entry.
    pub member_rejections: u64,
    pub empirical_tv: f64,
    pub empirical_tv_stderr: f64,
    pub exact_tv: Option<f64>,
    pub bayes_error: Option<f64>,
}

#[derive(Debug, Clone)]
struct Cdf(Vec<f64>);

impl Cdf {
    fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        Cdf(probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.0.last().copied().unwrap_or(1.0);
        self.0.partition_point(|&c| c <= u).min(self.0.len() - 1)
    }
}

struct CompiledChannel {
    columns: Vec<Cdf>,
}

impl CompiledChannel {
    fn new(w: &Channel) -> Self {
        let columns = (0..w.k()).map(|x| Cdf::new(w.output_given(x).probs())).collect();
        Self { columns }
    }
}

// (arm, purpose) pairs for substream domains
const PURPOSE_PARAM: u64 = 0;
const PURPOSE_COIN: u64 = 1;
const PURPOSE_SAMPLE: u64 = 2;
const PURPOSE_OUTPUT: u64 = 3;

fn domain(arm: u64, purpose: u64) -> u64 {
    arm * 16 + purpose
}

pub fn simulate_smp(cfg: &ProtocolConfig, null: &Distribution, alt: &PerturbedFamily, trials: usize) -> Result<TrialReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let k = alt.k();
    if null.k() != k {
        return Err(Error::DimensionMismatch { expected: k, got: null.k() });
    }
    cfg.validate(k)?;
    let space = cfg.record_space();
    if space > PLUGIN_CAP {
        return Err(Error::CapExceeded { size: space, cap: PLUGIN_CAP });
    }

    let pool: Vec<CompiledChannel> = match &cfg.rule {
        ChannelRule::Fixed(c) | ChannelRule::Pool(c) => c.iter().map(CompiledChannel::new).collect(),
    };
    let null_cdf = Cdf::new(null.probs());
    let mut counts: BTreeMap<Vec<u32>, [u64; 2]> = BTreeMap::new();
    let mut rejections = 0u64;

    for t in 0..trials as u64 {
        for arm in 0..2u64 {
            let alt_cdf;
            let source = if arm == 0 {
                &null_cdf
            } else {
                let mut prng = rng::substream(cfg.seed, domain(arm, PURPOSE_PARAM), t, SHARED_LANE);
                let (z, rejected) = alt.sample_valid(&mut prng, MAX_MEMBER_ATTEMPTS)?;
                rejections += rejected as u64;
                alt_cdf = Cdf::new(&alt.member_probs(z.as_slice()));
                &alt_cdf
            };
            let shared = match (&cfg.rule, cfg.coin_mode) {
                (ChannelRule::Pool(p), CoinMode::Public) => {
                    Some(rng::substream(cfg.seed, domain(arm, PURPOSE_COIN), t, SHARED_LANE).random_range(0..p.len()))
                }
                _ => None,
            };
            let mut outputs = Vec::with_capacity(cfg.n);
            for i in 0..cfg.n {
                let lane = i as u64;
                let w = match &cfg.rule {
                    ChannelRule::Fixed(_) => &pool[i],
                    ChannelRule::Pool(_) => match shared {
                        Some(u) => &pool[u],
                        None => {
                            let u = rng::substream(cfg.seed, domain(arm, PURPOSE_COIN), t, lane).random_range(0..pool.len());
                            &pool[u]
                        }
                    },
                };
                let x = source.sample(&mut rng::substream(cfg.seed, domain(arm, PURPOSE_SAMPLE), t, lane));
                let y = w.columns[x].sample(&mut rng::substream(cfg.seed, domain(arm, PURPOSE_OUTPUT), t, lane));
                outputs.push(y);
            }
            let mut record: Vec<u32> = shared.map(|u| u as u32).into_iter().collect();
            match cfg.statistic {
                Statistic::Joint => record.extend(outputs.iter().map(|&y| y as u32)),
                Statistic::OutputHistogram => {
                    let mut hist = vec![0u32; cfg.max_outputs()];
                    outputs.iter().for_each(|&y| hist[y] += 1);
                    record.extend(hist);
                }
            }
            counts.entry(record).or_insert([0, 0])[arm as usize] += 1;
        }
    }

    let n_trials = trials as f64;
    let (mut tv, mut spread) = (0.0, 0.0);
    for [a, b] in counts.values() {
        let (q, p) = (*a as f64 / n_trials, *b as f64 / n_trials);
        tv += (p - q).abs();
        spread += (p * (1.0 - p) / n_trials + q * (1.0 - q) / n_trials).sqrt();
    }
    let exact_tv = exact_tv_for(cfg, null, alt).ok();
    Ok(TrialReport {
        schema: TRIAL_REPORT_SCHEMA.into(),
        trials,
        n: cfg.n,
        coin_mode: cfg.coin_mode,
        statistic: cfg.statistic,
        seed: cfg.seed,
        empirical_message_stats: counts
            .into_iter()
            .map(|(message, [null, alt])| MessageCount { message, null, alt })
            .collect(),
        member_rejections: rejections,
        empirical_tv: tv / 2.0,
        // conservative: the half-sum of per-record standard deviations
        // bounds the spread of the plug-in L1 distance
        empirical_tv_stderr: spread / 2.0,
        exact_tv,
        bayes_error: exact_tv.map(|tv| (1.0 - tv) / 2.0),
    })
}

/// Exact TV between the arms' record laws, when the null is the family's
/// nominal and the records are the full message vectors.
fn exact_tv_for(cfg: &ProtocolConfig, null: &Distribution, alt: &PerturbedFamily) -> Result<f64> {
    if cfg.statistic != Statistic::Joint || divergence(null, alt.q(), DivergenceKind::Tv)? > 1e-12 {
        return Err(Error::InvalidParameter("no exact oracle for this configuration".into()));
    }
    match (&cfg.rule, cfg.coin_mode) {
        (ChannelRule::Fixed(c), _) => Ok(exact_bayes_error(c, alt, cfg.n)?.tv),
        (ChannelRule::Pool(p), CoinMode::Private) => {
            let weight = 1.0 / p.len() as f64;
            let mixed = mix_channels(&p.iter().map(|w| (w.clone(), weight)).collect::<Vec<_>>())?;
            Ok(exact_bayes_error(&vec![mixed; cfg.n], alt, cfg.n)?.tv)
        }
        (ChannelRule::Pool(p), CoinMode::Public) => {
            let mut total = 0.0;
            for w in p {
                total += exact_bayes_error(&vec![w.clone(); cfg.n], alt, cfg.n)?.tv;
            }
            Ok(total / p.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesError {
    pub tv: f64,
    pub bayes_error: f64,
}

/// Exact TV between the mixture of the players' output laws and the
/// nominal output law, with the equal-prior Bayes error `(1 - tv)/2`.
pub fn exact_bayes_error(channels: &[Channel], f: &PerturbedFamily, n: usize) -> Result<BayesError> {
    let tv = brute_force_mixture_stats(Some(channels), f, n)?.tv;
    Ok(BayesError { tv, bayes_error: (1.0 - tv) / 2.0 })
}

/// The 1-bit channels `y = 1{x in A}` where `A` holds one input of every
/// pair, up to complement (so `2^(k/2 - 1)` channels).
pub fn pair_partition_channels(k: usize) -> Result<Vec<Channel>> {
    if k < 2 || !k.is_multiple_of(2) || k > 40 {
        return Err(Error::InvalidParameter(format!("need even k in [2, 40], got {k}")));
    }
    let half = k / 2;
    (0..1u64 << (half - 1))
        .map(|mask| {
            let mut rows = vec![vec![0.0; k]; 2];
            for i in 0..half {
                let picked = if (mask >> i) & 1 == 1 { 2 * i + 1 } else { 2 * i };
                rows[1][picked] = 1.0;
                rows[0][picked ^ 1] = 1.0;
            }
            Channel::from_rows(&rows)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationDemo {
    pub k: usize,
    pub n: usize,
    pub eps: f64,
    pub candidates: usize,
    /// Largest exact TV of the adversarial family built against a fixed
    /// assignment, over all assignments of candidate channels to players.
    pub private_best_tv: f64,
    pub private_best_assignment: Vec<usize>,
    /// Exact TV of Paninski's family averaged over independent uniform
    /// candidate channels per player.
    pub public_average_tv: f64,
    pub separated: bool,
}

/// Compares the best fixed assignment against its adversary with shared
/// random assignments against Paninski's family.
pub fn separation_demo(k: usize, eps: f64, n: usize) -> Result<SeparationDemo> {
    let cands = pair_partition_channels(k)?;
    let c = cands.len();
    let total = c.checked_pow(n as u32).filter(|&t| t <= 1 << 16).ok_or_else(|| {
        Error::CapExceeded { size: (c as u128).saturating_pow(n as u32), cap: 1 << 16 }
    })?;
    let paninski = paninski_family(k, eps)?;
    let (mut best_tv, mut best, mut public) = (f64::NEG_INFINITY, Vec::new(), 0.0);
    for code in 0..total {
        let assignment: Vec<usize> = (0..n).map(|i| code / c.pow(i as u32) % c).collect();
        let chans: Vec<Channel> = assignment.iter().map(|&a| cands[a].clone()).collect();
        let adv = adversarial_perturbation(&chans, eps)?;
        let tv = exact_bayes_error(&chans, &adv.family, n)?.tv;
        if tv > best_tv {
            best_tv = tv;
            best = assignment;
        }
        public += exact_bayes_error(&chans, &paninski, n)?.tv;
    }
    let public_average_tv = public / total as f64;
    Ok(SeparationDemo {
        k,
        n,
        eps,
        candidates: c,
        private_best_tv: best_tv,
        private_best_assignment: best,
        public_average_tv,
        separated: best_tv < public_average_tv,
    })
}
