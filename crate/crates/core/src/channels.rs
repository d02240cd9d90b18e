//! Reference channels and the two constraint families: `ℓ`-bit
//! communication and `ρ`-local differential privacy.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::Channel;

/// Output alphabet of [`StandardChannel::Constant`].
pub const CONSTANT_CHANNEL_OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// At most `2^bits` distinct outputs.
    Comm { bits: u32 },
    /// `W(y|x1) <= e^rho W(y|x2)` for all `y, x1, x2`.
    Ldp { rho: f64 },
}

/// A constraint family together with the input alphabet it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub constraint: Constraint,
    pub k: usize,
}

impl ConstraintSpec {
    pub fn comm(bits: u32, k: usize) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidParameter("communication budget must be at least one bit".into()));
        }
        Ok(Self { constraint: Constraint::Comm { bits }, k })
    }

    pub fn ldp(rho: f64, k: usize) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter(format!("privacy level must be positive, got {rho}")));
        }
        Ok(Self { constraint: Constraint::Ldp { rho }, k })
    }

    /// True when the norm bounds for LDP channels are stated outside their
    /// `rho <= 1` regime.
    pub fn outside_small_rho_regime(&self) -> bool {
        matches!(self.constraint, Constraint::Ldp { rho } if rho > 1.0)
    }

    pub fn label(&self) -> String {
        match self.constraint {
            Constraint::Comm { bits } => format!("comm(l={bits})"),
            Constraint::Ldp { rho } => format!("ldp(rho={rho})"),
        }
    }

    /// Whether `w` belongs to the family.
    pub fn admits(&self, w: &Channel) -> bool {
        match self.constraint {
            Constraint::Comm { bits } => check_comm(w, bits),
            Constraint::Ldp { rho } => check_ldp(w, rho).passes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum StandardChannel {
    Identity,
    Constant,
    Parity,
    Quantizer { bits: u32 },
    RandomizedResponse { rho: f64 },
}

/// Builds one of the reference channels on `k` inputs.
///
/// Inputs are 0-based here, so "odd `x`" in the 1-based convention is an
/// even index: parity sends index `x` to output `(x + 1) % 2`.
pub fn standard_channel(kind: StandardChannel, k: usize) -> Result<Channel> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("alphabet size must be at least 2, got {k}")));
    }
    let w = match kind {
        StandardChannel::Identity => DMatrix::identity(k, k),
        StandardChannel::Constant => {
            DMatrix::from_element(CONSTANT_CHANNEL_OUTPUTS, k, 1.0 / CONSTANT_CHANNEL_OUTPUTS as f64)
        }
        StandardChannel::Parity => {
            if !k.is_multiple_of(2) {
                return Err(Error::InvalidParameter(format!("parity channel needs even k, got {k}")));
            }
            DMatrix::from_fn(2, k, |y, x| if (x + 1) % 2 == y { 1.0 } else { 0.0 })
        }
        StandardChannel::Quantizer { bits } => {
            if bits == 0 || bits > 24 {
                return Err(Error::InvalidParameter(format!("quantizer bits must be in 1..=24, got {bits}")));
            }
            let m = 1usize << bits;
            DMatrix::from_fn(m, k, |y, x| if x * m / k == y { 1.0 } else { 0.0 })
        }
        StandardChannel::RandomizedResponse { rho } => {
            if !(rho.is_finite() && rho >= 0.0) {
                return Err(Error::InvalidParameter(format!("privacy level must be nonnegative, got {rho}")));
            }
            let e = rho.exp();
            let denom = e + (k as f64 - 1.0);
            DMatrix::from_fn(k, k, |y, x| if y == x { e / denom } else { 1.0 / denom })
        }
    };
    Channel::new(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdpCheck {
    pub passes: bool,
    /// `max_{y,x1,x2} W(y|x1)/W(y|x2)`, with `0/0 = 1` and `a/0 = inf`.
    pub worst_ratio: f64,
}

/// Relative slack allowed on the `e^rho` comparison.
const LDP_RATIO_SLACK: f64 = 1e-12;

pub fn check_ldp(w: &Channel, rho: f64) -> LdpCheck {
    let mut worst: f64 = 1.0;
    for row in w.matrix().row_iter() {
        let max = row.max();
        let min = row.min();
        let ratio = if max == 0.0 {
            1.0
        } else if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        };
        worst = worst.max(ratio);
    }
    LdpCheck { passes: worst <= rho.exp() * (1.0 + LDP_RATIO_SLACK), worst_ratio: worst }
}

/// Number of outputs that some input can reach.
pub fn reachable_outputs(w: &Channel) -> usize {
    w.matrix().row_iter().filter(|r| r.iter().any(|&v| v > 0.0)).count()
}

pub fn check_comm(w: &Channel, bits: u32) -> bool {
    match 1usize.checked_shl(bits) {
        Some(limit) if bits < usize::BITS => reachable_outputs(w) <= limit,
        _ => true,
    }
}

/// Random `m x k` stochastic matrix.
///
/// Each column is drawn either as a point mass (probability 1/4, which
/// keeps deterministic channels in the sample) or as normalized
/// exponential weights.
pub fn random_channel<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Result<Channel> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidParameter(format!("empty alphabet (k={k}, m={m})")));
    }
    let mut w = DMatrix::zeros(m, k);
    for x in 0..k {
        if rng.random_bool(0.25) {
            w[(rng.random_range(0..m), x)] = 1.0;
        } else {
            let weights: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = weights.iter().sum();
            for (y, v) in weights.into_iter().enumerate() {
                w[(y, x)] = v / total;
            }
        }
    }
    Channel::new(w)
}

/// Random channel in the `bits`-bit communication family (`m = 2^bits`).
pub fn random_comm_channel<R: Rng + ?Sized>(k: usize, bits: u32, rng: &mut R) -> Result<Channel> {
    if bits == 0 || bits > 16 {
        return Err(Error::InvalidParameter(format!("bits must be in 1..=16, got {bits}")));
    }
    random_channel(k, 1 << bits, rng)
}

/// Random `rho`-LDP channel with `m` outputs.
///
/// Starts from an arbitrary stochastic matrix and alternates two steps: each
/// output row is clipped into the band `[min, min * e^rho]` and the columns
/// are renormalized. Column renormalization can reopen a small violation,
/// so whatever remains after the alternation is removed by blending with
/// the uniform channel (the blend weight is found by bisection).
pub fn random_ldp_channel<R: Rng + ?Sized>(k: usize, m: usize, rho: f64, rng: &mut R) -> Result<Channel> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("privacy level must be positive, got {rho}")));
    }
    if k == 0 || m == 0 {
        return Err(Error::InvalidParameter(format!("empty alphabet (k={k}, m={m})")));
    }
    let band = rho.exp();
    let mut w = DMatrix::from_fn(m, k, |_, _| 0.05 + rng.random::<f64>());
    normalize_columns(&mut w);
    for _ in 0..64 {
        for mut row in w.row_iter_mut() {
            let floor = row.min();
            // A random cap inside the band keeps the sample from always
            // saturating the privacy constraint.
            let cap = floor * (1.0 + (band - 1.0) * rng.random_range(0.5..=1.0));
            row.iter_mut().for_each(|v| *v = v.min(cap));
        }
        normalize_columns(&mut w);
        if check_ldp(&Channel::new(w.clone())?, rho).passes {
            return Channel::new(w);
        }
    }
    let uniform = DMatrix::from_element(m, k, 1.0 / m as f64);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let candidate = &w * mid + &uniform * (1.0 - mid);
        if check_ldp(&Channel::new(candidate)?, rho).passes {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Channel::new(&w * lo + &uniform * (1.0 - lo))
}

fn normalize_columns(w: &mut DMatrix<f64>) {
    for mut col in w.column_iter_mut() {
        let total = col.sum();
        col.iter_mut().for_each(|v| *v /= total);
    }
}
