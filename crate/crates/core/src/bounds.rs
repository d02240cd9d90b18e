//! Order-level sample-complexity lower bounds.
//!
//! Every value is the bound's expression evaluated with constant 1; the
//! universal constants hidden in the orders are not folded in.

use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluctuation::{chi2_fluctuation, induced_chi2_fluctuation};
use crate::perturbation::PerturbedFamily;
use crate::prob::Channel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Learning,
    TestingPublic,
    TestingPrivate,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Learning, Task::TestingPublic, Task::TestingPrivate];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Learning => "learning",
            Task::TestingPublic => "testing_public",
            Task::TestingPrivate => "testing_private",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub task: Task,
    /// `comm(l=..)`, `ldp(rho=..)`, or `norms`.
    pub constraint: String,
    pub k: usize,
    pub eps: f64,
    pub sup_nuclear: f64,
    pub sup_frobenius: f64,
    pub value: f64,
    pub formula: String,
    pub caveats: Vec<String>,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "task,constraint,k,eps,value,formula";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},\"{}\"",
            self.task,
            self.constraint,
            self.k,
            self.eps,
            self.value,
            self.formula.replace('"', "\"\"")
        )
    }
}

/// Bound in terms of the suprema of `||H(W)||_*` and `||H(W)||_F` over the
/// admissible channels.
pub fn lb_general(task: Task, k: usize, eps: f64, sup_nuclear: f64, sup_frobenius: f64) -> Result<BoundReport> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("k must be even and at least 2, got {k}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
    }
    for (name, s) in [("nuclear", sup_nuclear), ("frobenius", sup_frobenius)] {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} supremum must be positive, got {s}")));
        }
    }
    let kf = k as f64;
    let e2 = eps * eps;
    let (value, formula) = match task {
        Task::Learning => (kf / e2 * (kf / sup_nuclear), "(k/eps^2) * (k / sup ||H||_*)"),
        Task::TestingPublic => (kf.sqrt() / e2 * (kf.sqrt() / sup_frobenius), "(sqrt(k)/eps^2) * (sqrt(k) / sup ||H||_F)"),
        Task::TestingPrivate => (kf.sqrt() / e2 * (kf / sup_nuclear), "(sqrt(k)/eps^2) * (k / sup ||H||_*)"),
    };
    Ok(BoundReport {
        task,
        constraint: "norms".into(),
        k,
        eps,
        sup_nuclear,
        sup_frobenius,
        value,
        formula: format!("{formula}; order-level, constant 1"),
        caveats: Vec::new(),
    })
}

/// Norm suprema of the `l`-bit channels, as used in the table: `min(2^l, k)`
/// for the nuclear norm and its square root for the Frobenius norm.
pub fn comm_suprema(k: usize, bits: u32) -> (f64, f64) {
    let nuclear = if bits >= 64 { k as f64 } else { ((1u128 << bits) as f64).min(k as f64) };
    (nuclear, nuclear.sqrt())
}

/// Norm suprema of the `rho`-LDP channels: `(e^rho - 1)^2 / 2` for both.
pub fn ldp_suprema(rho: f64) -> (f64, f64) {
    let s = rho.exp_m1().powi(2) / 2.0;
    (s, s)
}

/// The three cells of each requested row: communication-limited when
/// `bits` is given, locally private when `rho` is given.
pub fn lb_table(k: usize, eps: f64, bits: Option<u32>, rho: Option<f64>) -> Result<Vec<BoundReport>> {
    if bits.is_none() && rho.is_none() {
        return Err(Error::InvalidParameter("give bits, rho, or both".into()));
    }
    let mut out = Vec::new();
    if let Some(l) = bits {
        if l == 0 {
            return Err(Error::InvalidParameter("bits must be at least 1".into()));
        }
        let (nuc, fro) = comm_suprema(k, l);
        let mut caveats = Vec::new();
        if nuc >= k as f64 {
            caveats.push(format!("2^{l} >= k: constraint vacuous, centralized order"));
        }
        for task in Task::ALL {
            let mut r = lb_general(task, k, eps, nuc, fro)?;
            r.constraint = format!("comm(l={l})");
            r.formula = match task {
                Task::Learning => "k^2 / (eps^2 2^l)",
                Task::TestingPublic => "k / (eps^2 2^(l/2))",
                Task::TestingPrivate => "k^(3/2) / (eps^2 2^l)",
            }
            .to_string()
                + "; 2^l capped at k; order-level, constant 1";
            r.caveats = caveats.clone();
            out.push(r);
        }
    }
    if let Some(rho) = rho {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        let (nuc, fro) = ldp_suprema(rho);
        let caveats = if rho > 1.0 { vec!["rho > 1: outside the small-rho regime".to_string()] } else { Vec::new() };
        for task in Task::ALL {
            let mut r = lb_general(task, k, eps, nuc, fro)?;
            r.constraint = format!("ldp(rho={rho})");
            r.formula = match task {
                Task::Learning => "k^2 / (eps^2 (e^rho-1)^2/2)",
                Task::TestingPublic => "k / (eps^2 (e^rho-1)^2/2)",
                Task::TestingPrivate => "k^(3/2) / (eps^2 (e^rho-1)^2/2)",
            }
            .to_string()
                + "; order-level, constant 1";
            r.caveats = caveats.clone();
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanoBound {
    /// `(log2|P| - log2 C_eps) / fluctuation`; infinite when the fluctuation is 0.
    pub value: f64,
    pub fluctuation: f64,
    pub log2_family: f64,
    pub log2_packing: f64,
}

/// Fano-type learning bound for a family with `|P| = 2^r` members and
/// packing count `C_eps = 2^log2_packing`.
///
/// The denominator is the chi-square fluctuation, or with channels the
/// largest induced chi-square fluctuation among them.
pub fn fano_learning_bound(f: &PerturbedFamily, channels: Option<&[Channel]>, log2_packing: f64) -> Result<FanoBound> {
    if !(log2_packing.is_finite() && log2_packing >= 0.0) {
        return Err(Error::InvalidParameter(format!("packing count must be at least 1, got 2^{log2_packing}")));
    }
    let log2_family = f.law().sign_count() as f64;
    if log2_family <= log2_packing {
        return Err(Error::InvalidParameter(format!(
            "log2|P| = {log2_family} does not exceed log2 C_eps = {log2_packing}"
        )));
    }
    let fluctuation = match channels {
        None => chi2_fluctuation(f)?.value,
        Some([]) => return Err(Error::InvalidParameter("empty channel set".into())),
        Some(chans) => chans
            .iter()
            .map(|w| induced_chi2_fluctuation(w, f).map(|r| r.value))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max),
    };
    let numerator = log2_family - log2_packing;
    let value = if fluctuation > 0.0 { numerator / fluctuation } else { f64::INFINITY };
    Ok(FanoBound { value, fluctuation, log2_family, log2_packing })
}

/// `log2 sum_{j <= t} C(m, j)`, the log-size of a Hamming ball.
pub fn hamming_ball_log2(m: u64, t: u64) -> Result<f64> {
    if t > m {
        return Err(Error::InvalidParameter(format!("radius {t} exceeds dimension {m}")));
    }
    let mut term = BigUint::from(1u32);
    let mut total = term.clone();
    for j in 1..=t {
        term = term * BigUint::from(m - j + 1) / BigUint::from(j);
        total += &term;
    }
    Ok(log2_big(&total))
}

fn log2_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    let shift = bits.saturating_sub(53);
    let mantissa: u64 = (x >> shift).try_into().expect("fits in 53 bits");
    (mantissa as f64).log2() + shift as f64
}

/// Binary entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("binary entropy needs x in [0, 1], got {x}")));
    }
    let term = |p: f64| if p == 0.0 { 0.0 } else { -p * p.log2() };
    Ok(term(x) + term(1.0 - x))
}
