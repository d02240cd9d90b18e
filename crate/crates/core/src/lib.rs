//! Executable chi-square contraction bounds for distribution learning and
//! testing under local information constraints.
//!
//! The crate is organized bottom-up:
//!
//! - [`prob`]: distributions, channels, divergences, product laws
//! - [`channels`]: reference channels, the communication and LDP families
//! - [`perturbation`]: perturbed families around a nominal distribution
//! - [`contraction`]: the `H(W)` matrix and its norms
//! - [`fluctuation`]: chi-square and decoupled chi-square fluctuations,
//!   the exact mixture chi-square, and brute-force oracles
//! - [`adversary`]: the bottom-eigenspace perturbation that fools a fixed
//!   channel sequence
//! - [`bounds`]: sample-complexity lower bounds and Fano helpers
//! - [`sim`]: simultaneous-message-passing protocol simulation
//! - [`io`]: JSON file formats
//! - [`cli`] / [`verify`]: the `chi-contract` command line

#![forbid(unsafe_code)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        let tol: f64 = $tol;
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }};
}

pub mod adversary;
pub mod bounds;
pub mod channels;
pub mod cli;
pub mod contraction;
pub mod error;
pub mod fluctuation;
pub mod io;
pub mod perturbation;
pub mod prob;
mod rademacher;
pub mod rng;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use prob::{Channel, Distribution};
