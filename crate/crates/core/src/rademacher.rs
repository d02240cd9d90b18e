//! Exhaustive and sampled expectations over Rademacher sign vectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Largest sign-vector length enumerated exhaustively.
pub(crate) const MAX_EXHAUSTIVE_SIGNS: usize = 20;

/// Gray-code steps between exact recomputations of the running image.
const REFRESH_EVERY: u64 = 1 << 10;

/// `ln cosh(x)` without overflow or cancellation near zero.
pub(crate) fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        (2.0 * (a / 2.0).sinh().powi(2)).ln_1p()
    } else {
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }
}

/// Streaming `ln(mean(exp(x_i)))` with a running shift, plus the second
/// moment needed for a delta-method standard error.
#[derive(Debug, Clone)]
pub(crate) struct LogMeanExp {
    shift: f64,
    sum: f64,
    sum_sq: f64,
    count: u64,
}

impl LogMeanExp {
    pub(crate) fn new() -> Self {
        Self { shift: f64::NEG_INFINITY, sum: 0.0, sum_sq: 0.0, count: 0 }
    }

    pub(crate) fn push(&mut self, x: f64) {
        self.count += 1;
        if x > self.shift {
            let scale = (self.shift - x).exp();
            self.sum *= scale;
            self.sum_sq *= scale * scale;
            self.shift = x;
        }
        let e = (x - self.shift).exp();
        self.sum += e;
        self.sum_sq += e * e;
    }

    pub(crate) fn log_mean(&self) -> f64 {
        self.shift + (self.sum / self.count as f64).ln()
    }

    /// Standard error of [`Self::log_mean`] when the pushed values are
    /// i.i.d. samples.
    pub(crate) fn log_mean_stderr(&self) -> f64 {
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        (var / n).sqrt() / mean
    }
}

/// Calls `f(y, m * y)` for every `y` in `{-1, +1}^r`, where `m` is `d x r`.
///
/// With `half` set only vectors with `y[0] = +1` are visited; callers use it
/// when the summand is even in `y`, where the mean over the half cube equals
/// the mean over the full cube.
pub(crate) fn for_each_image(m: &DMatrix<f64>, half: bool, mut f: impl FnMut(&[f64], &[f64])) {
    let r = m.ncols();
    let mut y = vec![1.0; r];
    let exact = |y: &[f64]| m * DVector::from_column_slice(y);
    let mut image = exact(&y);
    f(&y, image.as_slice());
    let free = if half && r > 0 { r - 1 } else { r };
    let offset = r - free;
    let steps: u64 = 1u64 << free;
    for t in 1..steps {
        let bit = t.trailing_zeros() as usize + offset;
        y[bit] = -y[bit];
        if t % REFRESH_EVERY == 0 {
            image = exact(&y);
        } else {
            image.axpy(2.0 * y[bit], &m.column(bit), 1.0);
        }
        f(&y, image.as_slice());
    }
}

pub(crate) fn random_signs<R: Rng + ?Sized>(r: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(r, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
}
