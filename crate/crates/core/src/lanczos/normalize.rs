//! Range estimation and affine normalization of an operator to `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::dense::norm2;
use crate::error::{Error, Result};
use crate::linop::{shift_scale, AffineOperator, LinearOperator};

use super::recurrence::{fast_recurrence, lift_ritz_vectors, start_vector};
use super::tridiag::tridiag_eigh;

/// RNG stream reserved for the range-estimation start vector, disjoint from
/// the probe streams `0..n_vec`.
pub const NORMALIZATION_STREAM: u64 = 1 << 40;

const DEGENERATE_RANGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    /// Residual-corrected extreme Ritz values before the margin is added.
    pub raw_min: f64,
    pub raw_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub c: f64,
    pub d: f64,
}

impl NormalizationParams {
    /// Adds the margin `tau * (hi - lo)` on both sides and derives `c, d`.
    pub fn from_range(lo: f64, hi: f64, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("margin must be nonnegative, got {tau}")));
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Numeric("non-finite spectral range".into()));
        }
        if hi - lo < DEGENERATE_RANGE {
            return Err(Error::DegenerateSpectrum { lo, hi });
        }
        let delta = tau * (hi - lo);
        let lambda_min = lo - delta;
        let lambda_max = hi + delta;
        Ok(NormalizationParams {
            raw_min: lo,
            raw_max: hi,
            lambda_min,
            lambda_max,
            c: 0.5 * (lambda_min + lambda_max),
            d: 0.5 * (lambda_max - lambda_min),
        })
    }

    pub fn to_normalized(&self, lambda: f64) -> f64 {
        (lambda - self.c) / self.d
    }

    pub fn to_original(&self, t: f64) -> f64 {
        self.d * t + self.c
    }
}

/// Estimates the spectral range of `op` with `m0` Lanczos steps, widens it by
/// the margin `tau` and returns `(A - cI)/d`.
pub fn normalization<A: LinearOperator>(
    op: A,
    m0: usize,
    tau: f64,
    seed: u64,
) -> Result<(AffineOperator<A>, NormalizationParams)> {
    let params = estimate_range(&op, m0, tau, seed)?;
    let scaled = shift_scale(op, params.c, params.d)?;
    Ok((scaled, params))
}

/// The range estimate behind [`normalization`] without building the operator.
pub fn estimate_range<A: LinearOperator + ?Sized>(
    op: &A,
    m0: usize,
    tau: f64,
    seed: u64,
) -> Result<NormalizationParams> {
    let v0 = start_vector(op.dim(), seed, NORMALIZATION_STREAM);
    range_from_start(op, &v0, m0, tau)
}

/// [`estimate_range`] from an explicit start vector.
pub fn range_from_start<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    m0: usize,
    tau: f64,
) -> Result<NormalizationParams> {
    if m0 < 2 {
        return Err(Error::invalid(format!("M0 must be at least 2, got {m0}")));
    }
    let rec = fast_recurrence(op, v0, m0)?;
    let (theta, z) = tridiag_eigh(&rec.alphas, &rec.betas)?;
    let last = theta.len() - 1;
    let ys = vec![
        z.column(0).iter().copied().collect::<Vec<_>>(),
        z.column(last).iter().copied().collect::<Vec<_>>(),
    ];
    let lifted = lift_ritz_vectors(op, v0, &rec, &ys)?;
    let r_min = residual(op, &lifted[0], theta[0]);
    let r_max = residual(op, &lifted[1], theta[last]);
    NormalizationParams::from_range(theta[0] - r_min, theta[last] + r_max, tau)
}

/// `||(A - theta I) x||` for `x` rescaled to unit norm.
fn residual<A: LinearOperator + ?Sized>(op: &A, x: &[f64], theta: f64) -> f64 {
    let n = norm2(x);
    if n == 0.0 {
        return 0.0;
    }
    let x: Vec<f64> = x.iter().map(|v| v / n).collect();
    let ax = op.apply(&x);
    ax.iter()
        .zip(&x)
        .map(|(a, b)| (a - theta * b).powi(2))
        .sum::<f64>()
        .sqrt()
}
