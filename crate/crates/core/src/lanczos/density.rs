//! Smoothed spectral density estimates from Lanczos quadrature.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::linop::{deflate, shift_scale, LinearOperator};
use crate::par;

use super::normalize::{range_from_start, NormalizationParams, NORMALIZATION_STREAM};
use super::recurrence::{fast_lanczos_from, start_vector};
use super::subspace::{subspace_iteration, EigenPair, EigenvalueRule};
use super::tridiag::TridiagResult;

pub const DEFAULT_M0: usize = 32;
pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_K: usize = 1024;
pub const DEFAULT_NVEC: usize = 1;
pub const DEFAULT_KAPPA: f64 = 3.0;
pub const DEFAULT_M: usize = 128;
pub const DEFAULT_LOG_M: usize = 2048;
pub const DEFAULT_T: usize = 128;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub value: f64,
    pub residual: f64,
}

/// Density on a grid over `[-1, 1]`. In linear mode the grid maps back to
/// eigenvalues through `lambda = d t + c`; in log mode it maps to
/// `log(|lambda| + epsilon)` the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub sigma: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_vec: usize,
    pub kappa: f64,
    pub seed: u64,
    pub c: f64,
    pub d: f64,
    pub log_mode: bool,
    pub epsilon: Option<f64>,
    pub outliers: Vec<Outlier>,
}

impl SpectrumEstimate {
    /// Grid in original units.
    pub fn denormalized_grid(&self) -> Vec<f64> {
        self.grid.iter().map(|t| self.d * t + self.c).collect()
    }

    /// Density with respect to the original units.
    pub fn denormalized_density(&self) -> Vec<f64> {
        self.density.iter().map(|p| p / self.d).collect()
    }

    /// Riemann mass `sum_k phi_k * dt`.
    pub fn mass(&self) -> f64 {
        if self.k < 2 {
            return self.density.iter().sum();
        }
        let dt = 2.0 / (self.k - 1) as f64;
        self.density.iter().sum::<f64>() * dt
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Gaussian smoothing width for `m` Lanczos steps and sharpness `kappa`.
pub fn sigma(m: usize, kappa: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::invalid(format!("M must be at least 2, got {m}")));
    }
    if !(kappa > 1.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must exceed 1, got {kappa}")));
    }
    Ok(2.0 / ((m - 1) as f64 * (8.0 * kappa.ln()).sqrt()))
}

/// `linspace(-1, 1, k)`.
pub fn grid(k: usize) -> Result<Vec<f64>> {
    match k {
        0 => Err(Error::invalid("K must be positive")),
        1 => Ok(vec![0.0]),
        _ => {
            let step = 2.0 / (k - 1) as f64;
            Ok((0..k)
                .map(|i| if i == k - 1 { 1.0 } else { -1.0 + step * i as f64 })
                .collect())
        }
    }
}

/// Unit-mass Gaussian density.
pub fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// `sum_m w_m g_sigma(t - center_m)` at every grid point.
fn bumps(grid: &[f64], centers: &[f64], weights: &[f64], sigma: f64) -> Vec<f64> {
    grid.iter()
        .map(|&t| {
            centers
                .iter()
                .zip(weights)
                .map(|(c, w)| w * gaussian(t - c, sigma))
                .sum()
        })
        .collect()
}

/// Runs one Lanczos probe per start vector `start_vector(p, seed, l)`.
pub fn probes<A: LinearOperator + ?Sized>(
    op: &A,
    m: usize,
    n_vec: usize,
    seed: u64,
) -> Result<Vec<TridiagResult>> {
    probes_in_complement(op, m, n_vec, seed, None)
}

/// Like [`probes`], with every start vector projected onto the orthogonal
/// complement of `exclude` (orthonormal columns) before normalization.
pub fn probes_in_complement<A: LinearOperator + ?Sized>(
    op: &A,
    m: usize,
    n_vec: usize,
    seed: u64,
    exclude: Option<&Matrix>,
) -> Result<Vec<TridiagResult>> {
    if n_vec == 0 {
        return Err(Error::invalid("n_vec must be positive"));
    }
    let p = op.dim();
    par::map_indexed(n_vec, |l| {
        let v0 = complement_start(p, seed, l as u64, exclude);
        fast_lanczos_from(op, &v0, m)
    })
    .into_iter()
    .collect()
}

pub(crate) fn complement_start(p: usize, seed: u64, stream: u64, exclude: Option<&Matrix>) -> Vec<f64> {
    let mut v = start_vector(p, seed, stream);
    if let Some(basis) = exclude {
        for _ in 0..2 {
            for col in basis.column_iter() {
                let c = col.as_slice();
                let coef = crate::dense::dot(c, &v);
                crate::dense::axpy(-coef, c, &mut v);
            }
        }
        let n = crate::dense::norm2(&v);
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn average<F>(k: usize, runs: &[TridiagResult], per_probe: F) -> Vec<f64>
where
    F: Fn(&TridiagResult) -> Vec<f64> + Sync + Send,
{
    let parts = par::map_indexed(runs.len(), |l| per_probe(&runs[l]));
    let mut phi = vec![0.0; k];
    for part in parts {
        for (a, b) in phi.iter_mut().zip(part) {
            *a += b;
        }
    }
    let n = runs.len() as f64;
    phi.iter_mut().for_each(|x| *x /= n);
    phi
}

/// Density estimate of an operator whose spectrum is already inside `[-1, 1]`.
pub fn lanczos_approx_spec<A: LinearOperator + ?Sized>(
    op: &A,
    m: usize,
    k: usize,
    n_vec: usize,
    kappa: f64,
    seed: u64,
) -> Result<SpectrumEstimate> {
    approx_spec_excluding(op, m, k, n_vec, kappa, seed, None)
}

fn approx_spec_excluding<A: LinearOperator + ?Sized>(
    op: &A,
    m: usize,
    k: usize,
    n_vec: usize,
    kappa: f64,
    seed: u64,
    exclude: Option<&Matrix>,
) -> Result<SpectrumEstimate> {
    let sigma = sigma(m, kappa)?;
    let grid = grid(k)?;
    let runs = probes_in_complement(op, m, n_vec, seed, exclude)?;
    let density = average(k, &runs, |r| bumps(&grid, &r.ritz_values, &r.weights(), sigma));
    Ok(SpectrumEstimate {
        grid,
        density,
        sigma,
        m,
        k,
        n_vec,
        kappa,
        seed,
        c: 0.0,
        d: 1.0,
        log_mode: false,
        epsilon: None,
        outliers: Vec::new(),
    })
}

/// Log-range of `log(|lambda| + eps)` over `[lo, hi]`, before the margin.
fn log_range(lo: f64, hi: f64, eps: f64) -> (f64, f64) {
    let (a, b) = (lo.abs(), hi.abs());
    let top = (a.max(b) + eps).ln();
    if lo <= 0.0 && hi >= 0.0 {
        (eps.ln(), top)
    } else {
        ((a.min(b) + eps).ln(), top)
    }
}

/// Density of `log(|lambda| + eps)` with every bump weighted by
/// `1 / (|lambda| + eps)`. The operator need not be normalized; its linear
/// range is estimated with the default `M0` and margin.
pub fn log_spec<A: LinearOperator + ?Sized>(
    op: &A,
    m: usize,
    k: usize,
    n_vec: usize,
    kappa: f64,
    eps: f64,
    seed: u64,
) -> Result<SpectrumEstimate> {
    log_spec_with(op, m, k, n_vec, kappa, eps, DEFAULT_M0, DEFAULT_TAU, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn log_spec_with<A: LinearOperator + ?Sized>(
    op: &A,
    m: usize,
    k: usize,
    n_vec: usize,
    kappa: f64,
    eps: f64,
    m0: usize,
    tau: f64,
    seed: u64,
) -> Result<SpectrumEstimate> {
    log_spec_excluding(op, m, k, n_vec, kappa, eps, m0, tau, seed, None)
}

#[allow(clippy::too_many_arguments)]
fn log_spec_excluding<A: LinearOperator + ?Sized>(
    op: &A,
    m: usize,
    k: usize,
    n_vec: usize,
    kappa: f64,
    eps: f64,
    m0: usize,
    tau: f64,
    seed: u64,
    exclude: Option<&Matrix>,
) -> Result<SpectrumEstimate> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    let sigma = sigma(m, kappa)?;
    let grid = grid(k)?;
    let lin = range_excluding(op, m0, tau, seed, exclude)?;
    let normalized = shift_scale(op, lin.c, lin.d)?;
    let (lo, hi) = log_range(lin.raw_min, lin.raw_max, eps);
    let logp = NormalizationParams::from_range(lo, hi, tau)?;
    let runs = probes_in_complement(&normalized, m, n_vec, seed, exclude)?;
    let density = average(k, &runs, |r| {
        let mut centers = Vec::with_capacity(r.len());
        let mut weights = Vec::with_capacity(r.len());
        for (theta, w) in r.ritz_values.iter().zip(r.weights()) {
            let a = lin.to_original(*theta).abs() + eps;
            centers.push(logp.to_normalized(a.ln()));
            weights.push(w / a);
        }
        bumps(&grid, &centers, &weights, sigma)
    });
    Ok(SpectrumEstimate {
        grid,
        density,
        sigma,
        m,
        k,
        n_vec,
        kappa,
        seed,
        c: logp.c,
        d: logp.d,
        log_mode: true,
        epsilon: Some(eps),
        outliers: Vec::new(),
    })
}

/// Every knob of the normalize / deflate / estimate pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    pub m: usize,
    pub m0: usize,
    pub k: usize,
    pub n_vec: usize,
    pub kappa: f64,
    pub tau: f64,
    pub t: usize,
    pub deflate: usize,
    pub log: bool,
    pub epsilon: f64,
    pub seed: u64,
    pub rule: EigenvalueRule,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            m: DEFAULT_M,
            m0: DEFAULT_M0,
            k: DEFAULT_K,
            n_vec: DEFAULT_NVEC,
            kappa: DEFAULT_KAPPA,
            tau: DEFAULT_TAU,
            t: DEFAULT_T,
            deflate: 0,
            log: false,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            rule: EigenvalueRule::RayleighRitz,
        }
    }
}

/// Optional rank-`deflate` deflation by subspace iteration, then
/// normalization and a linear or log density estimate. The deflated pairs are
/// reported as outliers. After deflation every start vector lies in the
/// orthogonal complement of the deflated subspace, so the density describes
/// the remaining `p - r` eigenvalues and has unit mass on its own.
pub fn estimate_spectrum<A: LinearOperator + ?Sized>(
    op: &A,
    cfg: &SpectrumConfig,
) -> Result<SpectrumEstimate> {
    if cfg.deflate == 0 {
        return estimate_plain(op, cfg, None);
    }
    let pairs = subspace_iteration(op, cfg.deflate, cfg.t, cfg.seed, cfg.rule)?;
    let basis: Vec<(f64, Vec<f64>)> = pairs.iter().map(|p| (p.value, p.vector.clone())).collect();
    let deflated = deflate(op, &basis)?;
    let mut est = estimate_plain(&deflated, cfg, Some(deflated.basis()))?;
    est.outliers = outliers(&pairs);
    Ok(est)
}

fn range_excluding<A: LinearOperator + ?Sized>(
    op: &A,
    m0: usize,
    tau: f64,
    seed: u64,
    exclude: Option<&Matrix>,
) -> Result<NormalizationParams> {
    let v0 = complement_start(op.dim(), seed, NORMALIZATION_STREAM, exclude);
    range_from_start(op, &v0, m0, tau)
}

fn outliers(pairs: &[EigenPair]) -> Vec<Outlier> {
    pairs
        .iter()
        .map(|p| Outlier {
            value: p.value,
            residual: p.residual,
        })
        .collect()
}

fn estimate_plain<A: LinearOperator + ?Sized>(
    op: &A,
    cfg: &SpectrumConfig,
    exclude: Option<&Matrix>,
) -> Result<SpectrumEstimate> {
    if cfg.log {
        return log_spec_excluding(
            op, cfg.m, cfg.k, cfg.n_vec, cfg.kappa, cfg.epsilon, cfg.m0, cfg.tau, cfg.seed, exclude,
        );
    }
    let params = range_excluding(op, cfg.m0, cfg.tau, cfg.seed, exclude)?;
    let normalized = shift_scale(op, params.c, params.d)?;
    let mut est = approx_spec_excluding(
        &normalized, cfg.m, cfg.k, cfg.n_vec, cfg.kappa, cfg.seed, exclude,
    )?;
    est.c = params.c;
    est.d = params.d;
    Ok(est)
}
