use serde::Serialize;
use spectrascope::dense;
use spectrascope::lanczos::{
    self, estimate_spectrum, EigenvalueRule, SpectrumConfig, SpectrumEstimate,
};
use spectrascope::mlp::{self, GaussNewtonOperator};
use spectrascope::svg::Plot;
use spectrascope::{materialize, DenseSymOperator, LinearOperator};

use crate::args::{LanczosArgs, Quantity, SpectrumArgs};
use crate::error::{config, CliError};
use crate::output::Output;
use crate::source::{self, Source};

/// Largest dimension accepted by `--validate`.
pub const VALIDATE_LIMIT: usize = 2000;

pub fn config_from(a: &LanczosArgs, seed: u64) -> SpectrumConfig {
    let default_m = if a.log {
        lanczos::DEFAULT_LOG_M
    } else {
        lanczos::DEFAULT_M
    };
    SpectrumConfig {
        m: a.m.unwrap_or(default_m),
        m0: a.m0,
        k: a.k,
        n_vec: a.nvec,
        kappa: a.kappa,
        tau: a.tau,
        t: a.t,
        deflate: a.deflate,
        log: a.log,
        epsilon: a.epsilon,
        seed,
        rule: EigenvalueRule::RayleighRitz,
    }
}

#[derive(Debug, Serialize)]
struct CsvRow {
    t: f64,
    x: f64,
    density_normalized: f64,
    density: f64,
}

#[derive(Debug, Serialize)]
struct Validation {
    dim: usize,
    eigenvalue_min: f64,
    eigenvalue_max: f64,
    /// Largest gap between each reported outlier and the closest exact
    /// eigenvalue.
    outlier_max_abs_err: Option<f64>,
    /// `sum |phi_est - phi_exact| dt`, with `phi_exact` the exact eigenvalues
    /// (minus the deflated ones) smoothed by the same kernel. Linear mode only.
    smoothed_l1: Option<f64>,
}

fn validate(op: &dyn LinearOperator, est: &SpectrumEstimate) -> Result<Validation, CliError> {
    let dim = op.dim();
    if dim > VALIDATE_LIMIT {
        return config(format!("--validate needs dimension <= {VALIDATE_LIMIT}, got {dim}"));
    }
    let ev = dense::sym_eigvals(&materialize(op)?);
    let mut remaining = ev.clone();
    let mut worst: Option<f64> = None;
    for o in &est.outliers {
        let (idx, gap) = remaining
            .iter()
            .enumerate()
            .map(|(i, v)| (i, (v - o.value).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("fewer outliers than eigenvalues");
        remaining.remove(idx);
        worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
    }
    let smoothed_l1 = (!est.log_mode && !remaining.is_empty()).then(|| {
        let centers: Vec<f64> = remaining.iter().map(|v| (v - est.c) / est.d).collect();
        let w = 1.0 / centers.len() as f64;
        let dt = 2.0 / (est.k.max(2) - 1) as f64;
        est.grid
            .iter()
            .zip(&est.density)
            .map(|(&t, &phi)| {
                let exact: f64 = centers.iter().map(|&x| w * lanczos::gaussian(t - x, est.sigma)).sum();
                (phi - exact).abs() * dt
            })
            .sum()
    });
    Ok(Validation {
        dim,
        eigenvalue_min: ev[0],
        eigenvalue_max: ev[dim - 1],
        outlier_max_abs_err: worst,
        smoothed_l1,
    })
}

fn write_outputs(out: &Output, est: &SpectrumEstimate, linear_y: bool) -> Result<(), CliError> {
    out.json("spectrum", est)?;

    let xs = est.denormalized_grid();
    let dens = est.denormalized_density();
    let rows: Vec<CsvRow> = (0..est.grid.len())
        .map(|i| CsvRow {
            t: est.grid[i],
            x: xs[i],
            density_normalized: est.density[i],
            density: dens[i],
        })
        .collect();
    out.csv("spectrum", &Output::csv_rows(&rows)?)?;
    if !est.outliers.is_empty() {
        out.csv("spectrum_outliers", &Output::csv_rows(&est.outliers)?)?;
    }

    let x_label = if est.log_mode {
        "log(|eigenvalue| + epsilon)"
    } else {
        "eigenvalue"
    };
    let floor = dens.iter().copied().fold(0.0, f64::max) * 1e-12;
    let curve: Vec<(f64, f64)> = xs.iter().zip(&dens).map(|(&x, &y)| (x, y.max(floor))).collect();
    let rug: Vec<f64> = est
        .outliers
        .iter()
        .map(|o| match est.epsilon {
            Some(eps) if est.log_mode => (o.value.abs() + eps).ln(),
            _ => o.value,
        })
        .collect();
    let svg = Plot::new("Spectral density", x_label, "density")
        .log_y(!linear_y)
        .step(curve, "steelblue")
        .rug(rug, "crimson")
        .render();
    out.svg("spectrum", &svg)
}

pub fn run(a: &SpectrumArgs, seed: u64, out: &Output) -> Result<(), CliError> {
    let cfg = config_from(&a.lanczos, seed);
    let src = source::load(&a.source, seed)?;
    let analysis;
    let gn: GaussNewtonOperator<'_>;
    let dense_op: DenseSymOperator;
    let op: &dyn LinearOperator = match &src {
        Source::Matrix(m) => {
            if a.source.quantity.is_some() {
                return config("--quantity applies to --mlp/--data inputs only");
            }
            dense_op = DenseSymOperator::symmetrized(m.clone())?;
            &dense_op
        }
        Source::Data(d) => {
            match (a.source.quantity, a.source.layer) {
                (None | Some(Quantity::H), None | Some(0)) => {}
                _ => return config("a dataset without --mlp only supports --quantity H at layer 0"),
            }
            dense_op = DenseSymOperator::symmetrized(d.second_moment()?)?;
            &dense_op
        }
        Source::Model { net, data } => {
            analysis = mlp::analyze(net, data)?;
            match a.source.quantity.unwrap_or(Quantity::G) {
                Quantity::G => {
                    gn = analysis.g_operator(source::scope(a.source.layer))?;
                    &gn
                }
                q => {
                    let m = source::model_matrix(net, data, &analysis, q, a.source.layer)?;
                    dense_op = DenseSymOperator::symmetrized(m)?;
                    &dense_op
                }
            }
        }
    };
    let est = estimate_spectrum(op, &cfg)?;
    write_outputs(out, &est, a.linear_y)?;
    if a.validate {
        out.json("spectrum_validation", &validate(op, &est)?)?;
    }
    Ok(())
}
