use serde::Serialize;
use spectrascope::ccm::{self, MisclassificationReport, TheoremSpectrum};
use spectrascope::dense;
use spectrascope::svg::Plot;

use crate::args::CcmVerifyArgs;
use crate::error::CliError;
use crate::output::Output;

#[derive(Debug, Serialize)]
struct Params {
    d: usize,
    c: usize,
    alpha: f64,
    s: f64,
}

#[derive(Debug, Serialize)]
struct MonteCarlo {
    draws_per_class: usize,
    /// `||F_mc - F||_F / ||F||_F`.
    frobenius_rel_err: f64,
}

#[derive(Debug, Serialize)]
struct Point {
    params: Params,
    closed_form: TheoremSpectrum,
    ratios: Option<MisclassificationReport>,
    max_abs_diff: f64,
    monte_carlo: Option<MonteCarlo>,
}

#[derive(Debug, Serialize)]
struct Report {
    points: Vec<Point>,
    max_abs_diff: f64,
    /// Dense eigenvalues, ascending; single-point runs only.
    dense_eig: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct Row {
    d: usize,
    c: usize,
    alpha: f64,
    s: f64,
    top: f64,
    mini: f64,
    bulk: f64,
    max_abs_diff: f64,
    monte_carlo_rel_err: Option<f64>,
}

pub fn run(a: &CcmVerifyArgs, seed: u64, out: &Output) -> Result<(), CliError> {
    let grid = if a.grid {
        ccm::verification_grid()
    } else {
        vec![(a.d, a.c, a.alpha, a.s)]
    };
    let mut points = Vec::with_capacity(grid.len());
    let mut last_eig = Vec::new();
    let mut closed_values = Vec::new();
    for &(d, c, alpha, s) in &grid {
        let closed_form = ccm::theorem_spectrum(d, c, alpha, s)?;
        let fim = ccm::expected_fim(d, c, alpha, s)?;
        let ev = dense::sym_eigvals(&fim);
        let values = closed_form.values();
        let max_abs_diff = values.iter().zip(&ev).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let monte_carlo = a
            .monte_carlo
            .map(|k| -> Result<MonteCarlo, CliError> {
                let mc = ccm::monte_carlo_fim(d, c, alpha, s, k, seed)?;
                Ok(MonteCarlo {
                    draws_per_class: k,
                    frobenius_rel_err: dense::rel_frobenius_diff(&mc, &fim),
                })
            })
            .transpose()?;
        points.push(Point {
            params: Params { d, c, alpha, s },
            closed_form,
            ratios: ccm::misclassification_ratio_report(d, c, alpha, s).ok(),
            max_abs_diff,
            monte_carlo,
        });
        last_eig = ev;
        closed_values = values;
    }
    let rows: Vec<Row> = points
        .iter()
        .map(|p| Row {
            d: p.params.d,
            c: p.params.c,
            alpha: p.params.alpha,
            s: p.params.s,
            top: p.closed_form.top.value,
            mini: p.closed_form.mini.value,
            bulk: p.closed_form.bulk.value,
            max_abs_diff: p.max_abs_diff,
            monte_carlo_rel_err: p.monte_carlo.as_ref().map(|m| m.frobenius_rel_err),
        })
        .collect();
    let report = Report {
        max_abs_diff: points.iter().map(|p| p.max_abs_diff).fold(0.0, f64::max),
        dense_eig: (!a.grid).then(|| last_eig.clone()),
        points,
    };
    out.json("ccm_verify", &report)?;
    out.csv("ccm_verify", &Output::csv_rows(&rows)?)?;
    if !a.grid {
        let ranked = |v: &[f64]| -> Vec<(f64, f64)> {
            v.iter().rev().enumerate().map(|(i, &x)| ((i + 1) as f64, x)).collect()
        };
        let svg = Plot::new("Fisher spectrum: closed form vs dense", "rank", "eigenvalue")
            .line(ranked(&closed_values), "black")
            .points(ranked(&last_eig), "royalblue")
            .render();
        out.svg("ccm_verify", &svg)?;
    }
    Ok(())
}
