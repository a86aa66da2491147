use serde::Serialize;
use spectrascope::blocks::{ClassArray, CrossClassArray, WeightScheme};
use spectrascope::dense;
use spectrascope::mlp;
use spectrascope::svg::Plot;
use spectrascope::Matrix;

use crate::args::{DecomposeArgs, Quantity};
use crate::commands::{ranked, top_values, trace};
use crate::error::{config, CliError};
use crate::output::Output;
use crate::source::{self, Source};

#[derive(Debug, Serialize)]
struct Part {
    name: &'static str,
    frobenius: f64,
    trace: f64,
    /// `trace / trace(total)`.
    trace_share: f64,
    top: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Report {
    quantity: &'static str,
    layer: Option<usize>,
    reconstruction_error: f64,
    parts: Vec<Part>,
}

const COLORS: [&str; 5] = ["black", "royalblue", "darkorange", "seagreen", "crimson"];

fn features(arr: &ClassArray) -> Result<(Vec<(&'static str, Matrix)>, f64), CliError> {
    let s = arr.class_moment_split()?;
    let err = dense::rel_frobenius_diff(&s.total, &(&s.class + &s.within));
    Ok((vec![("total", s.total), ("class", s.class), ("within", s.within)], err))
}

fn weighted(arr: &CrossClassArray, w: &WeightScheme) -> Result<(Vec<(&'static str, Matrix)>, f64), CliError> {
    let d = arr.weighted_decompose(w)?;
    let err = d.reconstruction_error();
    Ok((
        vec![
            ("total", d.total),
            ("class", d.class),
            ("cross", d.cross),
            ("within", d.within),
            ("diag_cc", d.diag_cc),
        ],
        err,
    ))
}

pub fn run(a: &DecomposeArgs, seed: u64, out: &Output) -> Result<(), CliError> {
    let src = source::load(&a.source, seed)?;
    let layer = a.source.layer;
    let (quantity, (parts, reconstruction_error)) = match &src {
        Source::Matrix(_) => return config("decompose needs a dataset or a network, not --matrix"),
        Source::Data(d) => {
            if !matches!(a.source.quantity, None | Some(Quantity::H)) || !matches!(layer, None | Some(0)) {
                return config("a dataset without --mlp only supports --quantity H at layer 0");
            }
            ("H", features(d)?)
        }
        Source::Model { net, data } => {
            let an = mlp::analyze(net, data)?;
            match a.source.quantity.unwrap_or(Quantity::G) {
                Quantity::G => ("G", weighted(&an.gradients(source::scope(layer))?, an.weights())?),
                q @ Quantity::H => {
                    let l = source::require_layer(q, layer)?;
                    if l > an.layers() {
                        return config(format!("feature layer {l} outside 0..={}", an.layers()));
                    }
                    ("H", features(an.features(l))?)
                }
                q @ Quantity::Delta => {
                    let l = source::require_layer(q, layer)?;
                    if l == 0 || l > an.layers() {
                        return config(format!("layer {l} outside 1..={}", an.layers()));
                    }
                    ("Delta", weighted(an.errors(l), an.weights())?)
                }
                other => return config(format!("no decomposition is defined for --quantity {other:?}")),
            }
        }
    };
    let total_trace = trace(&parts[0].1);
    let parts: Vec<Part> = parts
        .iter()
        .map(|(name, m)| -> Result<Part, CliError> {
            let tr = trace(m);
            Ok(Part {
                name,
                frobenius: dense::frobenius(m),
                trace: tr,
                trace_share: if total_trace != 0.0 { tr / total_trace } else { 0.0 },
                top: top_values(m, a.top)?,
            })
        })
        .collect::<Result<_, _>>()?;

    let rows: Vec<_> = parts.iter().flat_map(|p| ranked(p.name, &p.top)).collect();
    out.csv("decompose", &Output::csv_rows(&rows)?)?;
    let mut plot = Plot::new(&format!("Top eigenvalues of the parts of {quantity}"), "rank", "eigenvalue").log_y(true);
    for (p, color) in parts.iter().zip(COLORS) {
        let pts = p
            .top
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, &v)| ((i + 1) as f64, v))
            .collect();
        plot = plot.points(pts, color);
    }
    out.svg("decompose", &plot.render())?;
    out.json(
        "decompose",
        &Report {
            quantity,
            layer,
            reconstruction_error,
            parts,
        },
    )
}
