use serde::Serialize;
use spectrascope::blocks::{ClassArray, CrossClassArray, WeightScheme};
use spectrascope::knockout::{attribution_scatter, KnockoutKind, KnockoutSpec};
use spectrascope::mlp::{self, Analysis, Mlp};
use spectrascope::{dense, Matrix};

use crate::args::{AttributeArgs, KnockoutArg, Quantity};
use crate::error::{config, CliError};
use crate::output::Output;
use crate::source::{self, Source};

const DEFAULT_TOP_K: usize = 750;
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Serialize)]
struct Report<'a> {
    quantity: Option<&'a str>,
    layer: Option<usize>,
    parts: &'a [String],
    knockout: KnockoutKind,
    top_k: usize,
    classes: usize,
    /// Largest of the top `classes` eigenvalues after the knockout.
    top_after_max: Option<f64>,
    /// Eigenvalue `classes + 1` before the knockout.
    reference_before: Option<f64>,
    /// `top_after_max / reference_before`; interlacing bounds it below by 1
    /// for projection knockouts of rank `classes` on PSD inputs.
    after_over_reference: Option<f64>,
}

fn outer(v: &[f64], scale: f64) -> Matrix {
    let mut m = Matrix::zeros(v.len(), v.len());
    dense::add_outer(&mut m, scale, v);
    m
}

/// `(sum w) m m^T` for the weighted global mean `m`.
fn weighted_global_mean(arr: &CrossClassArray, w: &WeightScheme) -> Matrix {
    let total = w.total();
    let mut m = vec![0.0; arr.dim()];
    for i in 0..arr.n() {
        for c in 0..arr.classes() {
            for cp in 0..arr.classes() {
                dense::axpy(w.get(i, c, cp) / total, arr.get(i, c, cp), &mut m);
            }
        }
    }
    outer(&m, total)
}

fn feature_parts(arr: &ClassArray, parts: &[String]) -> Result<(Matrix, Matrix), CliError> {
    let split = arr.class_moment_split()?;
    let mut target = Matrix::zeros(arr.dim(), arr.dim());
    for p in parts {
        target += match p.as_str() {
            "class" => split.class.clone(),
            "within" => split.within.clone(),
            "global_mean" => outer(&arr.global_mean(), 1.0),
            other => return config(format!("unknown part {other:?} for H; expected class, within or global_mean")),
        };
    }
    Ok((split.total, target))
}

fn weighted_parts(arr: &CrossClassArray, w: &WeightScheme, parts: &[String]) -> Result<(Matrix, Matrix), CliError> {
    let dec = arr.weighted_decompose(w)?;
    let mut target = Matrix::zeros(arr.dim(), arr.dim());
    for p in parts {
        target += match p.as_str() {
            "global_mean" => weighted_global_mean(arr, w),
            name => match dec.part(name) {
                Some(m) if name != "total" => m.clone(),
                _ => {
                    return config(format!(
                        "unknown part {name:?}; expected class, cross, within, diag_cc or global_mean"
                    ))
                }
            },
        };
    }
    Ok((dec.total, target))
}

fn model_parts(
    net: &Mlp,
    an: &Analysis,
    a: &AttributeArgs,
    q: Quantity,
) -> Result<(Matrix, Matrix), CliError> {
    let layer = a.source.layer;
    match q {
        Quantity::H => {
            let l = source::require_layer(q, layer)?;
            if l > an.layers() {
                return config(format!("feature layer {l} outside 0..={}", an.layers()));
            }
            feature_parts(an.features(l), &a.part)
        }
        Quantity::Delta => {
            let l = source::require_layer(q, layer)?;
            if l == 0 || l > an.layers() {
                return config(format!("layer {l} outside 1..={}", an.layers()));
            }
            weighted_parts(an.errors(l), an.weights(), &a.part)
        }
        Quantity::G => weighted_parts(&an.gradients(source::scope(layer))?, an.weights(), &a.part),
        Quantity::W => {
            let l = source::require_layer(q, layer)?;
            if l == 0 || l > net.layers() {
                return config(format!("layer {l} outside 1..={}", net.layers()));
            }
            if a.part.iter().any(|p| p != "class") {
                return config("W only has a class part");
            }
            Ok((net.weight(l).clone(), an.weight_class_component(l, a.weight_decay)?))
        }
        other => config(format!("no decomposition is defined for --quantity {other:?}")),
    }
}

pub fn run(a: &AttributeArgs, seed: u64, out: &Output) -> Result<(), CliError> {
    let src = source::load(&a.source, seed)?;
    let mut quantity = None;
    let (matrix, target, default_c) = match &src {
        Source::Matrix(m) => {
            let Some(path) = &a.target else {
                return config("a --matrix input needs --target with the matrix to knock out");
            };
            (m.clone(), dense::load_matrix(path)?, 0)
        }
        Source::Data(d) => {
            if a.target.is_some() {
                return config("--target applies to --matrix inputs only");
            }
            let (m, t) = feature_parts(d, &a.part)?;
            quantity = Some("H");
            (m, t, d.classes())
        }
        Source::Model { net, data } => {
            if a.target.is_some() {
                return config("--target applies to --matrix inputs only");
            }
            let an = mlp::analyze(net, data)?;
            let q = a.source.quantity.unwrap_or(Quantity::G);
            let (m, t) = model_parts(net, &an, a, q)?;
            quantity = Some(match q {
                Quantity::G => "G",
                Quantity::H => "H",
                Quantity::Delta => "Delta",
                _ => "W",
            });
            (m, t, data.classes())
        }
    };
    let spec = match a.knockout {
        KnockoutArg::Project => KnockoutSpec::project(target),
        KnockoutArg::Subtract => KnockoutSpec::subtract(target),
    };
    let dim = matrix.nrows().min(matrix.ncols());
    let top_k = a.top_k.unwrap_or(dim.min(DEFAULT_TOP_K));
    let c = a.classes.unwrap_or(default_c);
    if c > top_k {
        return config(format!("--classes {c} exceeds --top-k {top_k}"));
    }
    let scatter = attribution_scatter(&matrix, &spec, top_k, c)?;

    let pts = &scatter.points;
    let top_after_max = (c > 0).then(|| pts[..c].iter().map(|p| p.after).fold(f64::NEG_INFINITY, f64::max));
    let reference_before = pts.get(c).filter(|_| c > 0).map(|p| p.before);
    let report = Report {
        quantity,
        layer: a.source.layer,
        parts: &a.part,
        knockout: spec.kind,
        top_k,
        classes: c,
        top_after_max,
        reference_before,
        after_over_reference: top_after_max.zip(reference_before).map(|(x, r)| x / r),
    };
    out.json("attribute", &report)?;
    out.csv("attribute", &scatter.to_csv_string()?)?;
    let plotted = if a.log { scatter.log_values(LOG_FLOOR) } else { scatter };
    out.svg("attribute", &plotted.to_svg("Spectrum before and after knockout"))
}
