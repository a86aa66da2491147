use serde::Serialize;
use spectrascope::blocks::ClassArray;
use spectrascope::mlp::{self, LayerSeparation, Mlp, TrainConfig};
use spectrascope::par;
use spectrascope::svg::Plot;

use crate::args::TrainArgs;
use crate::error::{config, CliError};
use crate::output::Output;
use crate::source;

#[derive(Debug, Serialize)]
struct MetricRow {
    epoch: usize,
    layer: usize,
    loss: f64,
    accuracy: f64,
    trace_class: f64,
    trace_within: f64,
    whisker_ratio: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    dims: Vec<usize>,
    config: TrainConfig,
    final_loss: f64,
    final_accuracy: f64,
    /// `tr(H_class) / tr(H_within)` per layer after the last epoch.
    separation: Vec<f64>,
    /// `pass` when the separation ratio never decreases with depth.
    separation_check: &'static str,
}

/// Features `h^1..h^L` of every example, as one class array per layer.
fn layer_features(net: &Mlp, data: &ClassArray) -> spectrascope::Result<Vec<ClassArray>> {
    let (n, c) = (data.n(), data.classes());
    let traces = par::map_indexed(n * c, |k| mlp::forward(net, data.get(k / c, k % c)));
    let traces: Vec<_> = traces.into_iter().collect::<Result<_, _>>()?;
    (1..=net.layers())
        .map(|l| {
            let flat: Vec<f64> = traces.iter().flat_map(|t| t.h(l).iter().copied()).collect();
            ClassArray::new(n, c, net.dims()[l], flat)
        })
        .collect()
}

fn ratio(s: &LayerSeparation) -> f64 {
    s.trace_class / s.trace_within
}

pub fn run(a: &TrainArgs, seed: u64, out: &Output) -> Result<(), CliError> {
    let (net, data) = source::model(&a.source, &a.net.widths, seed)?;
    if a.source.quantity.is_some() || a.source.layer.is_some() {
        return config("train does not take --quantity or --layer");
    }
    let cfg = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch: a.batch,
        seed,
    };
    let mut rows = Vec::new();
    let mut last_sep = Vec::new();
    let (trained, logs) = mlp::train_sgd_with(&net, &data, &cfg, |epoch, model, log| {
        let sep = mlp::separation_metrics(&layer_features(model, &data)?)?;
        for s in &sep {
            rows.push(MetricRow {
                epoch,
                layer: s.layer,
                loss: log.loss,
                accuracy: log.accuracy,
                trace_class: s.trace_class,
                trace_within: s.trace_within,
                whisker_ratio: s.whisker_ratio,
            });
        }
        last_sep = sep;
        Ok(())
    })?;

    trained.save(&out.dir().join("train.mlp"))?;
    if a.source.synthetic.is_some() {
        data.save(&out.dir().join("data.blk2"))?;
    }
    let (final_loss, final_accuracy) = match logs.last() {
        Some(l) => (l.loss, l.accuracy),
        None => mlp::dataset_loss(&trained, &data)?,
    };
    if last_sep.is_empty() {
        last_sep = mlp::separation_metrics(&layer_features(&trained, &data)?)?;
    }
    let separation: Vec<f64> = last_sep.iter().map(ratio).collect();
    let monotone = separation.windows(2).all(|w| w[1] >= w[0]);
    out.json(
        "train",
        &Report {
            dims: trained.dims().to_vec(),
            config: cfg,
            final_loss,
            final_accuracy,
            separation,
            separation_check: if monotone { "pass" } else { "warn" },
        },
    )?;
    out.csv("train_metrics", &Output::csv_rows(&rows)?)?;

    let loss: Vec<(f64, f64)> = logs.iter().map(|l| (l.epoch as f64, l.loss)).collect();
    let svg = Plot::new("Training loss", "epoch", "cross-entropy")
        .log_y(true)
        .line(loss, "royalblue")
        .render();
    out.svg("train", &svg)
}
