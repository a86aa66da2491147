use serde::Serialize;
use spectrascope::knockout::descending_spectrum;
use spectrascope::mlp::{self, spectral_alignment};
use spectrascope::svg::Plot;

use crate::args::KfacCompareArgs;
use crate::error::{config, CliError};
use crate::output::Output;
use crate::source;

#[derive(Debug, Serialize)]
struct LayerReport {
    layer: usize,
    dim: usize,
    /// Requested `k` clipped to the count of positive eigenvalues shared by
    /// all three spectra.
    k: usize,
    kfac_alignment: f64,
    cfac_alignment: f64,
    status: &'static str,
}

#[derive(Debug, Serialize)]
struct Report {
    dims: Vec<usize>,
    top_k: usize,
    layers: Vec<LayerReport>,
}

#[derive(Debug, Serialize)]
struct SpectrumRow {
    layer: usize,
    rank: usize,
    g: f64,
    kfac: f64,
    cfac: f64,
}

fn positive_count(v: &[f64]) -> usize {
    v.iter().take_while(|&&x| x > 0.0).count()
}

pub fn run(a: &KfacCompareArgs, seed: u64, out: &Output) -> Result<(), CliError> {
    let (net, data) = source::model(&a.source, &a.net.widths, seed)?;
    if a.source.quantity.is_some() {
        return config("kfac-compare always compares G, KFAC and CFAC; drop --quantity");
    }
    let an = mlp::analyze(&net, &data)?;
    let top_k = a.top_k.unwrap_or(data.classes() * data.classes());
    if top_k == 0 {
        return config("--top-k must be positive");
    }
    let layers: Vec<usize> = match a.source.layer {
        Some(l) if l == 0 || l > net.layers() => {
            return config(format!("layer {l} outside 1..={}", net.layers()))
        }
        Some(l) => vec![l],
        None => (1..=net.layers()).collect(),
    };
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut last = None;
    for &l in &layers {
        let g = descending_spectrum(&an.g_dense(source::scope(Some(l)))?)?;
        let kfac = descending_spectrum(&an.kfac_layer(l)?)?;
        let cfac = descending_spectrum(&an.cfac_layer(l)?)?;
        let k = top_k
            .min(positive_count(&g))
            .min(positive_count(&kfac))
            .min(positive_count(&cfac));
        if k == 0 {
            return config(format!("layer {l}: no positive eigenvalues to align"));
        }
        let kfac_alignment = spectral_alignment(&g, &kfac, k)?;
        let cfac_alignment = spectral_alignment(&g, &cfac, k)?;
        reports.push(LayerReport {
            layer: l,
            dim: g.len(),
            k,
            kfac_alignment,
            cfac_alignment,
            status: if cfac_alignment >= kfac_alignment { "pass" } else { "warn" },
        });
        for i in 0..g.len() {
            rows.push(SpectrumRow {
                layer: l,
                rank: i + 1,
                g: g[i],
                kfac: kfac[i],
                cfac: cfac[i],
            });
        }
        last = Some((l, k, g, kfac, cfac));
    }
    out.json(
        "kfac_compare",
        &Report {
            dims: net.dims().to_vec(),
            top_k,
            layers: reports,
        },
    )?;
    out.csv("kfac_compare", &Output::csv_rows(&rows)?)?;
    if let Some((l, k, g, kfac, cfac)) = last {
        let shown = (4 * k).min(g.len());
        let pts = |v: &[f64]| -> Vec<(f64, f64)> {
            v[..shown]
                .iter()
                .enumerate()
                .filter(|(_, x)| **x > 0.0)
                .map(|(i, &x)| ((i + 1) as f64, x))
                .collect()
        };
        let svg = Plot::new(&format!("Layer {l}: G vs KFAC vs CFAC"), "rank", "eigenvalue")
            .log_y(true)
            .points(pts(&g), "black")
            .line(pts(&kfac), "darkorange")
            .line(pts(&cfac), "royalblue")
            .render();
        out.svg("kfac_compare", &svg)?;
    }
    Ok(())
}
