//! A bias-free ReLU multilayer perceptron with softmax cross-entropy, and
//! every quantity needed to study its curvature: features, backpropagated
//! errors for all counterfactual labels, extended gradients, Gauss-Newton
//! matrices and their Kronecker-factored approximations.
//!
//! Layers are numbered `1..=L` and features `0..=L`, with `h^0 = x` and
//! `h^L = z^L` (the last layer is linear). Parameters are vectorized by
//! stacking the columns of each `W^l` and concatenating layers in order, so
//! the layer-`l` gradient block is `h^{l-1} (x) delta^l`.

mod analysis;
mod train;

pub use analysis::{
    analyze, separation_metrics, spectral_alignment, Analysis, GaussNewtonOperator,
    LayerSeparation, Scope,
};
pub use train::{
    dataset_loss, hessian_fd, hessian_from_gradient, loss_and_gradient, train_sgd, train_sgd_with,
    EpochLog, TrainConfig, FD_STEP, HESSIAN_LIMIT,
};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::dense::Matrix;
use crate::error::{check_dim, Error, Result};
use crate::format;
use crate::rng::{normal_vec, stream};

const MLP1: &[u8; 4] = b"MLP1";

/// Weights `W^1..W^L`, `W^l` of shape `d_l x d_{l-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
}

impl Mlp {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        let mut dims = vec![weights[0].ncols()];
        for w in &weights {
            check_dim(*dims.last().unwrap(), w.ncols())?;
            dims.push(w.nrows());
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("layer widths must be positive, got {dims:?}")));
        }
        Ok(Mlp { dims, weights })
    }

    /// Gaussian fan-in initialization, `std = sqrt(2 / d_{l-1})`; layer `l`
    /// draws from stream `l`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        Self::check_dims(dims)?;
        let weights = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let std = (2.0 / w[0] as f64).sqrt();
                let vals = normal_vec(&mut stream(seed, k as u64 + 1), w[0] * w[1]);
                Matrix::from_row_slice(w[1], w[0], &vals) * std
            })
            .collect();
        Self::new(weights)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        Self::new(dims.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect())
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!(
                "need at least two positive widths, got {dims:?}"
            )));
        }
        Ok(())
    }

    /// `d_0, .., d_L`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn classes(&self) -> usize {
        self.dims[self.layers()]
    }

    /// `W^l` for `l` in `1..=L`.
    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn layer_params(&self, l: usize) -> usize {
        self.dims[l] * self.dims[l - 1]
    }

    pub fn num_params(&self) -> usize {
        (1..=self.layers()).map(|l| self.layer_params(l)).sum()
    }

    /// Offset of the layer-`l` block in the flat parameter vector.
    pub fn offset(&self, l: usize) -> usize {
        (1..l).map(|k| self.layer_params(k)).sum()
    }

    /// Column-stacked weights, layer after layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            theta.extend_from_slice(w.as_slice());
        }
        theta
    }

    pub fn from_flat(dims: &[usize], theta: &[f64]) -> Result<Self> {
        Self::check_dims(dims)?;
        let total: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
        check_dim(total, theta.len())?;
        let mut off = 0;
        let weights = dims
            .windows(2)
            .map(|w| {
                let m = Matrix::from_column_slice(w[1], w[0], &theta[off..off + w[0] * w[1]]);
                off += w[0] * w[1];
                m
            })
            .collect();
        Self::new(weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        format::write_magic(&mut w, MLP1)?;
        format::write_u64(&mut w, self.layers() as u64)?;
        for d in &self.dims {
            format::write_u64(&mut w, *d as u64)?;
        }
        for m in &self.weights {
            let rows: Vec<f64> = m.transpose().as_slice().to_vec();
            format::write_f64s(&mut w, &rows)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        format::read_magic(&mut r, MLP1)?;
        let layers = format::read_usize(&mut r)?;
        if layers == 0 || layers > 1 << 16 {
            return Err(Error::Format(format!("implausible layer count {layers}")));
        }
        let dims = (0..=layers)
            .map(|_| format::read_usize(&mut r))
            .collect::<Result<Vec<_>>>()?;
        if dims.contains(&0) {
            return Err(Error::Format(format!("zero width in {dims:?}")));
        }
        let mut weights = Vec::with_capacity(layers);
        for w in dims.windows(2) {
            let len = w[0]
                .checked_mul(w[1])
                .ok_or_else(|| Error::Format("layer size overflow".into()))?;
            let vals = format::read_f64s(&mut r, len)?;
            weights.push(Matrix::from_row_slice(w[1], w[0], &vals));
        }
        format::expect_eof(&mut r)?;
        Self::new(weights)
    }
}

/// Pre-activations `z^1..z^L`, features `h^0..h^L` and softmax outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<Vec<f64>>,
    pub feats: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// `z^l`, `l` in `1..=L`.
    pub fn z(&self, l: usize) -> &[f64] {
        &self.pre[l - 1]
    }

    /// `h^l`, `l` in `0..=L`.
    pub fn h(&self, l: usize) -> &[f64] {
        &self.feats[l]
    }

    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }

    /// Cross-entropy `-log p[label]`, computed from the logits.
    pub fn loss(&self, label: usize) -> f64 {
        let z = self.logits();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - z[label]
    }

    pub fn predicted(&self) -> usize {
        let z = self.logits();
        (0..z.len()).fold(0, |best, k| if z[k] > z[best] { k } else { best })
    }
}

/// `W h`.
fn affine(w: &Matrix, h: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; w.nrows()];
    for (a, &ha) in h.iter().enumerate() {
        if ha == 0.0 {
            continue;
        }
        for (zj, wj) in z.iter_mut().zip(w.column(a).iter()) {
            *zj += wj * ha;
        }
    }
    z
}

/// `W^T d`.
fn affine_t(w: &Matrix, d: &[f64]) -> Vec<f64> {
    (0..w.ncols())
        .map(|a| w.column(a).iter().zip(d).map(|(x, y)| x * y).sum())
        .collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn forward(net: &Mlp, x: &[f64]) -> Result<ForwardTrace> {
    check_dim(net.input_dim(), x.len())?;
    let layers = net.layers();
    let mut pre = Vec::with_capacity(layers);
    let mut feats = Vec::with_capacity(layers + 1);
    feats.push(x.to_vec());
    for l in 1..=layers {
        let z = affine(net.weight(l), &feats[l - 1]);
        let h = if l < layers {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        feats.push(h);
    }
    let probs = softmax(&pre[layers - 1]);
    Ok(ForwardTrace { pre, feats, probs })
}

/// Backpropagates an output error `dl/dz^L` to `delta^1..delta^L`. The ReLU
/// derivative at 0 is taken as 0.
pub fn backward(net: &Mlp, trace: &ForwardTrace, output_error: &[f64]) -> Vec<Vec<f64>> {
    let layers = net.layers();
    let mut deltas = vec![Vec::new(); layers];
    deltas[layers - 1] = output_error.to_vec();
    for l in (2..=layers).rev() {
        let back = affine_t(net.weight(l), &deltas[l - 1]);
        deltas[l - 2] = back
            .iter()
            .zip(trace.z(l - 1))
            .map(|(b, z)| if *z > 0.0 { *b } else { 0.0 })
            .collect();
    }
    deltas
}

/// Backpropagated errors for every counterfactual label `c'`, i.e. with
/// output error `p - y_{c'}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedBackTrace {
    /// `deltas[c'][l - 1] = delta^l_{c'}`.
    pub deltas: Vec<Vec<Vec<f64>>>,
}

impl ExtendedBackTrace {
    pub fn delta(&self, cross: usize, l: usize) -> &[f64] {
        &self.deltas[cross][l - 1]
    }
}

pub fn extended_backward(net: &Mlp, trace: &ForwardTrace) -> ExtendedBackTrace {
    let deltas = (0..net.classes())
        .map(|cp| {
            let mut e = trace.probs.clone();
            e[cp] -= 1.0;
            backward(net, trace, &e)
        })
        .collect();
    ExtendedBackTrace { deltas }
}

/// `h^{l-1} (x) delta^l`: entry `a * d_l + j` is `h_a delta_j`.
pub fn kron_vec(h: &[f64], delta: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(h.len() * delta.len());
    for &ha in h {
        g.extend(delta.iter().map(|dj| ha * dj));
    }
    g
}

/// Layer-`l` extended gradient for counterfactual label `cross`.
pub fn extended_gradient(trace: &ForwardTrace, back: &ExtendedBackTrace, l: usize, cross: usize) -> Vec<f64> {
    kron_vec(trace.h(l - 1), back.delta(cross, l))
}

/// All layer blocks of the extended gradient, concatenated.
pub fn full_extended_gradient(trace: &ForwardTrace, back: &ExtendedBackTrace, cross: usize) -> Vec<f64> {
    (1..=trace.pre.len())
        .flat_map(|l| extended_gradient(trace, back, l, cross))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 1..=net.layers() {
            let w = net.weight(l);
            let mut z = vec![0.0; w.nrows()];
            for j in 0..w.nrows() {
                for a in 0..w.ncols() {
                    z[j] += w[(j, a)] * h[a];
                }
            }
            h = if l < net.layers() {
                z.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect()
            } else {
                z
            };
        }
        h
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let net = Mlp::zeros(&[3, 4, 5]).unwrap();
        let t = forward(&net, &[1.0, -2.0, 0.5]).unwrap();
        assert!(t.logits().iter().all(|v| *v == 0.0));
        assert!(t.probs.iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identity_layer_passes_nonnegative_input() {
        let net = Mlp::new(vec![Matrix::identity(3, 3), Matrix::identity(3, 3)]).unwrap();
        let t = forward(&net, &[1.0, 0.0, 2.5]).unwrap();
        assert_eq!(t.h(1), &[1.0, 0.0, 2.5]);
    }

    #[test]
    fn forward_matches_naive_loop() {
        let net = Mlp::init(&[5, 7, 6, 3], 1).unwrap();
        let x = normal_vec(&mut stream(2, 0), 5);
        let t = forward(&net, &x).unwrap();
        let want = naive_forward(&net, &x);
        for (a, b) in t.logits().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(forward(&net, &[1.0]).is_err());
    }

    #[test]
    fn one_hot_output_gives_zero_errors() {
        let w = Matrix::from_row_slice(2, 1, &[800.0, -800.0]);
        let net = Mlp::new(vec![Matrix::identity(1, 1), w]).unwrap();
        let t = forward(&net, &[1.0]).unwrap();
        let back = extended_backward(&net, &t);
        assert!(back.deltas[0].iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_two_class_closed_form() {
        // z = w x, delta = p - y
        let net = Mlp::new(vec![Matrix::from_row_slice(2, 1, &[0.3, -0.2])]).unwrap();
        let t = forward(&net, &[2.0]).unwrap();
        let p0 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((t.probs[0] - p0).abs() < 1e-15);
        let back = extended_backward(&net, &t);
        let g = extended_gradient(&t, &back, 1, 1);
        assert!((g[0] - 2.0 * p0).abs() < 1e-15);
        assert!((g[1] - 2.0 * (1.0 - p0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gradient_is_vec_of_outer_product() {
        let net = Mlp::init(&[4, 5, 3], 3).unwrap();
        let x = normal_vec(&mut stream(4, 0), 4);
        let t = forward(&net, &x).unwrap();
        let back = extended_backward(&net, &t);
        for l in 1..=2 {
            let d = Matrix::from_column_slice(back.delta(2, l).len(), 1, back.delta(2, l));
            let h = Matrix::from_column_slice(t.h(l - 1).len(), 1, t.h(l - 1));
            let outer = &d * h.transpose();
            assert_eq!(extended_gradient(&t, &back, l, 2), outer.as_slice().to_vec());
        }
        assert_eq!(kron_vec(&[2.0], &[3.0]), vec![6.0]);
        assert!(kron_vec(&[1.0, 2.0], &[0.0, 0.0]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flat_roundtrip_and_checkpoint() {
        let net = Mlp::init(&[3, 4, 2], 5).unwrap();
        let theta = net.flatten();
        assert_eq!(theta.len(), net.num_params());
        assert_eq!(Mlp::from_flat(net.dims(), &theta).unwrap(), net);
        assert_eq!(theta[net.offset(2)], net.weight(2)[(0, 0)]);
        assert_eq!(theta[1], net.weight(1)[(1, 0)]);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mlp");
        net.save(&p).unwrap();
        assert_eq!(Mlp::load(&p).unwrap(), net);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"MLP1");
        let first = f64::from_le_bytes(bytes[4 + 8 * 4..4 + 8 * 5].try_into().unwrap());
        let second = f64::from_le_bytes(bytes[4 + 8 * 5..4 + 8 * 6].try_into().unwrap());
        assert_eq!((first, second), (net.weight(1)[(0, 0)], net.weight(1)[(0, 1)]));
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Mlp::load(&p).is_err());
    }

    #[test]
    fn construction_errors() {
        assert!(Mlp::new(vec![]).is_err());
        assert!(Mlp::new(vec![Matrix::zeros(3, 2), Matrix::zeros(2, 4)]).is_err());
        assert!(Mlp::init(&[3], 0).is_err());
        assert!(Mlp::init(&[3, 0, 2], 0).is_err());
    }
}
