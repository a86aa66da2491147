//! Dataset-level curvature quantities of a trained network.

use serde::Serialize;

use super::{extended_backward, forward, kron_vec, Mlp};
use crate::blocks::{ClassArray, CrossClassArray, WeightScheme};
use crate::dense::{self, guard_dense, Matrix};
use crate::error::{check_dim, Error, Result};
use crate::linop::LinearOperator;
use crate::par;

/// Which parameters a Gauss-Newton matrix covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Only `W^l`.
    Layer(usize),
    /// All layers concatenated.
    All,
}

/// Features, extended errors and softmax weights of a network over a
/// balanced dataset, with labels given by the class index.
#[derive(Debug, Clone)]
pub struct Analysis {
    dims: Vec<usize>,
    feats: Vec<ClassArray>,
    deltas: Vec<CrossClassArray>,
    probs: ClassArray,
    weights: WeightScheme,
}

pub fn analyze(net: &Mlp, data: &ClassArray) -> Result<Analysis> {
    check_dim(net.input_dim(), data.dim())?;
    if data.classes() != net.classes() {
        return Err(Error::invalid(format!(
            "dataset has {} classes but the network outputs {}",
            data.classes(),
            net.classes()
        )));
    }
    let (n, c) = (data.n(), data.classes());
    let layers = net.layers();
    let traces = par::map_indexed(n * c, |e| {
        let t = forward(net, data.get(e / c, e % c)).expect("dimension checked above");
        let b = extended_backward(net, &t);
        (t, b)
    });
    let feats = (0..=layers)
        .map(|l| ClassArray::new(n, c, net.dims()[l], traces.iter().flat_map(|(t, _)| t.h(l).to_vec()).collect()))
        .collect::<Result<Vec<_>>>()?;
    let deltas = (1..=layers)
        .map(|l| {
            let data = traces
                .iter()
                .flat_map(|(_, b)| (0..c).flat_map(move |cp| b.delta(cp, l).to_vec()))
                .collect();
            CrossClassArray::new(n, c, net.dims()[l], data)
        })
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = traces.iter().flat_map(|(t, _)| t.probs.clone()).collect();
    let weights = WeightScheme::from_probabilities(n, c, &p)?;
    let probs = ClassArray::new(n, c, c, p)?;
    Ok(Analysis {
        dims: net.dims().to_vec(),
        feats,
        deltas,
        probs,
        weights,
    })
}

impl Analysis {
    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n(&self) -> usize {
        self.probs.n()
    }

    pub fn classes(&self) -> usize {
        self.probs.classes()
    }

    fn check_layer(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.layers() {
            return Err(Error::invalid(format!("layer {l} outside 1..={}", self.layers())));
        }
        Ok(())
    }

    /// `h^l`, `l` in `0..=L`.
    pub fn features(&self, l: usize) -> &ClassArray {
        &self.feats[l]
    }

    /// `delta^l` for every `(i, c, c')`, `l` in `1..=L`.
    pub fn errors(&self, l: usize) -> &CrossClassArray {
        &self.deltas[l - 1]
    }

    /// Softmax outputs `p[i][c][.]`.
    pub fn probabilities(&self) -> &ClassArray {
        &self.probs
    }

    /// `w[i][c][c'] = p[i][c][c'] / (N C)`.
    pub fn weights(&self) -> &WeightScheme {
        &self.weights
    }

    fn scope_layers(&self, scope: Scope) -> Result<Vec<usize>> {
        match scope {
            Scope::Layer(l) => {
                self.check_layer(l)?;
                Ok(vec![l])
            }
            Scope::All => Ok((1..=self.layers()).collect()),
        }
    }

    pub fn scope_dim(&self, scope: Scope) -> Result<usize> {
        Ok(self
            .scope_layers(scope)?
            .iter()
            .map(|&l| self.dims[l] * self.dims[l - 1])
            .sum())
    }

    /// Extended gradients `g[i][c][c']` restricted to `scope`.
    pub fn gradients(&self, scope: Scope) -> Result<CrossClassArray> {
        let layers = self.scope_layers(scope)?;
        CrossClassArray::from_fn(self.n(), self.classes(), self.scope_dim(scope)?, |i, c, cp| {
            layers
                .iter()
                .flat_map(|&l| kron_vec(self.feats[l - 1].get(i, c), self.deltas[l - 1].get(i, c, cp)))
                .collect()
        })
    }

    /// Dense `G = sum w g g^T`.
    pub fn g_dense(&self, scope: Scope) -> Result<Matrix> {
        guard_dense("Gauss-Newton matrix", self.scope_dim(scope)?)?;
        self.gradients(scope)?.weighted_moment(&self.weights)
    }

    /// Matrix-free `G`, streaming over examples on every product.
    pub fn g_operator(&self, scope: Scope) -> Result<GaussNewtonOperator<'_>> {
        let layers = self.scope_layers(scope)?;
        let mut offsets = Vec::with_capacity(layers.len());
        let mut dim = 0;
        for &l in &layers {
            offsets.push(dim);
            dim += self.dims[l] * self.dims[l - 1];
        }
        Ok(GaussNewtonOperator {
            analysis: self,
            layers,
            offsets,
            dim,
        })
    }

    /// Feature second moment `H^l = Ave h^l h^l^T`, `l` in `0..=L`.
    pub fn feature_moment(&self, l: usize) -> Result<Matrix> {
        self.feats[l].second_moment()
    }

    /// Weighted error second moment `Delta^l = sum w delta^l delta^l^T`.
    pub fn error_moment(&self, l: usize) -> Result<Matrix> {
        self.check_layer(l)?;
        self.deltas[l - 1].weighted_moment(&self.weights)
    }

    /// `H^{l-1} (x) Delta^l`.
    pub fn kfac_layer(&self, l: usize) -> Result<Matrix> {
        self.check_layer(l)?;
        guard_dense("KFAC block", self.dims[l] * self.dims[l - 1])?;
        Ok(dense::kron(&self.feature_moment(l - 1)?, &self.error_moment(l)?))
    }

    /// `Ave_c H_c^{l-1} (x) Delta_c^l`.
    pub fn cfac_layer(&self, l: usize) -> Result<Matrix> {
        self.check_layer(l)?;
        let dim = self.dims[l] * self.dims[l - 1];
        guard_dense("CFAC block", dim)?;
        let nc = self.classes();
        let mut out = Matrix::zeros(dim, dim);
        for c in 0..nc {
            let h = self.feats[l - 1].per_class_moment(c)?;
            let d = self.deltas[l - 1].per_class_weighted_moment(&self.weights, c)?;
            out += dense::kron(&h, &d);
        }
        Ok(out / nc as f64)
    }

    fn concat_features(&self) -> Result<ClassArray> {
        let layers = self.layers();
        let d: usize = self.dims[..layers].iter().sum();
        ClassArray::from_fn(self.n(), self.classes(), d, |i, c| {
            (0..layers).flat_map(|l| self.feats[l].get(i, c).to_vec()).collect()
        })
    }

    fn concat_errors(&self) -> Result<CrossClassArray> {
        let d: usize = self.dims[1..].iter().sum();
        CrossClassArray::from_fn(self.n(), self.classes(), d, |i, c, cp| {
            self.deltas.iter().flat_map(|a| a.get(i, c, cp).to_vec()).collect()
        })
    }

    /// `H (.) Delta` over all layers: block `(l, l')` is
    /// `H^{l-1,l'-1} (x) Delta^{l,l'}`.
    pub fn kfac_full(&self) -> Result<Matrix> {
        guard_dense("KFAC matrix", self.scope_dim(Scope::All)?)?;
        let h = self.concat_features()?.second_moment()?;
        let d = self.concat_errors()?.weighted_moment(&self.weights)?;
        Ok(self.khatri_rao(&h, &d))
    }

    /// `Ave_c H_c (.) Delta_c` over all layers.
    pub fn cfac_full(&self) -> Result<Matrix> {
        let p = self.scope_dim(Scope::All)?;
        guard_dense("CFAC matrix", p)?;
        let feats = self.concat_features()?;
        let errs = self.concat_errors()?;
        let nc = self.classes();
        let mut out = Matrix::zeros(p, p);
        for c in 0..nc {
            let h = feats.per_class_moment(c)?;
            let d = errs.per_class_weighted_moment(&self.weights, c)?;
            out += self.khatri_rao(&h, &d);
        }
        Ok(out / nc as f64)
    }

    fn khatri_rao(&self, h: &Matrix, d: &Matrix) -> Matrix {
        let layers = self.layers();
        let p: usize = (1..=layers).map(|l| self.dims[l] * self.dims[l - 1]).sum();
        let h_off: Vec<usize> = (0..layers).map(|l| self.dims[..l].iter().sum()).collect();
        let d_off: Vec<usize> = (0..layers).map(|l| self.dims[1..l + 1].iter().sum()).collect();
        let p_off: Vec<usize> = (0..layers)
            .map(|l| (1..=l).map(|k| self.dims[k] * self.dims[k - 1]).sum())
            .collect();
        let mut out = Matrix::zeros(p, p);
        for a in 0..layers {
            for b in 0..layers {
                let (ha, hb) = (self.dims[a], self.dims[b]);
                let (da, db) = (self.dims[a + 1], self.dims[b + 1]);
                let hblk = h.view((h_off[a], h_off[b]), (ha, hb));
                let dblk = d.view((d_off[a], d_off[b]), (da, db));
                let block = hblk.kronecker(&dblk);
                out.view_mut((p_off[a], p_off[b]), (ha * da, hb * db))
                    .copy_from(&block);
            }
        }
        out
    }

    /// `W_class^l = -(1/eta) Ave_c delta^l_{c,c} h^{l-1}_c^T`, where both
    /// means run over the examples of class `c` and `delta_{c,c}` uses the
    /// true label.
    pub fn weight_class_component(&self, l: usize, eta: f64) -> Result<Matrix> {
        self.check_layer(l)?;
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!("weight decay must be positive, got {eta}")));
        }
        let (n, nc) = (self.n(), self.classes());
        let hm = self.feats[l - 1].class_means();
        let errs = &self.deltas[l - 1];
        let mut out = Matrix::zeros(self.dims[l], self.dims[l - 1]);
        for c in 0..nc {
            let mut dm = vec![0.0; self.dims[l]];
            for i in 0..n {
                dense::axpy(1.0 / n as f64, errs.get(i, c, c), &mut dm);
            }
            let d = Matrix::from_column_slice(dm.len(), 1, &dm);
            let h = Matrix::from_row_slice(1, hm[c].len(), &hm[c]);
            out += d * h;
        }
        Ok(out * (-1.0 / (eta * nc as f64)))
    }

    /// Separation metrics of the features `h^1..h^L`.
    pub fn separation_metrics(&self) -> Result<Vec<LayerSeparation>> {
        separation_metrics(&self.feats[1..])
    }
}

/// Gauss-Newton matrix-vector products without forming `G`. For each example
/// the product is `sum_{c'} w (g^T v) g` with `g^l = h^{l-1} (x) delta^l`, and
/// `g^T v = sum_l delta^l^T V^l h^{l-1}` for `V^l` the reshaped block of `v`.
pub struct GaussNewtonOperator<'a> {
    analysis: &'a Analysis,
    layers: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
}

impl LinearOperator for GaussNewtonOperator<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let a = self.analysis;
        let nc = a.classes();
        let sum = par::sum_vectors(a.n() * nc, self.dim, |e, acc| {
            let (i, c) = (e / nc, e % nc);
            let vh: Vec<Vec<f64>> = self
                .layers
                .iter()
                .zip(&self.offsets)
                .map(|(&l, &off)| {
                    let (din, dout) = (a.dims[l - 1], a.dims[l]);
                    let h = a.feats[l - 1].get(i, c);
                    let mut r = vec![0.0; dout];
                    for (k, &hk) in h.iter().enumerate().take(din) {
                        if hk != 0.0 {
                            dense::axpy(hk, &v[off + k * dout..off + (k + 1) * dout], &mut r);
                        }
                    }
                    r
                })
                .collect();
            let mut u: Vec<Vec<f64>> = self.layers.iter().map(|&l| vec![0.0; a.dims[l]]).collect();
            for cp in 0..nc {
                let w = a.weights.get(i, c, cp);
                if w == 0.0 {
                    continue;
                }
                let s: f64 = self
                    .layers
                    .iter()
                    .zip(&vh)
                    .map(|(&l, r)| dense::dot(a.deltas[l - 1].get(i, c, cp), r))
                    .sum();
                for (k, &l) in self.layers.iter().enumerate() {
                    dense::axpy(w * s, a.deltas[l - 1].get(i, c, cp), &mut u[k]);
                }
            }
            for (k, (&l, &off)) in self.layers.iter().zip(&self.offsets).enumerate() {
                let dout = a.dims[l];
                for (m, &hm) in a.feats[l - 1].get(i, c).iter().enumerate() {
                    if hm != 0.0 {
                        dense::axpy(hm, &u[k], &mut acc[off + m * dout..off + (m + 1) * dout]);
                    }
                }
            }
        });
        out.copy_from_slice(&sum);
    }
}

/// `1 - sum_{i<=k} |log a_i - log b_i| / sum_{i<=k} |log a_i|` over the top
/// `k` eigenvalues of each spectrum (sorted in descending order first).
pub fn spectral_alignment(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > a.len() || k > b.len() {
        return Err(Error::invalid(format!(
            "k = {k} must lie in 1..={}",
            a.len().min(b.len())
        )));
    }
    let top = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|x, y| y.total_cmp(x));
        s.truncate(k);
        s
    };
    let (ta, tb) = (top(a), top(b));
    if let Some(x) = ta.iter().chain(&tb).find(|x| !(**x > 0.0)) {
        return Err(Error::Numeric(format!(
            "top-{k} eigenvalue {x} is not positive; logarithm undefined"
        )));
    }
    let num: f64 = ta.iter().zip(&tb).map(|(x, y)| (x.ln() - y.ln()).abs()).sum();
    let den: f64 = ta.iter().map(|x| x.ln().abs()).sum();
    if den == 0.0 {
        return Err(Error::Numeric("reference spectrum has zero log-mass".into()));
    }
    Ok(1.0 - num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerSeparation {
    pub layer: usize,
    pub trace_class: f64,
    pub trace_within: f64,
    /// `lambda_2 / lambda_C` of the between-class second moment; infinite
    /// when the class means span fewer than `C` dimensions.
    pub whisker_ratio: f64,
}

/// Per-array `tr(H_class)`, `tr(H_within)` and whisker ratio. Entry `k` is
/// reported as layer `k + 1`.
pub fn separation_metrics(features: &[ClassArray]) -> Result<Vec<LayerSeparation>> {
    features
        .iter()
        .enumerate()
        .map(|(k, arr)| {
            let nc = arr.classes();
            if nc < 2 {
                return Err(Error::invalid("separation metrics need at least two classes"));
            }
            let means = arr.class_means();
            // nonzero spectrum of Ave_c m_c m_c^T via the C x C Gram matrix
            let gram = Matrix::from_fn(nc, nc, |a, b| dense::dot(&means[a], &means[b]) / nc as f64);
            let mut ev = dense::sym_eigvals(&gram);
            ev.reverse();
            let trace_class: f64 = (0..nc).map(|c| gram[(c, c)]).sum();
            let total = arr.data().iter().map(|x| x * x).sum::<f64>() / (arr.n() * nc) as f64;
            let floor = 1e-12 * ev[0].abs().max(f64::MIN_POSITIVE);
            let whisker_ratio = if ev[nc - 1] > floor {
                ev[1] / ev[nc - 1]
            } else {
                f64::INFINITY
            };
            Ok(LayerSeparation {
                layer: k + 1,
                trace_class,
                trace_within: (total - trace_class).max(0.0),
                whisker_ratio,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccm;
    use crate::linop::materialize;
    use crate::rng::{normal_vec, stream};

    fn dataset(n: usize, c: usize, d: usize, seed: u64) -> ClassArray {
        let mut rng = stream(seed, 0);
        ClassArray::from_fn(n, c, d, |_, cl| {
            let mut x = normal_vec(&mut rng, d);
            x[cl % d] += 2.0;
            x
        })
        .unwrap()
    }

    #[test]
    fn one_hot_example_has_zero_g() {
        let w = Matrix::from_row_slice(2, 1, &[900.0, -900.0]);
        let net = Mlp::new(vec![w]).unwrap();
        let data = ClassArray::new(1, 2, 1, vec![1.0, 1.0]).unwrap();
        let a = analyze(&net, &data).unwrap();
        assert_eq!(a.g_dense(Scope::All).unwrap().norm(), 0.0);
    }

    #[test]
    fn linear_net_matches_logistic_fim() {
        let net = Mlp::init(&[4, 3], 1).unwrap();
        let data = dataset(5, 3, 4, 2);
        let a = analyze(&net, &data).unwrap();
        let g = a.g_dense(Scope::All).unwrap();
        let want = ccm::logreg_fim(&data, a.probabilities()).unwrap();
        assert!(dense::rel_frobenius_diff(&want, &g) < 1e-12);
    }

    #[test]
    fn operator_matches_dense() {
        let net = Mlp::init(&[4, 6, 5, 3], 3).unwrap();
        let a = analyze(&net, &dataset(4, 3, 4, 4)).unwrap();
        for scope in [Scope::All, Scope::Layer(1), Scope::Layer(2), Scope::Layer(3)] {
            let op = a.g_operator(scope).unwrap();
            let dense_g = a.g_dense(scope).unwrap();
            let m = materialize(&op).unwrap();
            assert!(dense::rel_frobenius_diff(&dense_g, &m) < 1e-12, "{scope:?}");
        }
        assert!(a.g_operator(Scope::Layer(4)).is_err());
    }

    #[test]
    fn layer_block_of_full_g() {
        let net = Mlp::init(&[3, 4, 2], 5).unwrap();
        let a = analyze(&net, &dataset(3, 2, 3, 6)).unwrap();
        let full = a.g_dense(Scope::All).unwrap();
        let g2 = a.g_dense(Scope::Layer(2)).unwrap();
        let off = 12;
        assert!(dense::rel_frobenius_diff(&full.view((off, off), (8, 8)).into_owned(), &g2) < 1e-14);
        let decomposed = a.gradients(Scope::All).unwrap().weighted_decompose(a.weights()).unwrap();
        assert!(dense::rel_frobenius_diff(&decomposed.total, &full) < 1e-12);
    }

    #[test]
    fn kfac_rank_one_case() {
        let net = Mlp::new(vec![Matrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.4])]).unwrap();
        let data = ClassArray::new(1, 2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let a = analyze(&net, &data).unwrap();
        let k = a.kfac_layer(1).unwrap();
        let h = a.feature_moment(0).unwrap();
        let d = a.error_moment(1).unwrap();
        assert!(dense::rel_frobenius_diff(&dense::kron(&h, &d), &k) < 1e-15);
        // identical class distributions make CFAC coincide with KFAC
        let c = a.cfac_layer(1).unwrap();
        assert!(dense::rel_frobenius_diff(&k, &c) < 1e-12);
    }

    #[test]
    fn single_class_cfac_equals_kfac() {
        let net = Mlp::init(&[3, 4, 1], 7).unwrap();
        let a = analyze(&net, &dataset(6, 1, 3, 8)).unwrap();
        for l in 1..=2 {
            assert!(dense::rel_frobenius_diff(&a.kfac_layer(l).unwrap(), &a.cfac_layer(l).unwrap()) < 1e-12);
        }
        assert!(dense::rel_frobenius_diff(&a.kfac_full().unwrap(), &a.cfac_full().unwrap()) < 1e-12);
    }

    #[test]
    fn factored_approximations_are_psd_and_consistent() {
        let net = Mlp::init(&[3, 5, 3], 9).unwrap();
        let a = analyze(&net, &dataset(4, 3, 3, 10)).unwrap();
        let kf = a.kfac_full().unwrap();
        let cf = a.cfac_full().unwrap();
        for m in [&kf, &cf, &a.kfac_layer(2).unwrap(), &a.cfac_layer(1).unwrap()] {
            let scale = m.abs().max();
            assert!(dense::sym_eigvals(m)[0] >= -1e-10 * scale.max(1.0));
        }
        let off = 15;
        let blk = kf.view((off, off), (15, 15)).into_owned();
        assert!(dense::rel_frobenius_diff(&a.kfac_layer(2).unwrap(), &blk) < 1e-12);
        let blk = cf.view((0, 0), (15, 15)).into_owned();
        assert!(dense::rel_frobenius_diff(&a.cfac_layer(1).unwrap(), &blk) < 1e-12);
    }

    #[test]
    fn alignment_scores() {
        let a = [4.0, 2.0, 0.5];
        assert_eq!(spectral_alignment(&a, &a, 3).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        let den = 4f64.ln() + 2f64.ln() + 0.5f64.ln().abs();
        let want = 1.0 - 3.0 * 2f64.ln() / den;
        assert!((spectral_alignment(&a, &b, 3).unwrap() - want).abs() < 1e-15);
        assert!(spectral_alignment(&a, &b, 4).is_err());
        assert!(spectral_alignment(&[1.0, -1.0], &[1.0, 1.0], 2).is_err());
        // order of the inputs does not matter
        assert_eq!(spectral_alignment(&[0.5, 4.0, 2.0], &a, 2).unwrap(), 1.0);
    }

    #[test]
    fn weight_class_component_rank() {
        let net = Mlp::init(&[5, 8, 3], 11).unwrap();
        let a = analyze(&net, &dataset(6, 3, 5, 12)).unwrap();
        for l in 1..=2 {
            let w = a.weight_class_component(l, 5e-4).unwrap();
            let s = dense::singular_values(&w).unwrap();
            assert!(s.iter().skip(3).all(|v| *v <= 1e-10 * s[0]));
        }
        assert!(a.weight_class_component(1, 0.0).is_err());

        let one = Mlp::init(&[5, 4, 1], 13).unwrap();
        let a = analyze(&one, &dataset(4, 1, 5, 14)).unwrap();
        // a single class has p = 1 so every error vanishes
        assert_eq!(a.weight_class_component(2, 1.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn separation_of_constructed_features() {
        let (n, c, d) = (2, 3, 4);
        let orth = ClassArray::from_fn(n, c, d, |i, cl| {
            let mut v = vec![0.0; d];
            v[cl] = 2.0;
            v[3] = if i % 2 == 0 { 1.0 } else { -1.0 };
            v
        })
        .unwrap();
        let s = separation_metrics(std::slice::from_ref(&orth)).unwrap()[0];
        assert!((s.whisker_ratio - 1.0).abs() < 1e-12);
        assert!((s.trace_class - 4.0).abs() < 1e-12);
        assert!(s.whisker_ratio >= 1.0);

        let shifted = ClassArray::from_fn(n, c, d, |i, cl| {
            let mut v = orth.get(i, cl).to_vec();
            v[3] += 10.0;
            v
        })
        .unwrap();
        let t = separation_metrics(&[shifted]).unwrap()[0];
        assert!(t.trace_class > 20.0 * s.trace_class);
        assert!(t.whisker_ratio >= 1.0);
    }
}
