//! Canonical classification model and the Fisher information of multinomial
//! logistic regression trained on it.
//!
//! Parameters are vectorized column-stacked: the weight `W` (C x D) becomes
//! `theta = vec(W)`, so entry `(j, a)` of `W` sits at index `a * C + j`.

use serde::Serialize;

use crate::blocks::ClassArray;
use crate::dense::{self, guard_dense, Matrix};
use crate::error::{check_dim, Error, Result};
use crate::par;
use crate::rng::{normal_vec, stream};

/// Tolerance on `sum(p) = 1` for probability vectors.
pub const PROB_TOL: f64 = 1e-8;

const DISCRIMINANT_CLAMP: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CcmConfig {
    pub d: usize,
    pub c: usize,
    /// Samples per class.
    pub n: usize,
    /// Signal-to-noise scale; `s = t^2`.
    pub t: f64,
    pub seed: u64,
}

impl CcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.n == 0 {
            return Err(Error::invalid("CCM needs at least one class and one sample"));
        }
        if self.c > self.d {
            return Err(Error::invalid(format!(
                "CCM needs C <= D, got C = {} and D = {}",
                self.c, self.d
            )));
        }
        if !(self.t >= 0.0) || !self.t.is_finite() {
            return Err(Error::invalid(format!("t must be finite and >= 0, got {}", self.t)));
        }
        Ok(())
    }
}

/// `x[i][c] = t e_c + z[i][c]` with `z ~ N(0, I)`. Example `(i, c)` draws
/// from stream `i * C + c`.
pub fn sample_ccm(cfg: &CcmConfig) -> Result<ClassArray> {
    cfg.validate()?;
    let (n, c, d) = (cfg.n, cfg.c, cfg.d);
    let rows = par::map_indexed(n * c, |k| {
        let mut x = normal_vec(&mut stream(cfg.seed, k as u64), d);
        x[k % c] += cfg.t;
        x
    });
    ClassArray::new(n, c, d, rows.concat())
}

/// Softmax outputs `1 - alpha` on the true class and `alpha / (C - 1)`
/// elsewhere, for every example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetricProbs {
    pub alpha: f64,
    pub c: usize,
}

impl SymmetricProbs {
    pub fn new(alpha: f64, c: usize) -> Result<Self> {
        if c < 2 {
            return Err(Error::invalid(format!("symmetric probabilities need C >= 2, got {c}")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(SymmetricProbs { alpha, c })
    }

    /// `p[., class]`.
    pub fn vector(&self, class: usize) -> Vec<f64> {
        let mut p = vec![self.alpha / (self.c - 1) as f64; self.c];
        p[class] = 1.0 - self.alpha;
        p
    }

    /// `U_c = diag(p) - p p^T` for `p = p[., class]`.
    pub fn u(&self, class: usize) -> Matrix {
        softmax_curvature(&self.vector(class))
    }

    pub fn u_bar(&self) -> Matrix {
        let mut m = Matrix::zeros(self.c, self.c);
        for k in 0..self.c {
            m += self.u(k);
        }
        m / self.c as f64
    }

    /// The same probability vectors for `n` examples per class.
    pub fn to_class_array(&self, n: usize) -> Result<ClassArray> {
        ClassArray::from_fn(n, self.c, self.c, |_, class| self.vector(class))
    }
}

/// `diag(p) - p p^T`.
pub fn softmax_curvature(p: &[f64]) -> Matrix {
    let k = p.len();
    Matrix::from_fn(k, k, |a, b| if a == b { p[a] - p[a] * p[b] } else { -p[a] * p[b] })
}

fn check_probability(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL || p.iter().any(|x| !(*x >= -PROB_TOL)) {
        return Err(Error::invalid(format!(
            "not a probability vector (sum = {s}, entries {p:?})"
        )));
    }
    Ok(())
}

/// `Ave_{i,c} (x x^T) (x) (diag(p) - p p^T)`, the Fisher information of a
/// linear softmax classifier. `p` holds one length-C probability vector per
/// example.
pub fn logreg_fim(x: &ClassArray, p: &ClassArray) -> Result<Matrix> {
    check_dim(x.n(), p.n())?;
    check_dim(x.classes(), p.classes())?;
    let k = p.dim();
    let d = x.dim();
    let dim = d * k;
    guard_dense("Fisher information", dim)?;
    let (n, nc) = (x.n(), x.classes());
    for i in 0..n {
        for c in 0..nc {
            check_probability(p.get(i, c))?;
        }
    }
    let scale = 1.0 / (n * nc) as f64;
    let acc = par::sum_vectors(n * nc, dim * dim, |e, acc| {
        let (i, c) = (e / nc, e % nc);
        let xv = x.get(i, c);
        let u = softmax_curvature(p.get(i, c));
        for a in 0..d {
            for b in 0..d {
                let xab = xv[a] * xv[b] * scale;
                if xab == 0.0 {
                    continue;
                }
                for j in 0..k {
                    let row = (a * k + j) * dim + b * k;
                    for l in 0..k {
                        acc[row + l] += xab * u[(j, l)];
                    }
                }
            }
        }
    });
    let mut g = Matrix::from_row_slice(dim, dim, &acc);
    dense::symmetrize(&mut g);
    Ok(g)
}

fn check_model(d: usize, c: usize, alpha: f64, s: f64) -> Result<SymmetricProbs> {
    let probs = SymmetricProbs::new(alpha, c)?;
    if c > d {
        return Err(Error::invalid(format!("CCM needs C <= D, got C = {c} and D = {d}")));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::invalid(format!("s must be finite and >= 0, got {s}")));
    }
    Ok(probs)
}

/// `(s/C) blkdiag(U_1, .., U_C, 0) + I_D (x) U_bar` under symmetric
/// probabilities.
pub fn expected_fim(d: usize, c: usize, alpha: f64, s: f64) -> Result<Matrix> {
    let probs = check_model(d, c, alpha, s)?;
    guard_dense("expected Fisher information", d * c)?;
    let mut g = dense::kron(&Matrix::identity(d, d), &probs.u_bar());
    for k in 0..c {
        let mut block = g.view_mut((k * c, k * c), (c, c));
        block += probs.u(k) * (s / c as f64);
    }
    Ok(g)
}

/// Average of [`logreg_fim`] over `k` CCM draws per class with the
/// probabilities held at their symmetric values.
pub fn monte_carlo_fim(d: usize, c: usize, alpha: f64, s: f64, k: usize, seed: u64) -> Result<Matrix> {
    let probs = check_model(d, c, alpha, s)?;
    let cfg = CcmConfig {
        d,
        c,
        n: k,
        t: s.sqrt(),
        seed,
    };
    let x = sample_ccm(&cfg)?;
    logreg_fim(&x, &probs.to_class_array(k)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenGroup {
    pub value: f64,
    pub multiplicity: usize,
}

/// Closed-form spectrum of [`expected_fim`]: `C` outliers, a mini-bulk, the
/// main bulk and `D` zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremSpectrum {
    pub top: EigenGroup,
    pub mini: EigenGroup,
    pub bulk: EigenGroup,
    pub zero: EigenGroup,
}

impl TheoremSpectrum {
    pub fn groups(&self) -> [EigenGroup; 4] {
        [self.top, self.mini, self.bulk, self.zero]
    }

    pub fn total_multiplicity(&self) -> usize {
        self.groups().iter().map(|g| g.multiplicity).sum()
    }

    /// All eigenvalues with multiplicity, ascending.
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .groups()
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.value, g.multiplicity))
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

pub fn theorem_spectrum(d: usize, c: usize, alpha: f64, s: f64) -> Result<TheoremSpectrum> {
    check_model(d, c, alpha, s)?;
    let cm1 = (c - 1) as f64;
    let k = alpha / cm1;
    let base = 2.0 - alpha * c as f64 / cm1;
    let group = |value, multiplicity| EigenGroup { value, multiplicity };
    Ok(TheoremSpectrum {
        top: group(k * (s * (1.0 - alpha) + base), c),
        mini: group(k * (s / c as f64 + base), c * (c - 1) - c),
        bulk: group(k * base, d * (c - 1) - c * (c - 1)),
        zero: group(0.0, d * c - d * (c - 1)),
    })
}

/// The 48 `(D, C, alpha, s)` points used to check [`theorem_spectrum`]
/// against dense eigenvalues.
pub fn verification_grid() -> Vec<(usize, usize, f64, f64)> {
    let mut grid = Vec::with_capacity(48);
    for (d, c) in [(4, 2), (5, 3), (8, 4), (12, 5)] {
        for alpha in [0.1, 0.3, 0.6] {
            for s in [0.0, 1.0, 4.0, 25.0] {
                grid.push((d, c, alpha, s));
            }
        }
    }
    grid
}

/// Eigenvalues of the C x C matrix with `a` on the diagonal and `b`
/// elsewhere: `a + b (C - 1)` once, then `a - b` repeated `C - 1` times.
pub fn circulant_eigs(a: f64, b: f64, c: usize) -> Vec<f64> {
    let mut v = vec![a - b; c];
    if c > 0 {
        v[0] = a + b * (c - 1) as f64;
    }
    v
}

/// Eigenvalues of the C x C arrow matrix
///
/// ```text
/// [ a  b  b  ..  b ]
/// [ b  d  e  ..  e ]
/// [ b  e  d  ..  e ]
/// [ :           :  ]
/// [ b  e  ..  e  d ]
/// ```
///
/// as `(T + D) / 2`, `(T - D) / 2` and then `d - e` repeated `C - 2` times.
pub fn arrow_eigs(a: f64, b: f64, d: f64, e: f64, c: usize) -> Result<Vec<f64>> {
    if c < 2 {
        return Err(Error::invalid(format!("arrow matrix needs C >= 2, got {c}")));
    }
    let inner = d + e * (c - 2) as f64;
    let trace = a + inner;
    let det = a * inner - b * b * (c - 1) as f64;
    let mut disc = trace * trace - 4.0 * det;
    if disc < 0.0 {
        let scale = trace.abs().max(1.0);
        if disc < DISCRIMINANT_CLAMP * scale * scale {
            return Err(Error::Numeric(format!("arrow matrix discriminant {disc} is negative")));
        }
        disc = 0.0;
    }
    let delta = disc.sqrt();
    let mut v = vec![(trace + delta) / 2.0, (trace - delta) / 2.0];
    v.extend(std::iter::repeat_n(d - e, c - 2));
    Ok(v)
}

/// Ratios between the three nonzero eigenvalue groups of the expected FIM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MisclassificationReport {
    pub top_over_bulk: f64,
    pub top_over_mini: f64,
    pub mini_over_bulk: f64,
}

pub fn misclassification_ratio_report(d: usize, c: usize, alpha: f64, s: f64) -> Result<MisclassificationReport> {
    let spec = theorem_spectrum(d, c, alpha, s)?;
    let bulk = spec.bulk.value;
    if bulk.abs() <= 1e-14 {
        return Err(Error::Numeric(format!(
            "bulk eigenvalue vanishes at alpha = {alpha}, C = {c}"
        )));
    }
    Ok(MisclassificationReport {
        top_over_bulk: spec.top.value / bulk,
        top_over_mini: spec.top.value / spec.mini.value,
        mini_over_bulk: spec.mini.value / bulk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{CrossClassArray, WeightScheme};
    use rand::Rng;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn sampling_is_reproducible_and_validated() {
        let cfg = CcmConfig { d: 4, c: 2, n: 3, t: 1.0, seed: 9 };
        assert_eq!(sample_ccm(&cfg).unwrap(), sample_ccm(&cfg).unwrap());
        assert!(sample_ccm(&CcmConfig { c: 5, ..cfg }).is_err());
        assert!(sample_ccm(&CcmConfig { t: -1.0, ..cfg }).is_err());
    }

    #[test]
    fn null_model_means_concentrate() {
        let (d, n) = (6, 400);
        let x = sample_ccm(&CcmConfig { d, c: 3, n, t: 0.0, seed: 1 }).unwrap();
        for m in x.class_means() {
            assert!(dense::norm2(&m) < 4.0 * (d as f64 / n as f64).sqrt());
        }
    }

    #[test]
    fn strong_signal_means() {
        let x = sample_ccm(&CcmConfig { d: 5, c: 3, n: 50, t: 100.0, seed: 2 }).unwrap();
        for (c, m) in x.class_means().iter().enumerate() {
            for (a, v) in m.iter().enumerate() {
                let want = if a == c { 100.0 } else { 0.0 };
                assert!((v - want).abs() < 1.0);
            }
        }
    }

    #[test]
    fn logreg_fim_hand_cases() {
        let x = ClassArray::new(1, 1, 1, vec![1.0]).unwrap();
        let onehot = ClassArray::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        // class count of p must match x
        let x2 = ClassArray::new(1, 1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        assert_eq!(logreg_fim(&x2, &onehot).unwrap().norm(), 0.0);
        let half = ClassArray::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let g = logreg_fim(&x, &half).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert_eq!(g, want);
        let bad = ClassArray::new(1, 1, 2, vec![0.5, 0.6]).unwrap();
        assert!(logreg_fim(&x, &bad).is_err());
    }

    #[test]
    fn logreg_fim_matches_extended_gradient_moment() {
        let mut rng = stream(3, 0);
        for trial in 0..5 {
            let (n, c, d) = (3, 3, 2 + trial % 3);
            let x = ClassArray::new(n, c, d, normal_vec(&mut rng, n * c * d)).unwrap();
            let p = ClassArray::from_fn(n, c, c, |_, _| {
                let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 0.05).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .unwrap();
            let g = logreg_fim(&x, &p).unwrap();
            // g = (x (x) I)(p - y_{c'})
            let grads = CrossClassArray::from_fn(n, c, d * c, |i, cl, cp| {
                let (xv, pv) = (x.get(i, cl), p.get(i, cl));
                let mut out = vec![0.0; d * c];
                for a in 0..d {
                    for j in 0..c {
                        let y = if j == cp { 1.0 } else { 0.0 };
                        out[a * c + j] = xv[a] * (pv[j] - y);
                    }
                }
                out
            })
            .unwrap();
            let w = WeightScheme::from_probabilities(n, c, p.data()).unwrap();
            let total = grads.weighted_decompose(&w).unwrap().total;
            assert!(dense::rel_frobenius_diff(&total, &g) < 1e-10);
        }
    }

    #[test]
    fn expected_fim_trivial_cases() {
        assert_eq!(expected_fim(4, 2, 0.0, 3.0).unwrap().norm(), 0.0);
        let probs = SymmetricProbs::new(0.4, 3).unwrap();
        let g = expected_fim(4, 3, 0.4, 0.0).unwrap();
        let mut ev = dense::sym_eigvals(&g);
        let mut want: Vec<f64> = (0..4).flat_map(|_| dense::sym_eigvals(&probs.u_bar())).collect();
        want.sort_by(f64::total_cmp);
        ev.sort_by(f64::total_cmp);
        assert!(max_abs_diff(&ev, &want) < 1e-12);
        assert!(expected_fim(2, 3, 0.4, 1.0).is_err());
        assert!(expected_fim(4, 3, 1.5, 1.0).is_err());
    }

    #[test]
    fn theorem_matches_dense_eig_on_grid() {
        let mut worst: f64 = 0.0;
        let grid = verification_grid();
        assert_eq!(grid.len(), 48);
        for (d, c, alpha, s) in grid {
            let spec = theorem_spectrum(d, c, alpha, s).unwrap();
            assert_eq!(spec.total_multiplicity(), d * c);
            let dense_ev = dense::sym_eigvals(&expected_fim(d, c, alpha, s).unwrap());
            worst = worst.max(max_abs_diff(&spec.values(), &dense_ev));
            // nullity D
            assert!(dense_ev[..d].iter().all(|v| v.abs() < 1e-10));
            assert!(dense_ev[d] > 1e-10);
        }
        assert!(worst < 1e-10, "worst {worst}");
    }

    #[test]
    fn theorem_degenerate_cases() {
        let spec = theorem_spectrum(6, 3, 0.3, 0.0).unwrap();
        assert_eq!(spec.top.value, spec.bulk.value);
        assert_eq!(spec.mini.value, spec.bulk.value);
        assert!(theorem_spectrum(6, 3, 0.0, 5.0).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn circulant_lemma() {
        assert_eq!(circulant_eigs(2.0, 1.0, 3), vec![4.0, 1.0, 1.0]);
        assert_eq!(circulant_eigs(2.5, 0.0, 4), vec![2.5; 4]);
        let mut rng = stream(4, 0);
        for c in 2..=6 {
            let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let m = Matrix::from_fn(c, c, |i, j| if i == j { a } else { b });
            let mut got = circulant_eigs(a, b, c);
            got.sort_by(f64::total_cmp);
            assert!(max_abs_diff(&got, &dense::sym_eigvals(&m)) < 1e-10);
        }
    }

    fn arrow(a: f64, b: f64, d: f64, e: f64, c: usize) -> Matrix {
        Matrix::from_fn(c, c, |i, j| match (i, j) {
            (0, 0) => a,
            (0, _) | (_, 0) => b,
            _ if i == j => d,
            _ => e,
        })
    }

    #[test]
    fn arrow_lemma() {
        let mut got = arrow_eigs(1.5, 0.0, 3.0, 0.5, 4).unwrap();
        got.sort_by(f64::total_cmp);
        let mut want = vec![1.5];
        want.extend(circulant_eigs(3.0, 0.5, 3));
        want.sort_by(f64::total_cmp);
        assert!(max_abs_diff(&got, &want) < 1e-12);

        let got = arrow_eigs(2.0, 0.0, 2.0, 0.0, 3).unwrap();
        assert_eq!(got, vec![2.0; 3]);

        let mut rng = stream(5, 0);
        for c in 2..=6 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut got = arrow_eigs(v[0], v[1], v[2], v[3], c).unwrap();
            got.sort_by(f64::total_cmp);
            let want = dense::sym_eigvals(&arrow(v[0], v[1], v[2], v[3], c));
            assert!(max_abs_diff(&got, &want) < 1e-10);
        }
        assert!(arrow_eigs(1.0, 0.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn ratios() {
        let at = |s| misclassification_ratio_report(10, 4, 0.3, s).unwrap();
        let r: Vec<_> = [0.0, 1.0, 4.0, 16.0].into_iter().map(at).collect();
        for w in r.windows(2) {
            assert!(w[1].top_over_bulk > w[0].top_over_bulk);
            assert!(w[1].top_over_mini > w[0].top_over_mini);
            assert!(w[1].mini_over_bulk > w[0].mini_over_bulk);
        }
        assert!((r[0].top_over_mini - 1.0).abs() < 1e-15);

        let (s, c) = (4.0, 4usize);
        let lim = misclassification_ratio_report(10, c, 1e-9, s).unwrap();
        assert!((lim.top_over_bulk - (s + 2.0) / 2.0).abs() < 1e-6);
        assert!((lim.top_over_mini - (s + 2.0) / (s / c as f64 + 2.0)).abs() < 1e-6);
        assert!((lim.mini_over_bulk - (s / c as f64 + 2.0) / 2.0).abs() < 1e-6);

        assert!(misclassification_ratio_report(10, 4, 0.0, 1.0).is_err());
        assert!(misclassification_ratio_report(10, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn monte_carlo_approaches_expectation() {
        let want = expected_fim(5, 3, 0.3, 4.0).unwrap();
        let got = monte_carlo_fim(5, 3, 0.3, 4.0, 66_667, 6).unwrap();
        let scale = want.abs().max();
        for (g, w) in got.iter().zip(want.iter()) {
            if w.abs() > 0.25 * scale {
                assert!((g - w).abs() < 0.02 * w.abs(), "{g} vs {w}");
            }
        }
    }
}
