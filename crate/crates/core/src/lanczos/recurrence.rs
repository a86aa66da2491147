//! The Lanczos three-term recurrence, with and without reorthogonalization.

use crate::dense::{axpy, dot, norm2};
use crate::error::{check_dim, Error, Result};
use crate::linop::LinearOperator;
use crate::rng::{normal_vec, stream};

use super::tridiag::{tridiag_eig, TridiagResult};

const BREAKDOWN_TOL: f64 = 1e-14;

/// Coefficients of `T_m`: `alphas.len() == betas.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrence {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Recurrence {
    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn eig(&self) -> Result<TridiagResult> {
        tridiag_eig(&self.alphas, &self.betas)
    }
}

/// Unit-norm Gaussian start vector for probe `probe` of `seed`.
pub fn start_vector(dim: usize, seed: u64, probe: u64) -> Vec<f64> {
    let mut rng = stream(seed, probe);
    loop {
        let mut v = normal_vec(&mut rng, dim);
        let n = norm2(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

fn check_start<A: LinearOperator + ?Sized>(op: &A, v0: &[f64]) -> Result<()> {
    check_dim(op.dim(), v0.len())?;
    let n = norm2(v0);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid("start vector must be nonzero and finite"));
    }
    Ok(())
}

/// Runs at most `steps` iterations from `v0` storing only three vectors.
/// Stops early when `beta` falls below `1e-14` times the running norm
/// estimate (at least 1).
pub fn fast_recurrence<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    steps: usize,
) -> Result<Recurrence> {
    check_start(op, v0)?;
    if steps == 0 {
        return Err(Error::invalid("number of Lanczos iterations must be at least 1"));
    }
    let p = op.dim();
    let n0 = norm2(v0);
    let mut v: Vec<f64> = v0.iter().map(|x| x / n0).collect();
    let mut v_prev = vec![0.0; p];
    let mut w = vec![0.0; p];
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut scale: f64 = 1.0;
    for m in 0..steps {
        op.apply_into(&v, &mut w);
        if m > 0 {
            axpy(-betas[m - 1], &v_prev, &mut w);
        }
        let alpha = dot(&w, &v);
        axpy(-alpha, &v, &mut w);
        let beta = norm2(&w);
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Numeric(format!("non-finite Lanczos coefficient at step {m}")));
        }
        alphas.push(alpha);
        scale = scale.max(alpha.abs() + beta);
        if m + 1 == steps || beta < BREAKDOWN_TOL * scale {
            break;
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        std::mem::swap(&mut v_prev, &mut v);
        std::mem::swap(&mut v, &mut w);
    }
    Ok(Recurrence { alphas, betas })
}

/// Lanczos with full reorthogonalization against all previous vectors.
pub fn slow_recurrence<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    steps: usize,
    reorthogonalize: bool,
) -> Result<Recurrence> {
    check_start(op, v0)?;
    if steps == 0 {
        return Err(Error::invalid("number of Lanczos iterations must be at least 1"));
    }
    let p = op.dim();
    let n0 = norm2(v0);
    let mut basis: Vec<Vec<f64>> = vec![v0.iter().map(|x| x / n0).collect()];
    let mut w = vec![0.0; p];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut scale: f64 = 1.0;
    for m in 0..steps {
        let v = &basis[m];
        op.apply_into(v, &mut w);
        if m > 0 {
            axpy(-betas[m - 1], &basis[m - 1], &mut w);
        }
        let alpha = dot(&w, v);
        axpy(-alpha, v, &mut w);
        if reorthogonalize {
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    axpy(-c, q, &mut w);
                }
            }
        }
        let beta = norm2(&w);
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Numeric(format!("non-finite Lanczos coefficient at step {m}")));
        }
        alphas.push(alpha);
        scale = scale.max(alpha.abs() + beta);
        if m + 1 == steps || beta <= BREAKDOWN_TOL * scale * 100.0 {
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }
    Ok(Recurrence { alphas, betas })
}

/// Full `p`-step Lanczos from the seeded start vector. Terminates early when
/// an invariant subspace is found.
pub fn slow_lanczos<A: LinearOperator + ?Sized>(
    op: &A,
    reorthogonalize: bool,
    seed: u64,
) -> Result<TridiagResult> {
    let v0 = start_vector(op.dim(), seed, 0);
    slow_recurrence(op, &v0, op.dim(), reorthogonalize)?.eig()
}

/// `M`-step Lanczos from the seeded start vector without reorthogonalization.
pub fn fast_lanczos<A: LinearOperator + ?Sized>(op: &A, m: usize, seed: u64) -> Result<TridiagResult> {
    let v0 = start_vector(op.dim(), seed, 0);
    fast_lanczos_from(op, &v0, m)
}

/// [`fast_lanczos`] from an explicit start vector.
pub fn fast_lanczos_from<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    m: usize,
) -> Result<TridiagResult> {
    fast_recurrence(op, v0, m)?.eig()
}

/// Lifts coefficient vectors `ys` (each of length `rec.steps()`) to `R^p` by
/// replaying the recurrence: returns `sum_j y[j] v_j` for every `y`.
pub fn lift_ritz_vectors<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    rec: &Recurrence,
    ys: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    check_start(op, v0)?;
    let steps = rec.steps();
    for y in ys {
        check_dim(steps, y.len())?;
    }
    let p = op.dim();
    let n0 = norm2(v0);
    let mut v: Vec<f64> = v0.iter().map(|x| x / n0).collect();
    let mut v_prev = vec![0.0; p];
    let mut w = vec![0.0; p];
    let mut out = vec![vec![0.0; p]; ys.len()];
    for m in 0..steps {
        for (acc, y) in out.iter_mut().zip(ys) {
            axpy(y[m], &v, acc);
        }
        if m + 1 == steps {
            break;
        }
        op.apply_into(&v, &mut w);
        if m > 0 {
            axpy(-rec.betas[m - 1], &v_prev, &mut w);
        }
        axpy(-rec.alphas[m], &v, &mut w);
        let beta = rec.betas[m];
        w.iter_mut().for_each(|x| *x /= beta);
        std::mem::swap(&mut v_prev, &mut v);
        std::mem::swap(&mut v, &mut w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{self, Matrix};
    use crate::linop::DenseSymOperator;
    use crate::synthetic;

    #[test]
    fn slow_on_small_diagonal() {
        let op = DenseSymOperator::from_diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let r = slow_lanczos(&op, true, 1).unwrap();
        for (x, y) in r.ritz_values.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_breaks_down_after_one_step() {
        let op = DenseSymOperator::from_diagonal(&[1.0; 5]).unwrap();
        let r = slow_lanczos(&op, true, 2).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r.ritz_values[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn slow_matches_dense_on_goe() {
        let m = synthetic::goe(50, 5);
        let want = dense::sym_eigvals(&m);
        let op = DenseSymOperator::new(m).unwrap();
        let r = slow_lanczos(&op, true, 6).unwrap();
        assert_eq!(r.len(), 50);
        let diff = r
            .ritz_values
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "max diff {diff}");
    }

    #[test]
    fn fast_on_rank_one() {
        let p = 30;
        let v0 = start_vector(p, 3, 0);
        let u = start_vector(p, 4, 0);
        let mut m = Matrix::zeros(p, p);
        dense::add_outer(&mut m, 0.9, &u);
        let op = DenseSymOperator::symmetrized(m).unwrap();
        let r = fast_lanczos_from(&op, &v0, 10).unwrap();
        let top = r.len() - 1;
        assert!((r.ritz_values[top] - 0.9).abs() < 1e-10);
        let want = dot(&u, &v0).powi(2);
        assert!((r.weights()[top] - want).abs() < 1e-10);
    }

    #[test]
    fn fast_ritz_values_near_true_spectrum() {
        let m = synthetic::goe(20, 9) * 0.2;
        let want = dense::sym_eigvals(&m);
        let op = DenseSymOperator::new(m).unwrap();
        let r = fast_lanczos(&op, 20, 1).unwrap();
        for t in &r.ritz_values {
            let d = want.iter().map(|l| (l - t).abs()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-6);
        }
    }

    #[test]
    fn fast_is_deterministic() {
        let op = DenseSymOperator::new(synthetic::goe(40, 2) * 0.1).unwrap();
        let a = fast_lanczos(&op, 25, 17).unwrap();
        let b = fast_lanczos(&op, 25, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lifted_ritz_vectors_have_small_residual() {
        let m = synthetic::goe(60, 3);
        let op = DenseSymOperator::new(m).unwrap();
        let v0 = start_vector(60, 1, 0);
        let rec = slow_recurrence(&op, &v0, 60, true).unwrap();
        let (vals, z) = super::super::tridiag::tridiag_eigh(&rec.alphas, &rec.betas).unwrap();
        let y = z.column(0).iter().copied().collect::<Vec<_>>();
        let lifted = lift_ritz_vectors(&op, &v0, &rec, &[y]).unwrap();
        let x = &lifted[0];
        let ax = op.apply(x);
        let res: f64 = ax.iter().zip(x).map(|(a, b)| (a - vals[0] * b).powi(2)).sum::<f64>().sqrt();
        assert!(res < 1e-6, "residual {res}");
    }

    #[test]
    fn zero_operator_gives_single_value() {
        let op = DenseSymOperator::from_diagonal(&[0.0; 4]).unwrap();
        let r = fast_lanczos(&op, 8, 0).unwrap();
        assert_eq!(r.ritz_values, vec![0.0]);
        assert_eq!(r.weights(), vec![1.0]);
    }
}
