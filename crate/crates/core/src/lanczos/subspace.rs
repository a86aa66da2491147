//! Block power (subspace) iteration for the leading eigenpairs.

use serde::{Deserialize, Serialize};

use crate::dense::{self, norm2, Matrix};
use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::par;

use super::recurrence::start_vector;

/// How eigenvalues are read off the converged basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EigenvalueRule {
    /// Rayleigh-Ritz on the final basis: eigenvalues of `Q^T A Q`, with the
    /// basis rotated to the corresponding Ritz vectors.
    #[default]
    RayleighRitz,
    /// Norms of the columns of the last `A Q`, paired with the columns of `Q`.
    /// Only meaningful for positive semidefinite operators.
    ColumnNorm,
}

/// An approximate eigenpair together with its residual `||A v - lambda v||`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

fn apply_columns<A: LinearOperator + ?Sized>(op: &A, q: &Matrix) -> Matrix {
    let cols = par::map_indexed(q.ncols(), |j| op.apply(q.column(j).as_slice()));
    Matrix::from_fn(q.nrows(), q.ncols(), |i, j| cols[j][i])
}

/// Leading `r` eigenpairs (largest magnitude) of `op` after `t` iterations,
/// sorted ascending by value.
pub fn subspace_iteration<A: LinearOperator + ?Sized>(
    op: &A,
    r: usize,
    t: usize,
    seed: u64,
    rule: EigenvalueRule,
) -> Result<Vec<EigenPair>> {
    let p = op.dim();
    if r == 0 {
        return Err(Error::invalid("subspace rank must be positive"));
    }
    if r > p {
        return Err(Error::invalid(format!("subspace rank {r} exceeds dimension {p}")));
    }
    if t == 0 {
        return Err(Error::invalid("number of subspace iterations must be positive"));
    }
    let starts: Vec<Vec<f64>> = (0..r).map(|c| start_vector(p, seed, c as u64)).collect();
    let v = Matrix::from_fn(p, r, |i, j| starts[j][i]);
    let mut q = dense::orthonormalize(&v);
    let mut aq = Matrix::zeros(p, r);
    for _ in 0..t {
        aq = apply_columns(op, &q);
        if aq.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite value in subspace iteration".into()));
        }
        q = dense::orthonormalize(&aq);
    }

    let (values, vectors) = match rule {
        EigenvalueRule::RayleighRitz => {
            let aq_final = apply_columns(op, &q);
            let mut b = q.transpose() * &aq_final;
            dense::symmetrize(&mut b);
            let (vals, u) = dense::sym_eigh(&b);
            let x = &q * u;
            let vecs = (0..r).map(|j| x.column(j).iter().copied().collect()).collect();
            (vals, vecs)
        }
        EigenvalueRule::ColumnNorm => {
            let mut pairs: Vec<(f64, Vec<f64>)> = (0..r)
                .map(|j| {
                    (
                        norm2(aq.column(j).as_slice()),
                        q.column(j).iter().copied().collect(),
                    )
                })
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            pairs.into_iter().unzip()
        }
    };

    let out = values
        .into_iter()
        .zip::<Vec<Vec<f64>>>(vectors)
        .map(|(value, vector)| {
            let av = op.apply(&vector);
            let residual = av
                .iter()
                .zip(&vector)
                .map(|(a, b)| (a - value * b).powi(2))
                .sum::<f64>()
                .sqrt();
            EigenPair {
                value,
                vector,
                residual,
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::DenseSymOperator;
    use crate::synthetic;

    #[test]
    fn recovers_planted_diagonal() {
        let mut d = vec![1.0; 12];
        d[0] = 5.0;
        d[1] = 4.0;
        d[2] = 3.0;
        let op = DenseSymOperator::from_diagonal(&d).unwrap();
        let pairs = subspace_iteration(&op, 3, 100, 1, EigenvalueRule::RayleighRitz).unwrap();
        let vals: Vec<f64> = pairs.iter().map(|p| p.value).collect();
        for (v, w) in vals.iter().zip([3.0, 4.0, 5.0]) {
            assert!((v - w).abs() < 1e-8);
        }
    }

    #[test]
    fn full_rank_recovers_whole_spectrum() {
        let m = synthetic::goe(6, 4);
        let want = dense::sym_eigvals(&m);
        let op = DenseSymOperator::new(m).unwrap();
        let pairs = subspace_iteration(&op, 6, 5, 2, EigenvalueRule::RayleighRitz).unwrap();
        for (p, w) in pairs.iter().zip(&want) {
            assert!((p.value - w).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_one_single_step() {
        let u = start_vector(9, 5, 0);
        let mut m = Matrix::zeros(9, 9);
        dense::add_outer(&mut m, 7.0, &u);
        let op = DenseSymOperator::symmetrized(m).unwrap();
        // the column-norm rule reads the norm of A q, which needs q converged first
        for (rule, t) in [(EigenvalueRule::RayleighRitz, 1), (EigenvalueRule::ColumnNorm, 2)] {
            let pairs = subspace_iteration(&op, 1, t, 0, rule).unwrap();
            assert!((pairs[0].value - 7.0).abs() < 1e-12);
            assert!((dense::dot(&pairs[0].vector, &u).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_vectors_and_small_residuals() {
        let y = synthetic::spiked_wishart(150, &[5.0, 4.0, 3.0], 2).unwrap();
        let op = DenseSymOperator::new(y).unwrap();
        let pairs = subspace_iteration(&op, 3, 128, 3, EigenvalueRule::RayleighRitz).unwrap();
        for (i, a) in pairs.iter().enumerate() {
            assert!(a.residual <= 1e-6 * a.value.abs());
            for (j, b) in pairs.iter().enumerate() {
                let g = dense::dot(&a.vector, &b.vector);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_bad_rank() {
        let op = DenseSymOperator::from_diagonal(&[1.0, 2.0]).unwrap();
        assert!(subspace_iteration(&op, 0, 1, 0, EigenvalueRule::RayleighRitz).is_err());
        assert!(subspace_iteration(&op, 3, 1, 0, EigenvalueRule::RayleighRitz).is_err());
    }
}
