//! Symmetric linear operators and the combinators built on them.
//!
//! Every spectral routine in this crate only ever calls [`LinearOperator::apply_into`],
//! so the same code runs on a dense test matrix, on a Gauss-Newton operator
//! that streams over training examples, or on any composition of the two.
//! Operators are immutable once built and must tolerate concurrent `apply`
//! calls from several workers.

use std::sync::Arc;

use crate::dense::{self, guard_dense, Matrix};
use crate::error::{check_dim, Error, Result};
use crate::par;

pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `A v` into `out`. Both slices have length [`Self::dim`].
    fn apply_into(&self, v: &[f64], out: &mut [f64]);

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(v, &mut out);
        out
    }

    /// Dimension-checked `A v`.
    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(self.apply(v))
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        (**self).apply_into(v, out)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        (**self).apply_into(v, out)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        (**self).apply_into(v, out)
    }
}

/// Checked free-function form of [`LinearOperator::matvec`].
pub fn matvec<A: LinearOperator + ?Sized>(op: &A, v: &[f64]) -> Result<Vec<f64>> {
    op.matvec(v)
}

/// Dense symmetric matrix. Symmetry is checked exactly at construction.
#[derive(Debug, Clone)]
pub struct DenseSymOperator {
    entries: Matrix,
}

impl DenseSymOperator {
    pub fn new(entries: Matrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        if entries.nrows() == 0 {
            return Err(Error::invalid("operator dimension must be positive"));
        }
        let n = entries.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(DenseSymOperator { entries })
    }

    /// Builds from `(m + m^T) / 2`.
    pub fn symmetrized(mut m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        dense::symmetrize(&mut m);
        Self::new(m)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::new(Matrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_entries(self) -> Matrix {
        self.entries
    }
}

impl LinearOperator for DenseSymOperator {
    fn dim(&self) -> usize {
        self.entries.nrows()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        // column-major storage: accumulate column by column
        for (j, col) in self.entries.column_iter().enumerate() {
            let vj = v[j];
            if vj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(col.iter()) {
                *o += a * vj;
            }
        }
    }
}

/// `(A - c I) / d` with `d > 0`.
#[derive(Debug, Clone)]
pub struct AffineOperator<A> {
    base: A,
    shift: f64,
    scale: f64,
}

impl<A: LinearOperator> AffineOperator<A> {
    pub fn base(&self) -> &A {
        &self.base
    }
    pub fn shift(&self) -> f64 {
        self.shift
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl<A: LinearOperator> LinearOperator for AffineOperator<A> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.base.apply_into(v, out);
        let inv = 1.0 / self.scale;
        for (o, x) in out.iter_mut().zip(v) {
            *o = (*o - self.shift * x) * inv;
        }
    }
}

pub fn shift_scale<A: LinearOperator>(op: A, c: f64, d: f64) -> Result<AffineOperator<A>> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("scale must be positive and finite, got {d}")));
    }
    if !c.is_finite() {
        return Err(Error::invalid(format!("shift must be finite, got {c}")));
    }
    Ok(AffineOperator {
        base: op,
        shift: c,
        scale: d,
    })
}

/// `(I - V V^T) A (I - V V^T)` for an orthonormal `V`.
#[derive(Debug, Clone)]
pub struct DeflatedOperator<A> {
    base: A,
    basis: Matrix,
}

impl<A: LinearOperator> DeflatedOperator<A> {
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }
    pub fn base(&self) -> &A {
        &self.base
    }
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    fn project_out(&self, x: &mut [f64]) {
        for col in self.basis.column_iter() {
            let c = col.as_slice();
            let coef = dense::dot(c, x);
            dense::axpy(-coef, c, x);
        }
    }
}

impl<A: LinearOperator> LinearOperator for DeflatedOperator<A> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let mut w = v.to_vec();
        self.project_out(&mut w);
        self.base.apply_into(&w, out);
        self.project_out(out);
    }
}

/// Deflates the span of the given eigenvectors out of `op`. The vectors are
/// orthonormalized internally, so they need not be exactly orthogonal.
pub fn deflate<A: LinearOperator>(
    op: A,
    eigenpairs: &[(f64, Vec<f64>)],
) -> Result<DeflatedOperator<A>> {
    let p = op.dim();
    let r = eigenpairs.len();
    if r >= p {
        return Err(Error::invalid(format!(
            "deflation rank {r} must be smaller than the dimension {p}"
        )));
    }
    for (_, v) in eigenpairs {
        check_dim(p, v.len())?;
    }
    let basis = if r == 0 {
        Matrix::zeros(p, 0)
    } else {
        let raw = Matrix::from_fn(p, r, |i, j| eigenpairs[j].1[i]);
        let q = dense::orthonormalize(&raw);
        // Householder QR keeps a full orthonormal Q even for dependent input;
        // the span is what matters here.
        Matrix::from_fn(p, r, |i, j| q[(i, j)])
    };
    Ok(DeflatedOperator { base: op, basis })
}

/// `A - B`.
#[derive(Debug, Clone)]
pub struct DifferenceOperator<A, B> {
    left: A,
    right: B,
}

impl<A: LinearOperator, B: LinearOperator> LinearOperator for DifferenceOperator<A, B> {
    fn dim(&self) -> usize {
        self.left.dim()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.left.apply_into(v, out);
        let rb = self.right.apply(v);
        for (o, b) in out.iter_mut().zip(rb) {
            *o -= b;
        }
    }
}

/// Operator form of the subtraction knockout `A ⊖ B`.
pub fn subtract_op<A: LinearOperator, B: LinearOperator>(
    a: A,
    b: B,
) -> Result<DifferenceOperator<A, B>> {
    check_dim(a.dim(), b.dim())?;
    Ok(DifferenceOperator { left: a, right: b })
}

/// Applies `op` to every unit vector and returns the resulting dense matrix.
/// Columns are computed in parallel.
pub fn materialize<A: LinearOperator + ?Sized>(op: &A) -> Result<Matrix> {
    let p = op.dim();
    guard_dense("materialized operator", p)?;
    let cols = par::map_indexed(p, |j| {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        op.apply(&e)
    });
    Ok(Matrix::from_fn(p, p, |i, j| cols[j][i]))
}
