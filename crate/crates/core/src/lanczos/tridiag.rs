//! Symmetric tridiagonal eigensolver (implicit QL with Wilkinson-style shifts).

use crate::dense::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS_PER_VALUE: usize = 60;

/// Ritz values of `T_M` and the first component of each eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagResult {
    pub ritz_values: Vec<f64>,
    pub first_components: Vec<f64>,
}

impl TridiagResult {
    pub fn len(&self) -> usize {
        self.ritz_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ritz_values.is_empty()
    }

    /// Quadrature weights `y_m[1]^2`.
    pub fn weights(&self) -> Vec<f64> {
        self.first_components.iter().map(|y| y * y).collect()
    }
}

/// Eigenvalues and first eigenvector components of the symmetric tridiagonal
/// matrix with diagonal `alphas` and off-diagonal `betas`.
///
/// Only the first row of the eigenvector matrix is tracked, so this runs in
/// `O(M^2)`.
pub fn tridiag_eig(alphas: &[f64], betas: &[f64]) -> Result<TridiagResult> {
    let (values, rows) = ql_implicit(alphas, betas, 1)?;
    Ok(TridiagResult {
        ritz_values: values,
        first_components: rows,
    })
}

/// Full eigendecomposition; eigenvectors are the columns of the matrix.
pub fn tridiag_eigh(alphas: &[f64], betas: &[f64]) -> Result<(Vec<f64>, Matrix)> {
    let n = alphas.len();
    let (values, z) = ql_implicit(alphas, betas, n)?;
    Ok((values, Matrix::from_row_slice(n, n, &z)))
}

/// Runs QL on `T`, accumulating rotations into the first `rows` rows of the
/// identity. Returns ascending eigenvalues and the tracked rows (row-major,
/// columns permuted to match the sorted values).
fn ql_implicit(alphas: &[f64], betas: &[f64], rows: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = alphas.len();
    if n == 0 {
        return Err(Error::invalid("tridiagonal matrix must be nonempty"));
    }
    if betas.len() + 1 != n {
        return Err(Error::DimensionMismatch {
            expected: n - 1,
            got: betas.len(),
        });
    }
    if alphas.iter().chain(betas).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite tridiagonal entry".into()));
    }

    let mut d = alphas.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(betas);
    let mut z = vec![0.0; rows * n];
    for k in 0..rows {
        z[k * n + k] = 1.0;
    }

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_SWEEPS_PER_VALUE {
                    return Err(Error::NoConvergence(iter));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..rows {
                        let row = &mut z[k * n..(k + 1) * n];
                        let zh = row[i + 1];
                        row[i + 1] = s * row[i] + c * zh;
                        row[i] = c * row[i] - s * zh;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut sorted = vec![0.0; rows * n];
    for k in 0..rows {
        for (j, &i) in order.iter().enumerate() {
            sorted[k * n + j] = z[k * n + i];
        }
    }
    Ok((values, sorted))
}
