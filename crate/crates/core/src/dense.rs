//! Dense symmetric-matrix utilities used by oracles, knockouts and the
//! small-instance backends. Dense storage is capped at [`DENSE_LIMIT`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::format;

pub type Matrix = DMatrix<f64>;

/// Largest dimension for which anything is materialized densely.
pub const DENSE_LIMIT: usize = 4096;

pub(crate) fn guard_dense(what: &'static str, size: usize) -> Result<()> {
    if size > DENSE_LIMIT {
        return Err(Error::TooLarge {
            what,
            size,
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigvals(m: &Matrix) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Eigenpairs of a symmetric matrix, ascending by value. Column `j` of the
/// returned matrix is the eigenvector for value `j`.
pub fn sym_eigh(m: &Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(m.nrows(), n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

struct Svd {
    u: Matrix,
    s: Vec<f64>,
    v: Matrix,
}

fn thin_svd(m: &Matrix) -> Result<Svd> {
    let a = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD failed: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    Ok(Svd {
        u: Matrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        s: svd.S().column_vector().iter().copied().collect(),
        v: Matrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    })
}

/// Singular values, descending.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let mut s = thin_svd(m)?.s;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Orthonormal bases of the column space and row space of `m`, keeping
/// singular directions with `s > rel_tol * s_max`.
pub fn singular_bases(m: &Matrix, rel_tol: f64) -> Result<(Matrix, Matrix)> {
    let Svd { u, s, v } = thin_svd(m)?;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..s.len())
        .filter(|&i| smax > 0.0 && s[i] > rel_tol * smax)
        .collect();
    let left = Matrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])]);
    let right = Matrix::from_fn(m.ncols(), keep.len(), |r, c| v[(r, keep[c])]);
    Ok((left, right))
}

/// Orthonormalizes the columns of `m` with a Householder QR and returns the
/// thin Q factor.
pub fn orthonormalize(m: &Matrix) -> Matrix {
    m.clone().qr().q()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

/// `||a - b||_F / ||a||_F`, or the absolute difference when `a` is zero.
pub fn rel_frobenius_diff(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).norm();
    let scale = a.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// `m += w * v v^T`.
pub fn add_outer(m: &mut Matrix, w: f64, v: &[f64]) {
    let n = v.len();
    debug_assert_eq!(m.nrows(), n);
    for j in 0..n {
        let wj = w * v[j];
        if wj == 0.0 {
            continue;
        }
        let col = m.column_mut(j);
        for (x, vi) in col.into_iter().zip(v) {
            *x += wj * vi;
        }
    }
}

/// `sum_k weights[k] * rows[k] rows[k]^T`, computed as `X^T X` with the
/// rows of `X` scaled by `sqrt(weights[k])`. Weights must be nonnegative.
pub fn weighted_gram<'a, I>(dim: usize, items: I) -> Matrix
where
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let mut data = Vec::new();
    let mut rows = 0;
    for (w, v) in items {
        debug_assert!(w >= 0.0);
        debug_assert_eq!(v.len(), dim);
        if w == 0.0 {
            continue;
        }
        let s = w.sqrt();
        data.extend(v.iter().map(|x| s * x));
        rows += 1;
    }
    if rows == 0 {
        return Matrix::zeros(dim, dim);
    }
    let x = Matrix::from_row_slice(rows, dim, &data);
    let mut g = x.transpose() * &x;
    symmetrize(&mut g);
    g
}

/// Replaces `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

pub fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    let x = DVector::from_column_slice(v);
    (m * x).iter().copied().collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const MTX_MAGIC: &[u8; 4] = b"MTX1";

/// Writes a square matrix as `MTX1`: magic, u64 p, then p*p f64 row-major.
pub fn save_mtx(path: &Path, m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid("MTX1 stores square matrices only"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    format::write_magic(&mut w, MTX_MAGIC)?;
    format::write_u64(&mut w, m.nrows() as u64)?;
    let row_major: Vec<f64> = m.transpose().as_slice().to_vec();
    format::write_f64s(&mut w, &row_major)?;
    Ok(())
}

pub fn load_mtx(path: &Path) -> Result<Matrix> {
    let mut r = BufReader::new(File::open(path)?);
    format::read_magic(&mut r, MTX_MAGIC)?;
    let p = format::read_usize(&mut r)?;
    guard_dense("MTX1 matrix", p)?;
    let data = format::read_f64s(&mut r, p * p)?;
    format::expect_eof(&mut r)?;
    Ok(Matrix::from_row_slice(p, p, &data))
}

/// Writes one CSV row per matrix row, no header.
pub fn save_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for rec in r.records() {
        let rec = rec?;
        if ncols.is_some_and(|n| n != rec.len()) {
            return Err(Error::Format(format!("ragged CSV row {}", nrows + 1)));
        }
        ncols = Some(rec.len());
        for field in rec.iter() {
            let x: f64 = field
                .parse()
                .map_err(|_| Error::Format(format!("not a number: {field:?}")))?;
            data.push(x);
        }
        nrows += 1;
    }
    let ncols = ncols.unwrap_or(0);
    Ok(Matrix::from_row_slice(nrows, ncols, &data))
}

/// Loads a matrix from either format, sniffing the `MTX1` magic.
pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let mut head = [0u8; 4];
    let n = File::open(path)?.read(&mut head)?;
    if n == 4 && &head == MTX_MAGIC {
        load_mtx(path)
    } else {
        load_csv(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigh_sorted_ascending() {
        let m = Matrix::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = sym_eigh(&m);
        assert_eq!(vals, vec![-1.0, 2.0, 3.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn weighted_gram_matches_outer_sum() {
        let a = [1.0, 2.0, -1.0];
        let b = [0.5, 0.0, 3.0];
        let g = weighted_gram(3, [(0.25, &a[..]), (2.0, &b[..])]);
        let mut m = Matrix::zeros(3, 3);
        add_outer(&mut m, 0.25, &a);
        add_outer(&mut m, 2.0, &b);
        assert!((g - m).norm() < 1e-14);
    }

    #[test]
    fn mtx_and_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 / 7.0 - 1.0);
        let p = dir.path().join("m.mtx");
        save_mtx(&p, &m).unwrap();
        assert_eq!(load_matrix(&p).unwrap(), m);
        let c = dir.path().join("m.csv");
        save_csv(&c, &m).unwrap();
        assert_eq!(load_matrix(&c).unwrap(), m);
    }

    #[test]
    fn mtx_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.mtx");
        std::fs::write(&p, b"MTX2\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(load_mtx(&p), Err(Error::Format(_))));
        std::fs::write(&p, b"MTX1\x02\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(load_mtx(&p).is_err());
    }

    #[test]
    fn singular_bases_drop_null_directions() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        let (u, v) = singular_bases(&m, 1e-10).unwrap();
        assert_eq!(u.ncols(), 1);
        assert_eq!(v.ncols(), 1);
    }

    #[test]
    fn singular_bases_span_low_rank_column_space() {
        use crate::rng::{normal_vec, stream};
        let d = 200;
        let mut m = Matrix::zeros(d, d);
        for k in 0..4 {
            let mut u = normal_vec(&mut stream(6, k), d);
            let n = norm2(&u);
            u.iter_mut().for_each(|x| *x *= 20.0 / n);
            add_outer(&mut m, 0.25, &u);
        }
        let (u, _) = singular_bases(&m, 1e-10).unwrap();
        assert_eq!(u.ncols(), 4);
        let resid = (&m - &u * (u.transpose() * &m)).norm() / m.norm();
        assert!(resid < 1e-12, "{resid:e}");
        let s = singular_values(&m).unwrap();
        assert!(s[4] < 1e-12 * s[0]);
    }
}
