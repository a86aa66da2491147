//! Class and cross-class block structure: means, weighted means and exact
//! second-moment decompositions.
//!
//! A [`ClassArray`] holds vectors `v[i][c]` (example `i` of class `c`); a
//! [`CrossClassArray`] holds `v[i][c][c']` where `c'` runs over every
//! counterfactual label. Both are balanced (same `N` per class) and stored
//! flat in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::dense::{self, guard_dense, Matrix};
use crate::error::{check_dim, Error, Result};
use crate::format;

const ZERO_WEIGHT: f64 = 1e-300;

/// Vectors `v[i][c]`, stored in `(i, c, d)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassArray {
    n: usize,
    c: usize,
    d: usize,
    data: Vec<f64>,
}

/// Vectors `v[i][c][c']`, stored in `(i, c, c', d)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossClassArray {
    n: usize,
    c: usize,
    d: usize,
    data: Vec<f64>,
}

fn check_shape(n: usize, c: usize, d: usize) -> Result<()> {
    if n == 0 || c == 0 || d == 0 {
        return Err(Error::invalid(format!(
            "array dimensions must be positive, got N={n}, C={c}, D={d}"
        )));
    }
    Ok(())
}

impl ClassArray {
    pub fn new(n: usize, c: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(n, c, d)?;
        check_dim(n * c * d, data.len())?;
        Ok(ClassArray { n, c, d, data })
    }

    pub fn from_fn<F: FnMut(usize, usize) -> Vec<f64>>(
        n: usize,
        c: usize,
        d: usize,
        mut f: F,
    ) -> Result<Self> {
        check_shape(n, c, d)?;
        let mut data = Vec::with_capacity(n * c * d);
        for i in 0..n {
            for k in 0..c {
                let v = f(i, k);
                check_dim(d, v.len())?;
                data.extend(v);
            }
        }
        Ok(ClassArray { n, c, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn classes(&self) -> usize {
        self.c
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, c: usize) -> &[f64] {
        let o = (i * self.c + c) * self.d;
        &self.data[o..o + self.d]
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// `v_c = Ave_i v[i][c]`.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        (0..self.c)
            .map(|c| {
                let mut m = vec![0.0; self.d];
                for i in 0..self.n {
                    dense::axpy(1.0, self.get(i, c), &mut m);
                }
                m.iter_mut().for_each(|x| *x /= self.n as f64);
                m
            })
            .collect()
    }

    pub fn global_mean(&self) -> Vec<f64> {
        average(&self.class_means(), self.d)
    }

    /// `H = Ave_{i,c} v v^T`.
    pub fn second_moment(&self) -> Result<Matrix> {
        guard_dense("second moment", self.d)?;
        let w = 1.0 / (self.n * self.c) as f64;
        Ok(dense::weighted_gram(self.d, self.rows().map(|v| (w, v))))
    }

    /// `H_c = Ave_i v[i][c] v[i][c]^T`.
    pub fn per_class_moment(&self, c: usize) -> Result<Matrix> {
        guard_dense("second moment", self.d)?;
        if c >= self.c {
            return Err(Error::invalid(format!("class {c} out of range")));
        }
        let w = 1.0 / self.n as f64;
        Ok(dense::weighted_gram(
            self.d,
            (0..self.n).map(|i| (w, self.get(i, c))),
        ))
    }

    /// Mean-variance split `H = H_class + H_within`.
    pub fn class_moment_split(&self) -> Result<ClassMomentSplit> {
        guard_dense("second moment", self.d)?;
        let means = self.class_means();
        let total = self.second_moment()?;
        let wc = 1.0 / self.c as f64;
        let class = dense::weighted_gram(self.d, means.iter().map(|m| (wc, m.as_slice())));
        let centered: Vec<Vec<f64>> = (0..self.n)
            .flat_map(|i| (0..self.c).map(move |c| (i, c)))
            .map(|(i, c)| self.get(i, c).iter().zip(&means[c]).map(|(a, b)| a - b).collect())
            .collect();
        let wi = 1.0 / (self.n * self.c) as f64;
        let within = dense::weighted_gram(self.d, centered.iter().map(|v| (wi, v.as_slice())));
        Ok(ClassMomentSplit {
            total,
            class,
            within,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        format::write_magic(&mut w, BLK2)?;
        for v in [self.n, self.c, self.d] {
            format::write_u64(&mut w, v as u64)?;
        }
        format::write_f64s(&mut w, &self.data)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        format::read_magic(&mut r, BLK2)?;
        let n = format::read_usize(&mut r)?;
        let c = format::read_usize(&mut r)?;
        let d = format::read_usize(&mut r)?;
        check_shape(n, c, d).map_err(|e| Error::Format(e.to_string()))?;
        let len = checked_len(&[n, c, d])?;
        let data = format::read_f64s(&mut r, len)?;
        format::expect_eof(&mut r)?;
        ClassArray::new(n, c, d, data)
    }
}

/// Result of [`ClassArray::class_moment_split`].
#[derive(Debug, Clone)]
pub struct ClassMomentSplit {
    pub total: Matrix,
    pub class: Matrix,
    pub within: Matrix,
}

const BLK2: &[u8; 4] = b"BLK2";
const BLK3: &[u8; 4] = b"BLK3";
const WGT3: &[u8; 4] = b"WGT3";

fn checked_len(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))
}

fn average(vs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for v in vs {
        dense::axpy(1.0, v, &mut m);
    }
    m.iter_mut().for_each(|x| *x /= vs.len() as f64);
    m
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl CrossClassArray {
    pub fn new(n: usize, c: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(n, c, d)?;
        check_dim(n * c * c * d, data.len())?;
        Ok(CrossClassArray { n, c, d, data })
    }

    pub fn from_fn<F: FnMut(usize, usize, usize) -> Vec<f64>>(
        n: usize,
        c: usize,
        d: usize,
        mut f: F,
    ) -> Result<Self> {
        check_shape(n, c, d)?;
        let mut data = Vec::with_capacity(n * c * c * d);
        for i in 0..n {
            for k in 0..c {
                for kp in 0..c {
                    let v = f(i, k, kp);
                    check_dim(d, v.len())?;
                    data.extend(v);
                }
            }
        }
        Ok(CrossClassArray { n, c, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn classes(&self) -> usize {
        self.c
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, c: usize, cp: usize) -> &[f64] {
        let o = ((i * self.c + c) * self.c + cp) * self.d;
        &self.data[o..o + self.d]
    }

    fn indices(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let c = self.c;
        (0..self.n).flat_map(move |i| (0..c).flat_map(move |k| (0..c).map(move |kp| (i, k, kp))))
    }

    /// `v_{c,c'} = Ave_i v[i][c][c']`, indexed `[c][c']`.
    pub fn cross_class_means(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.c)
            .map(|c| {
                (0..self.c)
                    .map(|cp| {
                        let mut m = vec![0.0; self.d];
                        for i in 0..self.n {
                            dense::axpy(1.0, self.get(i, c, cp), &mut m);
                        }
                        m.iter_mut().for_each(|x| *x /= self.n as f64);
                        m
                    })
                    .collect()
            })
            .collect()
    }

    /// `v_c = Ave_{c'} v_{c,c'}` over all `c'`, including `c' = c`.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        self.cross_class_means()
            .iter()
            .map(|row| average(row, self.d))
            .collect()
    }

    pub fn global_mean(&self) -> Vec<f64> {
        average(&self.class_means(), self.d)
    }

    /// `V = Ave_{i,c,c'} v v^T`.
    pub fn second_moment(&self) -> Result<Matrix> {
        guard_dense("second moment", self.d)?;
        let w = 1.0 / (self.n * self.c * self.c) as f64;
        Ok(dense::weighted_gram(
            self.d,
            self.data.chunks_exact(self.d).map(|v| (w, v)),
        ))
    }

    /// `V_class = Ave_c v_c v_c^T`.
    pub fn between_class(&self) -> Result<Matrix> {
        guard_dense("second moment", self.d)?;
        let means = self.class_means();
        let w = 1.0 / self.c as f64;
        Ok(dense::weighted_gram(self.d, means.iter().map(|m| (w, m.as_slice()))))
    }

    /// `V_cross = Ave_{c,c'} (v_{c,c'} - v_c)(v_{c,c'} - v_c)^T`.
    pub fn between_cross_class(&self) -> Result<Matrix> {
        guard_dense("second moment", self.d)?;
        let cm = self.cross_class_means();
        let means: Vec<Vec<f64>> = cm.iter().map(|row| average(row, self.d)).collect();
        let z: Vec<Vec<f64>> = (0..self.c)
            .flat_map(|c| (0..self.c).map(move |cp| (c, cp)))
            .map(|(c, cp)| diff(&cm[c][cp], &means[c]))
            .collect();
        let w = 1.0 / (self.c * self.c) as f64;
        Ok(dense::weighted_gram(self.d, z.iter().map(|v| (w, v.as_slice()))))
    }

    /// `V_within = Ave_{i,c,c'} (v - v_{c,c'})(v - v_{c,c'})^T`.
    pub fn within_cross_class(&self) -> Result<Matrix> {
        guard_dense("second moment", self.d)?;
        let cm = self.cross_class_means();
        let z: Vec<Vec<f64>> = self
            .indices()
            .map(|(i, c, cp)| diff(self.get(i, c, cp), &cm[c][cp]))
            .collect();
        let w = 1.0 / (self.n * self.c * self.c) as f64;
        Ok(dense::weighted_gram(self.d, z.iter().map(|v| (w, v.as_slice()))))
    }

    /// Weighted second moment `sum_{i,c,c'} w v v^T`.
    pub fn weighted_moment(&self, w: &WeightScheme) -> Result<Matrix> {
        self.check_weights(w)?;
        guard_dense("second moment", self.d)?;
        Ok(dense::weighted_gram(
            self.d,
            self.indices().map(|(i, c, cp)| (w.get(i, c, cp), self.get(i, c, cp))),
        ))
    }

    /// `Delta_c = C * sum_{i,c'} w[i][c][c'] v v^T`, scaled so that
    /// `Ave_c Delta_c` equals [`Self::weighted_moment`].
    pub fn per_class_weighted_moment(&self, w: &WeightScheme, c: usize) -> Result<Matrix> {
        self.check_weights(w)?;
        guard_dense("second moment", self.d)?;
        if c >= self.c {
            return Err(Error::invalid(format!("class {c} out of range")));
        }
        let scale = self.c as f64;
        Ok(dense::weighted_gram(
            self.d,
            (0..self.n)
                .flat_map(|i| (0..self.c).map(move |cp| (i, cp)))
                .map(|(i, cp)| (scale * w.get(i, c, cp), self.get(i, c, cp))),
        ))
    }

    fn check_weights(&self, w: &WeightScheme) -> Result<()> {
        if w.n != self.n || w.c != self.c {
            return Err(Error::invalid(format!(
                "weights are {}x{}x{}, array is {}x{}x{}",
                w.n, w.c, w.c, self.n, self.c, self.c
            )));
        }
        Ok(())
    }

    /// Weighted class/cross/within decomposition of `sum w v v^T`.
    pub fn weighted_decompose(&self, w: &WeightScheme) -> Result<MomentDecomposition> {
        weighted_decompose(self, w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        format::write_magic(&mut w, BLK3)?;
        for v in [self.n, self.c, self.c, self.d] {
            format::write_u64(&mut w, v as u64)?;
        }
        format::write_f64s(&mut w, &self.data)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        format::read_magic(&mut r, BLK3)?;
        let n = format::read_usize(&mut r)?;
        let c = format::read_usize(&mut r)?;
        let c2 = format::read_usize(&mut r)?;
        let d = format::read_usize(&mut r)?;
        if c != c2 {
            return Err(Error::Format(format!("cross-class count {c2} differs from class count {c}")));
        }
        check_shape(n, c, d).map_err(|e| Error::Format(e.to_string()))?;
        let len = checked_len(&[n, c, c, d])?;
        let data = format::read_f64s(&mut r, len)?;
        format::expect_eof(&mut r)?;
        CrossClassArray::new(n, c, d, data)
    }
}

/// Nonnegative weights `w[i][c][c']` and the block weights and conditional
/// distributions derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    n: usize,
    c: usize,
    w: Vec<f64>,
}

impl WeightScheme {
    pub fn new(n: usize, c: usize, w: Vec<f64>) -> Result<Self> {
        if n == 0 || c == 0 {
            return Err(Error::invalid("weight scheme dimensions must be positive"));
        }
        check_dim(n * c * c, w.len())?;
        if let Some(x) = w.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid(format!("weights must be finite and nonnegative, got {x}")));
        }
        Ok(WeightScheme { n, c, w })
    }

    /// `w[i][c][c'] = p[i][c][c'] / (N C)` from per-example probability
    /// vectors `p[i][c][.]`, stored in `(i, c, c')` order.
    pub fn from_probabilities(n: usize, c: usize, p: &[f64]) -> Result<Self> {
        let scale = 1.0 / (n * c) as f64;
        Self::new(n, c, p.iter().map(|x| x * scale).collect())
    }

    /// `w = 1 / (N C^2)` everywhere.
    pub fn uniform(n: usize, c: usize) -> Result<Self> {
        Self::new(n, c, vec![1.0 / (n * c * c) as f64; n * c * c])
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn classes(&self) -> usize {
        self.c
    }
    pub fn data(&self) -> &[f64] {
        &self.w
    }

    pub fn get(&self, i: usize, c: usize, cp: usize) -> f64 {
        self.w[(i * self.c + c) * self.c + cp]
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    /// `w_{c,c'} = sum_i w[i][c][c']`.
    pub fn block(&self, c: usize, cp: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, c, cp)).sum()
    }

    /// `pi[i][c][c'] = w[i][c][c'] / w_{c,c'}`.
    pub fn pi_example(&self, i: usize, c: usize, cp: usize) -> Result<f64> {
        let b = self.block(c, cp);
        if b <= ZERO_WEIGHT {
            return Err(Error::ZeroBlockWeight { class: c, cross: cp });
        }
        Ok(self.get(i, c, cp) / b)
    }

    /// `w_c = sum_{c' != c} w_{c,c'}`.
    pub fn class_weight(&self, c: usize) -> f64 {
        (0..self.c).filter(|&cp| cp != c).map(|cp| self.block(c, cp)).sum()
    }

    /// `pi_{c,c'} = w_{c,c'} / w_c` for `c' != c`.
    pub fn pi_cross(&self, c: usize, cp: usize) -> Result<f64> {
        let wc = self.class_weight(c);
        if wc <= ZERO_WEIGHT {
            return Err(Error::ZeroBlockWeight { class: c, cross: cp });
        }
        Ok(self.block(c, cp) / wc)
    }

    /// `pi_c = w_c / sum_k w_k`.
    pub fn pi_class(&self, c: usize) -> Result<f64> {
        let total: f64 = (0..self.c).map(|k| self.class_weight(k)).sum();
        if total <= ZERO_WEIGHT {
            return Err(Error::invalid("all off-diagonal block weights are zero"));
        }
        Ok(self.class_weight(c) / total)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        format::write_magic(&mut w, WGT3)?;
        format::write_f64s(&mut w, &self.w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a `WGT3` file; the shape comes from the array it belongs to.
    pub fn load(path: &Path, n: usize, c: usize) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        format::read_magic(&mut r, WGT3)?;
        let len = checked_len(&[n, c, c])?;
        let w = format::read_f64s(&mut r, len)?;
        format::expect_eof(&mut r)?;
        WeightScheme::new(n, c, w)
    }
}

/// `total = class + cross + within + diag_cc`.
#[derive(Debug, Clone)]
pub struct MomentDecomposition {
    pub total: Matrix,
    pub class: Matrix,
    pub cross: Matrix,
    pub within: Matrix,
    pub diag_cc: Matrix,
}

impl MomentDecomposition {
    pub fn sum_parts(&self) -> Matrix {
        &self.class + &self.cross + &self.within + &self.diag_cc
    }

    /// `||total - sum(parts)||_F / ||total||_F`.
    pub fn reconstruction_error(&self) -> f64 {
        dense::rel_frobenius_diff(&self.total, &self.sum_parts())
    }

    pub fn part(&self, name: &str) -> Option<&Matrix> {
        match name {
            "total" => Some(&self.total),
            "class" => Some(&self.class),
            "cross" => Some(&self.cross),
            "within" => Some(&self.within),
            "diag_cc" => Some(&self.diag_cc),
            _ => None,
        }
    }

    pub const PART_NAMES: [&'static str; 4] = ["class", "cross", "within", "diag_cc"];
}

/// Weighted means and decomposition of `sum w v v^T`:
///
/// * `g_{c,c'} = sum_i pi[i][c][c'] v[i][c][c']`
/// * `g_c = sum_{c' != c} pi_{c,c'} g_{c,c'}`
/// * class `= sum_c w_c g_c g_c^T`
/// * cross `= sum_c w_c sum_{c' != c} pi_{c,c'} (g_{c,c'} - g_c)(.)^T`
/// * within `= sum_{c,c'} w_{c,c'} sum_i pi[i][c][c'] (v - g_{c,c'})(.)^T`
/// * diag_cc `= sum_c w_{c,c} g_{c,c} g_{c,c}^T`
pub fn weighted_decompose(arr: &CrossClassArray, w: &WeightScheme) -> Result<MomentDecomposition> {
    arr.check_weights(w)?;
    guard_dense("second moment", arr.d)?;
    let (n, nc, d) = (arr.n, arr.c, arr.d);

    let mut blocks = vec![vec![0.0; nc]; nc];
    for (c, row) in blocks.iter_mut().enumerate() {
        for (cp, b) in row.iter_mut().enumerate() {
            *b = w.block(c, cp);
            if c != cp && *b <= ZERO_WEIGHT {
                return Err(Error::ZeroBlockWeight { class: c, cross: cp });
            }
        }
    }

    // g_{c,c'}; blocks with zero weight (only possible on the diagonal) get 0
    let mut g = vec![vec![vec![0.0; d]; nc]; nc];
    for c in 0..nc {
        for cp in 0..nc {
            let b = blocks[c][cp];
            if b <= ZERO_WEIGHT {
                continue;
            }
            for i in 0..n {
                dense::axpy(w.get(i, c, cp) / b, arr.get(i, c, cp), &mut g[c][cp]);
            }
        }
    }

    let wc: Vec<f64> = (0..nc)
        .map(|c| (0..nc).filter(|&cp| cp != c).map(|cp| blocks[c][cp]).sum())
        .collect();
    let gc: Vec<Vec<f64>> = (0..nc)
        .map(|c| {
            let mut m = vec![0.0; d];
            for cp in (0..nc).filter(|&cp| cp != c) {
                dense::axpy(blocks[c][cp] / wc[c], &g[c][cp], &mut m);
            }
            m
        })
        .collect();

    let total = arr.weighted_moment(w)?;
    let class = dense::weighted_gram(d, (0..nc).map(|c| (wc[c], gc[c].as_slice())));

    let cross_dev: Vec<(f64, Vec<f64>)> = (0..nc)
        .flat_map(|c| (0..nc).filter(move |&cp| cp != c).map(move |cp| (c, cp)))
        .map(|(c, cp)| (blocks[c][cp], diff(&g[c][cp], &gc[c])))
        .collect();
    let cross = dense::weighted_gram(d, cross_dev.iter().map(|(x, v)| (*x, v.as_slice())));

    let within_dev: Vec<(f64, Vec<f64>)> = arr
        .indices()
        .map(|(i, c, cp)| (w.get(i, c, cp), diff(arr.get(i, c, cp), &g[c][cp])))
        .collect();
    let within = dense::weighted_gram(d, within_dev.iter().map(|(x, v)| (*x, v.as_slice())));

    let diag_cc = dense::weighted_gram(d, (0..nc).map(|c| (blocks[c][c], g[c][c].as_slice())));

    Ok(MomentDecomposition {
        total,
        class,
        cross,
        within,
        diag_cc,
    })
}

/// Weighted cross-class means `g_{c,c'}` and class means `g_c` (excluding
/// `c' = c`), as used by [`weighted_decompose`].
pub fn weighted_means(
    arr: &CrossClassArray,
    w: &WeightScheme,
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
    arr.check_weights(w)?;
    let (n, nc, d) = (arr.n, arr.c, arr.d);
    let mut g = vec![vec![vec![0.0; d]; nc]; nc];
    for c in 0..nc {
        for cp in 0..nc {
            let b = w.block(c, cp);
            if b <= ZERO_WEIGHT {
                if c != cp {
                    return Err(Error::ZeroBlockWeight { class: c, cross: cp });
                }
                continue;
            }
            for i in 0..n {
                dense::axpy(w.get(i, c, cp) / b, arr.get(i, c, cp), &mut g[c][cp]);
            }
        }
    }
    let mut gc = Vec::with_capacity(nc);
    for c in 0..nc {
        let mut m = vec![0.0; d];
        for cp in (0..nc).filter(|&cp| cp != c) {
            dense::axpy(w.pi_cross(c, cp)?, &g[c][cp], &mut m);
        }
        gc.push(m);
    }
    Ok((g, gc))
}
