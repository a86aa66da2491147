//! Spectral attribution by knockouts: remove a candidate matrix `B` from `A`
//! by subtraction or by projecting out its column space, then compare the
//! spectra before and after.

use std::path::Path;

use serde::Serialize;

use crate::dense::{self, Matrix};
use crate::error::{check_dim, Error, Result};
use crate::svg::Plot;

/// Singular values below `RANK_TOL * s_max` do not count towards the column
/// space of a knockout target.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KnockoutKind {
    Subtract,
    Project,
}

#[derive(Debug, Clone)]
pub struct KnockoutSpec {
    pub kind: KnockoutKind,
    pub target: Matrix,
}

impl KnockoutSpec {
    pub fn subtract(target: Matrix) -> Self {
        KnockoutSpec {
            kind: KnockoutKind::Subtract,
            target,
        }
    }

    pub fn project(target: Matrix) -> Self {
        KnockoutSpec {
            kind: KnockoutKind::Project,
            target,
        }
    }

    pub fn apply(&self, a: &Matrix) -> Result<Matrix> {
        match self.kind {
            KnockoutKind::Subtract => subtract_knockout(a, &self.target),
            KnockoutKind::Project => project_knockout(a, &self.target),
        }
    }
}

fn is_symmetric(m: &Matrix) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (i + 1..m.ncols()).all(|j| m[(i, j)] == m[(j, i)]))
}

/// `A - B`.
pub fn subtract_knockout(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_dim(a.nrows(), b.nrows())?;
    check_dim(a.ncols(), b.ncols())?;
    Ok(a - b)
}

/// `(I - U U^T) A (I - V V^T)` where `U`, `V` span the left and right singular
/// subspaces of `B`. For square symmetric `B` both are its column space and
/// the result is symmetrized.
pub fn project_knockout(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_dim(a.nrows(), b.nrows())?;
    check_dim(a.ncols(), b.ncols())?;
    dense::guard_dense("knockout target", b.nrows().max(b.ncols()))?;
    let (u, v) = dense::singular_bases(b, RANK_TOL)?;
    if is_symmetric(b) {
        let mut out = project_both(a, &u, &u);
        dense::symmetrize(&mut out);
        Ok(out)
    } else {
        Ok(project_both(a, &u, &v))
    }
}

fn project_both(a: &Matrix, u: &Matrix, v: &Matrix) -> Matrix {
    let mut x = a.clone();
    if u.ncols() > 0 {
        x -= u * (u.transpose() * &x);
    }
    if v.ncols() > 0 {
        let xv = &x * v;
        x -= xv * v.transpose();
    }
    x
}

/// Descending eigenvalues for symmetric input, singular values otherwise.
pub fn descending_spectrum(m: &Matrix) -> Result<Vec<f64>> {
    if is_symmetric(m) {
        let mut ev = dense::sym_eigvals(m);
        ev.reverse();
        Ok(ev)
    } else {
        dense::singular_values(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    /// 1-based rank in the descending spectrum.
    pub rank: usize,
    pub before: f64,
    pub after: f64,
    pub is_top_c: bool,
}

/// Rank-paired spectra before and after a knockout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionScatter {
    pub points: Vec<ScatterPoint>,
    pub c: usize,
}

impl AttributionScatter {
    /// Pairs the two descending spectra by rank and flags the top `c`.
    pub fn from_spectra(before: &[f64], after: &[f64], top_k: usize, c: usize) -> Result<Self> {
        if top_k > before.len() || top_k > after.len() {
            return Err(Error::invalid(format!(
                "top_k = {top_k} exceeds the spectrum length {}",
                before.len().min(after.len())
            )));
        }
        let points = (0..top_k)
            .map(|i| ScatterPoint {
                rank: i + 1,
                before: before[i],
                after: after[i],
                is_top_c: i < c,
            })
            .collect();
        Ok(AttributionScatter { points, c })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Replaces every value `x` by `ln(max(x, floor))`.
    pub fn log_values(&self, floor: f64) -> Self {
        let f = |x: f64| x.max(floor).ln();
        AttributionScatter {
            points: self
                .points
                .iter()
                .map(|p| ScatterPoint {
                    before: f(p.before),
                    after: f(p.after),
                    ..p.clone()
                })
                .collect(),
            c: self.c,
        }
    }

    /// Both axes mapped affinely so their minimum is 0 and maximum is 1.
    pub fn normalized(&self) -> Vec<(f64, f64)> {
        let xs: Vec<f64> = self.points.iter().map(|p| p.before).collect();
        let ys: Vec<f64> = self.points.iter().map(|p| p.after).collect();
        normalize_unit(&xs).into_iter().zip(normalize_unit(&ys)).collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "lambda_before", "lambda_after", "is_top_C"])?;
        for p in &self.points {
            w.write_record([
                p.rank.to_string(),
                format!("{:?}", p.before),
                format!("{:?}", p.after),
                p.is_top_c.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format("short scatter row".into()));
            let parse_f = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(e.to_string()));
            points.push(ScatterPoint {
                rank: field(0)?.parse().map_err(|e: std::num::ParseIntError| Error::Format(e.to_string()))?,
                before: parse_f(field(1)?)?,
                after: parse_f(field(2)?)?,
                is_top_c: field(3)? == "true",
            });
        }
        let c = points.iter().filter(|p| p.is_top_c).count();
        Ok(AttributionScatter { points, c })
    }

    /// Normalized scatter with the identity line; top-C points in blue.
    pub fn to_svg(&self, title: &str) -> String {
        let norm = self.normalized();
        let (top, rest): (Vec<_>, Vec<_>) = norm
            .iter()
            .zip(&self.points)
            .partition(|(_, p)| p.is_top_c);
        Plot::new(title, "before knockout (normalized)", "after knockout (normalized)")
            .line(vec![(0.0, 0.0), (1.0, 1.0)], "black")
            .points(rest.into_iter().map(|(xy, _)| *xy).collect(), "darkorange")
            .points(top.into_iter().map(|(xy, _)| *xy).collect(), "royalblue")
            .render()
    }
}

fn normalize_unit(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Spectra of `A` and of `A` after the knockout, paired by rank.
pub fn attribution_scatter(
    a: &Matrix,
    spec: &KnockoutSpec,
    top_k: usize,
    c: usize,
) -> Result<AttributionScatter> {
    let dim = a.nrows().min(a.ncols());
    if top_k > dim {
        return Err(Error::invalid(format!("top_k = {top_k} exceeds dimension {dim}")));
    }
    let after = spec.apply(a)?;
    AttributionScatter::from_spectra(&descending_spectrum(a)?, &descending_spectrum(&after)?, top_k, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream};

    fn random_psd(n: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed, 0);
        let x = Matrix::from_row_slice(n, 2 * n, &normal_vec(&mut rng, 2 * n * n));
        let mut m = &x * x.transpose() / (2 * n) as f64;
        dense::symmetrize(&mut m);
        m
    }

    #[test]
    fn subtraction_basics() {
        let a = random_psd(5, 1);
        let z = Matrix::zeros(5, 5);
        assert_eq!(subtract_knockout(&a, &z).unwrap(), a);
        assert_eq!(subtract_knockout(&a, &a).unwrap().norm(), 0.0);
        let d = subtract_knockout(&a, &random_psd(5, 2)).unwrap();
        assert_eq!(d, d.transpose());
        assert!(subtract_knockout(&a, &Matrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn projecting_full_rank_self_gives_zero() {
        let a = random_psd(6, 3);
        assert!(project_knockout(&a, &a).unwrap().norm() < 1e-12);
    }

    #[test]
    fn projecting_spike_direction() {
        let n = 8;
        let noise = random_psd(n, 4);
        let mut rng = stream(5, 0);
        let mut u = normal_vec(&mut rng, n);
        let un = dense::norm2(&u);
        u.iter_mut().for_each(|x| *x /= un);
        let mut b = Matrix::zeros(n, n);
        dense::add_outer(&mut b, 1.0, &u);
        let mut a = noise.clone();
        dense::add_outer(&mut a, 5.0, &u);
        let got = project_knockout(&a, &b).unwrap();
        let p = Matrix::identity(n, n) - &b;
        let want = &p * &noise * &p;
        assert!(dense::rel_frobenius_diff(&want, &got) < 1e-12);
    }

    #[test]
    fn projection_is_idempotent() {
        let a = random_psd(10, 6);
        let x = Matrix::from_row_slice(10, 3, &normal_vec(&mut stream(7, 0), 30));
        let mut b = &x * x.transpose();
        dense::symmetrize(&mut b);
        let once = project_knockout(&a, &b).unwrap();
        let twice = project_knockout(&once, &b).unwrap();
        assert!(dense::rel_frobenius_diff(&once, &twice) < 1e-12);
    }

    #[test]
    fn interlacing_for_psd() {
        let a = random_psd(12, 8);
        let x = Matrix::from_row_slice(12, 2, &normal_vec(&mut stream(9, 0), 24));
        let mut b = &x * x.transpose();
        dense::symmetrize(&mut b);
        let before = descending_spectrum(&a).unwrap();
        let after = descending_spectrum(&project_knockout(&a, &b).unwrap()).unwrap();
        for i in 0..10 {
            assert!(before[i + 2] <= after[i] + 1e-10);
            assert!(after[i] <= before[i] + 1e-10);
        }
    }

    #[test]
    fn rectangular_uses_both_singular_bases() {
        let mut rng = stream(10, 0);
        let a = Matrix::from_row_slice(6, 4, &normal_vec(&mut rng, 24));
        let u = Matrix::from_row_slice(6, 1, &normal_vec(&mut rng, 6));
        let v = Matrix::from_row_slice(1, 4, &normal_vec(&mut rng, 4));
        let b = &u * &v;
        let got = project_knockout(&a, &b).unwrap();
        let un = u.normalize();
        let vn = v.transpose().normalize();
        let want = (Matrix::identity(6, 6) - &un * un.transpose()) * &a * (Matrix::identity(4, 4) - &vn * vn.transpose());
        assert!(dense::rel_frobenius_diff(&want, &got) < 1e-12);
        let s = attribution_scatter(&a, &KnockoutSpec::project(b), 3, 1).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn zero_knockout_lies_on_identity() {
        let a = random_psd(7, 11);
        let s = attribution_scatter(&a, &KnockoutSpec::subtract(Matrix::zeros(7, 7)), 7, 2).unwrap();
        assert_eq!(s.len(), 7);
        for p in &s.points {
            assert_eq!(p.before, p.after);
        }
        assert_eq!(s.points.iter().filter(|p| p.is_top_c).count(), 2);
        assert!(attribution_scatter(&a, &KnockoutSpec::subtract(Matrix::zeros(7, 7)), 8, 2).is_err());
    }

    #[test]
    fn normalization_maps_to_unit_interval() {
        let s = AttributionScatter::from_spectra(&[4.0, 2.0, 1.0], &[3.0, 3.0, 0.0], 3, 1).unwrap();
        assert_eq!(s.normalized(), vec![(1.0, 1.0), (1.0 / 3.0, 1.0), (0.0, 0.0)]);
    }

    #[test]
    fn csv_roundtrip_and_svg() {
        let s = AttributionScatter::from_spectra(&[4.0, 2.0, 1.0], &[0.1, 2.0, 1.0], 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        s.save_csv(&p).unwrap();
        assert_eq!(AttributionScatter::load_csv(&p).unwrap(), s);
        let text = s.to_csv_string().unwrap();
        assert!(text.starts_with("rank,lambda_before,lambda_after,is_top_C\n1,4.0,0.1,true"));
        assert!(s.to_svg("t").contains("<circle"));
    }
}
