//! Random test matrices with known spectral structure.

use rand::Rng as _;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::rng::{normal_vec, stream};

/// Gaussian orthogonal ensemble scaled so the semicircle sits on `[-2, 2]`.
pub fn goe(n: usize, seed: u64) -> Matrix {
    let mut rng = stream(seed, 0);
    let g = Matrix::from_row_slice(n, n, &normal_vec(&mut rng, n * n));
    (&g + g.transpose()) / (2.0 * n as f64).sqrt()
}

/// `X + Z Z^T / n` with `Z` an `n x n` standard Gaussian matrix and `X`
/// diagonal with the given spikes in its leading entries.
pub fn spiked_wishart(n: usize, spikes: &[f64], seed: u64) -> Result<Matrix> {
    if spikes.len() > n {
        return Err(Error::invalid("more spikes than dimensions"));
    }
    let mut rng = stream(seed, 0);
    let z = Matrix::from_row_slice(n, n, &normal_vec(&mut rng, n * n));
    let mut y = &z * z.transpose() / n as f64;
    for (i, s) in spikes.iter().enumerate() {
        y[(i, i)] += s;
    }
    crate::dense::symmetrize(&mut y);
    Ok(y)
}

/// `Z Z^T / n` with `Z` a `p x n` matrix of i.i.d. Pareto(`alpha`) entries
/// (scale 1). The spectral density has a power-law tail.
pub fn pareto_wishart(p: usize, n: usize, alpha: f64, seed: u64) -> Result<Matrix> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("Pareto index must be positive"));
    }
    let mut rng = stream(seed, 0);
    let data: Vec<f64> = (0..p * n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            u.powf(-1.0 / alpha)
        })
        .collect();
    let z = Matrix::from_row_slice(p, n, &data);
    let mut y = &z * z.transpose() / n as f64;
    crate::dense::symmetrize(&mut y);
    Ok(y)
}
