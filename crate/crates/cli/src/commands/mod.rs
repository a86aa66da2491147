pub mod attribute;
pub mod ccm_verify;
pub mod decompose;
pub mod kfac_compare;
pub mod spectrum;
pub mod train;

use serde::Serialize;
use spectrascope::knockout::descending_spectrum;
use spectrascope::Matrix;

/// Leading `k` eigenvalues (or singular values) in descending order.
pub fn top_values(m: &Matrix, k: usize) -> spectrascope::Result<Vec<f64>> {
    let mut v = descending_spectrum(m)?;
    v.truncate(k);
    Ok(v)
}

pub fn trace(m: &Matrix) -> f64 {
    m.diagonal().iter().sum()
}

#[derive(Debug, Serialize)]
pub struct RankValue<'a> {
    pub name: &'a str,
    pub rank: usize,
    pub value: f64,
}

/// Long-format rows `name, rank, value` for a named spectrum.
pub fn ranked<'a>(name: &'a str, values: &[f64]) -> Vec<RankValue<'a>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &value)| RankValue {
            name,
            rank: i + 1,
            value,
        })
        .collect()
}
