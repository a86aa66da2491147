//! Lanczos-based spectrum approximation: the recurrence itself, range
//! normalization, smoothed densities (linear and log), and subspace
//! iteration for deflating leading eigenpairs.

mod density;
mod normalize;
mod recurrence;
mod subspace;
mod tridiag;

pub use density::{
    estimate_spectrum, gaussian, grid, lanczos_approx_spec, log_spec, log_spec_with, probes,
    probes_in_complement,
    sigma, Outlier, SpectrumConfig, SpectrumEstimate, DEFAULT_EPSILON, DEFAULT_K,
    DEFAULT_KAPPA, DEFAULT_LOG_M, DEFAULT_M, DEFAULT_M0, DEFAULT_NVEC, DEFAULT_T, DEFAULT_TAU,
};
pub use normalize::{
    estimate_range, normalization, range_from_start, NormalizationParams, NORMALIZATION_STREAM,
};
pub use recurrence::{
    fast_lanczos, fast_lanczos_from, fast_recurrence, lift_ritz_vectors, slow_lanczos,
    slow_recurrence, start_vector, Recurrence,
};
pub use subspace::{subspace_iteration, EigenPair, EigenvalueRule};
pub use tridiag::{tridiag_eig, tridiag_eigh, TridiagResult};
