//! Property measures and the statistics kernels they share.
//!
//! Every function here is pure. Inputs are validated up front and the
//! failure cases are reported through [`MeasureError`]; nothing silently
//! returns 0 or NaN.

mod dispersion;
mod fd_variance;
mod neighbors;
mod overlap;
mod rank;

pub use dispersion::{
    context_shift, cosine_dispersion, mcv_az, perturbation_robustness, sample_fidelity, DispersionResult,
    FidelityResult, PerturbationResult,
};
pub use fd_variance::{fd_group_variance, FdVarianceResult, Norm};
pub use neighbors::{entity_stability, knn, StabilityResult};
pub use overlap::{
    containment, jaccard, join_correlation, multiset_jaccard, JoinCorrelation, OverlapKind, OverlapPair,
};
pub use rank::{average_ranks, spearman, spearman_with_ties, SpearmanResult};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("{0} contains a non-finite value")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("mean vector is zero; MCV undefined")]
    DegenerateMean,
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("correlation undefined: {0} is constant")]
    Constant(&'static str),
    #[error("no FD group with at least two tuples")]
    NoUsableGroup,
    #[error("key `{0}` not found")]
    MissingKey(String),
    #[error("k = {k} exceeds the {available} available neighbours")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be positive")]
    ZeroK,
}

pub(crate) fn check_finite(v: &[f64], what: &'static str) -> Result<(), MeasureError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MeasureError::NonFinite(what))
    }
}

/// Cosine similarity clamped to `[-1, 1]`.
///
/// Computed as `u·v / sqrt(|u|²|v|²)` so that `cosine(u, u)` is exactly 1.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MeasureError> {
    if u.len() != v.len() {
        return Err(MeasureError::DimMismatch(u.len(), v.len()));
    }
    check_finite(u, "cosine input")?;
    check_finite(v, "cosine input")?;
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(MeasureError::ZeroNorm);
    }
    Ok((uv / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}
