use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_finite, cosine, MeasureError};
use crate::stats::{mean, pairwise_sum, summarize, FiveNumber};
use crate::variants::ContextSetting;

fn check_observations<V: AsRef<[f64]>>(obs: &[V]) -> Result<usize, MeasureError> {
    if obs.len() < 2 {
        return Err(MeasureError::TooFew {
            need: 2,
            got: obs.len(),
        });
    }
    let dim = obs[0].as_ref().len();
    if dim == 0 {
        return Err(MeasureError::Empty("observation vector"));
    }
    for o in obs {
        let o = o.as_ref();
        if o.len() != dim {
            return Err(MeasureError::DimMismatch(dim, o.len()));
        }
        check_finite(o, "observation")?;
    }
    Ok(dim)
}

/// Albert and Zhang's multivariate coefficient of variation
/// `sqrt(μᵀΣμ / (μᵀμ)²)` with the sample covariance (n − 1 denominator).
///
/// Σ is never materialised: `μᵀΣμ = Σᵢ (μᵀ(xᵢ − μ))² / (n − 1)`, which also
/// works when Σ is singular. The mean is accumulated as offsets from the
/// first observation, so identical observations give exactly 0.
pub fn mcv_az<V: AsRef<[f64]>>(obs: &[V]) -> Result<f64, MeasureError> {
    let dim = check_observations(obs)?;
    let n = obs.len();
    let base = obs[0].as_ref();
    let mut mu = vec![0.0; dim];
    let mut column = vec![0.0; n];
    for (d, m) in mu.iter_mut().enumerate() {
        for (slot, o) in column.iter_mut().zip(obs) {
            *slot = o.as_ref()[d] - base[d];
        }
        *m = base[d] + mean(&column);
    }
    let mu_sq = pairwise_sum(&mu.iter().map(|m| m * m).collect::<Vec<_>>());
    if mu_sq == 0.0 {
        return Err(MeasureError::DegenerateMean);
    }
    let proj_sq: Vec<f64> = obs
        .iter()
        .map(|o| {
            let p: f64 = o.as_ref().iter().zip(&mu).map(|(x, m)| m * (x - m)).sum();
            p * p
        })
        .collect();
    let quad = pairwise_sum(&proj_sq) / (n - 1) as f64;
    Ok((quad / (mu_sq * mu_sq)).sqrt())
}

/// Cosines of every variant against variant 0, plus the MCV of the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionResult {
    pub n: usize,
    pub mcv: f64,
    pub cosines: Vec<f64>,
    pub summary: FiveNumber,
}

pub fn cosine_dispersion<V: AsRef<[f64]>>(series: &[V]) -> Result<DispersionResult, MeasureError> {
    check_observations(series)?;
    let reference = series[0].as_ref();
    let cosines = series[1..]
        .iter()
        .map(|v| cosine(reference, v.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DispersionResult {
        n: series.len(),
        mcv: mcv_az(series)?,
        summary: summarize(&cosines)?,
        cosines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub mean_cos: f64,
    pub mcv: f64,
    pub cosines: Vec<f64>,
}

/// Mean cosine of each sample embedding against the full-column embedding,
/// and the MCV of `{full} ∪ samples`.
pub fn sample_fidelity<V: AsRef<[f64]>>(full: &[f64], samples: &[V]) -> Result<FidelityResult, MeasureError> {
    if samples.is_empty() {
        return Err(MeasureError::Empty("sample set"));
    }
    let cosines = samples
        .iter()
        .map(|s| cosine(full, s.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut all: Vec<&[f64]> = Vec::with_capacity(samples.len() + 1);
    all.push(full);
    all.extend(samples.iter().map(AsRef::as_ref));
    Ok(FidelityResult {
        mean_cos: mean(&cosines),
        mcv: mcv_az(&all)?,
        cosines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    /// Mean over every (original, perturbed) pair.
    pub overall_mean: f64,
    /// Mean cosine per original, in input order.
    pub per_original: Vec<f64>,
}

/// Robustness of column embeddings to semantics-preserving perturbations.
///
/// Each entry pairs an original embedding with the embeddings of its
/// perturbed variants.
pub fn perturbation_robustness<V: AsRef<[f64]>>(groups: &[(V, Vec<V>)]) -> Result<PerturbationResult, MeasureError> {
    if groups.is_empty() {
        return Err(MeasureError::Empty("perturbation set"));
    }
    let mut per_original = Vec::with_capacity(groups.len());
    let mut all = Vec::new();
    for (orig, variants) in groups {
        if variants.is_empty() {
            return Err(MeasureError::Empty("perturbed variant list"));
        }
        let cos = variants
            .iter()
            .map(|v| cosine(orig.as_ref(), v.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        per_original.push(mean(&cos));
        all.extend(cos);
    }
    Ok(PerturbationResult {
        overall_mean: mean(&all),
        per_original,
    })
}

/// Cosine of the single-column embedding against each contextual one.
/// Setting (a) is 1 by definition.
pub fn context_shift(
    single: &[f64],
    by_setting: &BTreeMap<ContextSetting, Vec<f64>>,
) -> Result<BTreeMap<ContextSetting, f64>, MeasureError> {
    let mut out = BTreeMap::new();
    out.insert(ContextSetting::ColumnOnly, 1.0);
    for (&s, v) in by_setting {
        if s != ContextSetting::ColumnOnly {
            out.insert(s, cosine(single, v)?);
        }
    }
    Ok(out)
}
