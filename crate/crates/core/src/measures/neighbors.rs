use serde::{Deserialize, Serialize};

use super::{cosine, MeasureError};
use crate::embedding_io::EmbeddingSpace;
use crate::stats::mean;

/// Exact K nearest neighbours of `query` by cosine, query excluded.
/// Equal cosines are ordered by ascending key.
pub fn knn<'a>(space: &'a EmbeddingSpace, query: &str, k: usize) -> Result<Vec<&'a str>, MeasureError> {
    let q = space
        .get(query)
        .ok_or_else(|| MeasureError::MissingKey(query.to_string()))?;
    let available = space.len() - 1;
    if k > available {
        return Err(MeasureError::KTooLarge { k, available });
    }
    let mut scored = Vec::with_capacity(available);
    for (key, v) in space.iter() {
        if key != query {
            scored.push((cosine(q, v)?, key));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, key)| key).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub mean: f64,
    pub per_query: Vec<f64>,
}

/// Average fraction of shared K nearest neighbours across two spaces.
pub fn entity_stability(
    s1: &EmbeddingSpace,
    s2: &EmbeddingSpace,
    queries: &[&str],
    k: usize,
) -> Result<StabilityResult, MeasureError> {
    if k == 0 {
        return Err(MeasureError::ZeroK);
    }
    if queries.is_empty() {
        return Err(MeasureError::Empty("query list"));
    }
    let per_query = queries
        .iter()
        .map(|q| {
            let a = knn(s1, q, k)?;
            let b = knn(s2, q, k)?;
            let shared = a.iter().filter(|x| b.contains(x)).count();
            Ok(shared as f64 / k as f64)
        })
        .collect::<Result<Vec<_>, MeasureError>>()?;
    Ok(StabilityResult {
        mean: mean(&per_query),
        per_query,
    })
}
