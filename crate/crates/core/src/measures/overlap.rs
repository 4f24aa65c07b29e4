use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::rank::spearman_with_ties;
use super::MeasureError;
use crate::table::{cell_key, ColumnRef};

/// Value-overlap measure between a query and a candidate column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapKind {
    Containment,
    Jaccard,
    MultisetJaccard,
}

impl OverlapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OverlapKind::Containment => "containment",
            OverlapKind::Jaccard => "jaccard",
            OverlapKind::MultisetJaccard => "multiset_jaccard",
        }
    }
}

fn value_set<S: AsRef<str>>(cells: &[S]) -> BTreeSet<&str> {
    cells
        .iter()
        .map(|c| cell_key(c.as_ref()))
        .filter(|c| !c.is_empty())
        .collect()
}

fn value_counts<S: AsRef<str>>(cells: &[S]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for c in cells {
        let k = cell_key(c.as_ref());
        if !k.is_empty() {
            *m.entry(k).or_default() += 1;
        }
    }
    m
}

/// `|Q ∩ C| / |Q|` over distinct non-empty values.
pub fn containment<S: AsRef<str>>(query: &[S], candidate: &[S]) -> Result<f64, MeasureError> {
    let q = value_set(query);
    if q.is_empty() {
        return Err(MeasureError::Empty("query column"));
    }
    let c = value_set(candidate);
    Ok(q.intersection(&c).count() as f64 / q.len() as f64)
}

/// `|Q ∩ C| / |Q ∪ C|` over distinct non-empty values.
pub fn jaccard<S: AsRef<str>>(query: &[S], candidate: &[S]) -> Result<f64, MeasureError> {
    let q = value_set(query);
    let c = value_set(candidate);
    let union = q.union(&c).count();
    if union == 0 {
        return Err(MeasureError::Empty("both columns"));
    }
    Ok(q.intersection(&c).count() as f64 / union as f64)
}

/// Multiset intersection (minimum counts) over `|Q| + |C|`; at most 0.5.
pub fn multiset_jaccard<S: AsRef<str>>(query: &[S], candidate: &[S]) -> Result<f64, MeasureError> {
    let q = value_counts(query);
    let c = value_counts(candidate);
    let total: usize = q.values().sum::<usize>() + c.values().sum::<usize>();
    if total == 0 {
        return Err(MeasureError::Empty("both columns"));
    }
    let inter: usize = q.iter().filter_map(|(k, &n)| c.get(k).map(|&m| n.min(m))).sum();
    Ok(inter as f64 / total as f64)
}

/// One (query, candidate) column pair with its overlap values and embedding
/// cosine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub query: ColumnRef,
    pub candidate: ColumnRef,
    pub r_containment: f64,
    pub r_jaccard: f64,
    pub r_multiset_jaccard: f64,
    pub m_cosine: f64,
}

impl OverlapPair {
    /// Computes all three overlap measures from the raw cells.
    pub fn from_values<S: AsRef<str>>(
        query: ColumnRef,
        candidate: ColumnRef,
        q_values: &[S],
        c_values: &[S],
        m_cosine: f64,
    ) -> Result<Self, MeasureError> {
        Ok(Self {
            query,
            candidate,
            r_containment: containment(q_values, c_values)?,
            r_jaccard: jaccard(q_values, c_values)?,
            r_multiset_jaccard: multiset_jaccard(q_values, c_values)?,
            m_cosine,
        })
    }

    pub fn overlap(&self, kind: OverlapKind) -> f64 {
        match kind {
            OverlapKind::Containment => self.r_containment,
            OverlapKind::Jaccard => self.r_jaccard,
            OverlapKind::MultisetJaccard => self.r_multiset_jaccard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinCorrelation {
    pub rho: f64,
    pub n: usize,
    /// Whether average ranks were needed for either variable.
    pub ties: bool,
}

/// Spearman correlation between embedding cosine and the chosen overlap.
pub fn join_correlation(pairs: &[OverlapPair], kind: OverlapKind) -> Result<JoinCorrelation, MeasureError> {
    let xy: Vec<(f64, f64)> = pairs.iter().map(|p| (p.m_cosine, p.overlap(kind))).collect();
    let r = spearman_with_ties(&xy)?;
    Ok(JoinCorrelation {
        rho: r.rho,
        n: pairs.len(),
        ties: r.ties,
    })
}
