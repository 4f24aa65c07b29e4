//! Measurement variants: permutations, uniform row samples, context settings
//! and header perturbations.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{subject_column_proxy, Table, TableError};

#[derive(Debug, Error, PartialEq)]
pub enum VariantError {
    #[error("permutation of length {len} is not a bijection on 0..{expected}")]
    NotBijective { len: usize, expected: usize },
    #[error("could not draw {budget} distinct permutations of {n} items after {attempts} attempts")]
    RetriesExhausted { n: usize, budget: usize, attempts: usize },
    #[error("sample ratio {0} outside (0, 1]")]
    Ratio(f64),
    #[error("cannot sample from an empty sequence")]
    EmptySample,
    #[error("{0} requires n >= 1 and budget >= 1")]
    Degenerate(&'static str),
    #[error("table `{0}` has no headers to perturb")]
    NoHeaders(String),
    #[error("synonym_map perturbation needs a map")]
    MissingSynonymMap,
    #[error("plan for `{table_id}` expects axis length {expected}, table has {found}")]
    PlanMismatch {
        table_id: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Column,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Row => "row",
            Axis::Column => "column",
        }
    }
}

/// Seeded, duplicate-free permutations of one table axis. Variant 0 is the
/// identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub table_id: String,
    pub axis: Axis,
    pub seed: u64,
    #[serde(rename = "perms")]
    pub permutations: Vec<Vec<usize>>,
}

impl PermutationPlan {
    /// Plan for `table` along `axis`.
    pub fn for_table(table: &Table, axis: Axis, budget: usize, seed: u64) -> Result<Self, VariantError> {
        let n = axis_len(table, axis);
        Ok(Self {
            table_id: table.id().to_string(),
            axis,
            seed,
            permutations: sample_permutations(n, budget, seed)?,
        })
    }

    pub fn len(&self) -> usize {
        self.permutations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutations.is_empty()
    }

    /// Applies variant `i` of the plan to `table`.
    pub fn apply(&self, table: &Table, i: usize) -> Result<Table, VariantError> {
        let n = axis_len(table, self.axis);
        let perm = &self.permutations[i];
        if perm.len() != n {
            return Err(VariantError::PlanMismatch {
                table_id: self.table_id.clone(),
                expected: perm.len(),
                found: n,
            });
        }
        apply_permutation(table, self.axis, perm, i)
    }
}

fn axis_len(table: &Table, axis: Axis) -> usize {
    match axis {
        Axis::Row => table.nrows(),
        Axis::Column => table.ncols(),
    }
}

/// `n!` if it does not exceed `cap`, else `None`.
fn factorial_capped(n: usize, cap: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for k in 2..=n {
        acc = acc.checked_mul(k).filter(|&v| v <= cap)?;
    }
    Some(acc)
}

/// In-place lexicographic successor; false once `p` is the last permutation.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = p.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = p.iter().rposition(|&x| x > p[i]).expect("pivot has a successor");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// Up to `budget` distinct permutations of `0..n`, identity first.
///
/// When `n! <= budget` every permutation is returned in lexicographic order.
/// Otherwise the identity is followed by `budget - 1` distinct non-identity
/// shuffles drawn from a ChaCha8 stream seeded with `seed`.
pub fn sample_permutations(n: usize, budget: usize, seed: u64) -> Result<Vec<Vec<usize>>, VariantError> {
    if n == 0 || budget == 0 {
        return Err(VariantError::Degenerate("sample_permutations"));
    }
    let identity: Vec<usize> = (0..n).collect();
    if factorial_capped(n, budget).is_some() {
        let mut out = vec![identity.clone()];
        let mut p = identity;
        while next_permutation(&mut p) {
            out.push(p.clone());
        }
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(budget);
    seen.insert(identity.clone());
    let mut out = Vec::with_capacity(budget);
    out.push(identity.clone());
    let max_attempts = budget.saturating_mul(1000);
    let mut attempts = 0;
    while out.len() < budget {
        if attempts == max_attempts {
            return Err(VariantError::RetriesExhausted { n, budget, attempts });
        }
        attempts += 1;
        let mut p = identity.clone();
        p.shuffle(&mut rng);
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

fn check_bijection(perm: &[usize], n: usize) -> Result<(), VariantError> {
    let err = || VariantError::NotBijective {
        len: perm.len(),
        expected: n,
    };
    if perm.len() != n {
        return Err(err());
    }
    let mut seen = vec![false; n];
    for &i in perm {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(err());
        }
    }
    Ok(())
}

/// Inverse of a bijection.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Reorders `table` so that position `i` holds original index `perm[i]`.
///
/// The result id is `<id>#<axis>-<variant>`.
pub fn apply_permutation(table: &Table, axis: Axis, perm: &[usize], variant: usize) -> Result<Table, VariantError> {
    check_bijection(perm, axis_len(table, axis))?;
    let id = format!("{}#{}-{}", table.id(), axis.as_str(), variant);
    let t = match axis {
        Axis::Row => Table::new(
            id,
            table.headers().map(<[String]>::to_vec),
            perm.iter().map(|&r| table.rows()[r].clone()).collect(),
        )?,
        Axis::Column => table.project(perm, id)?,
    };
    Ok(t)
}

/// Uniform sample without replacement of `max(1, floor(ratio * n))` values,
/// kept in their original relative order.
pub fn sample_rows<T: Clone>(values: &[T], ratio: f64, seed: u64) -> Result<Vec<T>, VariantError> {
    Ok(sample_row_indices(values.len(), ratio, seed)?
        .into_iter()
        .map(|i| values[i].clone())
        .collect())
}

/// Sorted indices chosen by [`sample_rows`].
pub fn sample_row_indices(n: usize, ratio: f64, seed: u64) -> Result<Vec<usize>, VariantError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(VariantError::Ratio(ratio));
    }
    if n == 0 {
        return Err(VariantError::EmptySample);
    }
    let k = ((ratio * n as f64).floor() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// The four input settings for contextual column embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSetting {
    /// (a) the column alone
    ColumnOnly,
    /// (b) subject column (or its proxy) plus the column
    SubjectColumn,
    /// (c) immediate neighbours on both sides
    Neighbors,
    /// (d) the whole table
    EntireTable,
}

impl ContextSetting {
    pub const ALL: [ContextSetting; 4] = [
        ContextSetting::ColumnOnly,
        ContextSetting::SubjectColumn,
        ContextSetting::Neighbors,
        ContextSetting::EntireTable,
    ];

    /// Position in `ALL`; used as the variant id in embedding files.
    pub fn ordinal(self) -> u32 {
        self as u32
    }

    pub fn from_ordinal(i: u32) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextSetting::ColumnOnly => "column_only",
            ContextSetting::SubjectColumn => "subject_column",
            ContextSetting::Neighbors => "neighbors",
            ContextSetting::EntireTable => "entire_table",
        }
    }
}

/// One context setting materialised as a table.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVariant {
    pub table: Table,
    /// Original column indices, in the order they appear in `table`.
    pub columns: Vec<usize>,
    /// Position of the target column inside `table`.
    pub target: usize,
}

/// Column lists of each available setting for target column `c`.
///
/// Setting (b) is absent when there is no textual column or the target is
/// itself the subject proxy.
pub fn context_columns(t: &Table, c: usize) -> Result<BTreeMap<ContextSetting, Vec<usize>>, VariantError> {
    t.check_col(c)?;
    let mut out = BTreeMap::new();
    out.insert(ContextSetting::ColumnOnly, vec![c]);
    if let Some(s) = subject_column_proxy(t).filter(|&s| s != c) {
        out.insert(ContextSetting::SubjectColumn, vec![s, c]);
    }
    let lo = c.saturating_sub(1);
    let hi = (c + 1).min(t.ncols() - 1);
    out.insert(ContextSetting::Neighbors, (lo..=hi).collect());
    out.insert(ContextSetting::EntireTable, (0..t.ncols()).collect());
    Ok(out)
}

/// Materialises every available setting of [`context_columns`].
pub fn context_variants(t: &Table, c: usize) -> Result<BTreeMap<ContextSetting, ContextVariant>, VariantError> {
    context_columns(t, c)?
        .into_iter()
        .map(|(setting, columns)| {
            let table = t.project(&columns, format!("{}#ctx-{}-{}", t.id(), setting.as_str(), c))?;
            let target = columns.iter().position(|&x| x == c).expect("target included");
            Ok((setting, ContextVariant { table, columns, target }))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Abbreviate,
    SynonymMap,
}

fn is_vowel(c: char) -> bool {
    matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Drops vowels after the first character of every alphanumeric run.
pub fn abbreviate(header: &str) -> String {
    let mut out = String::with_capacity(header.len());
    let mut at_token_start = true;
    for ch in header.chars() {
        if ch.is_alphanumeric() {
            if at_token_start || !is_vowel(ch) {
                out.push(ch);
            }
            at_token_start = false;
        } else {
            out.push(ch);
            at_token_start = true;
        }
    }
    out
}

/// Schema-level perturbation of the header row; data cells are untouched.
pub fn perturb_headers(
    t: &Table,
    mode: PerturbMode,
    map: Option<&BTreeMap<String, String>>,
) -> Result<Table, VariantError> {
    let headers = t.headers().ok_or_else(|| VariantError::NoHeaders(t.id().to_string()))?;
    let new: Vec<String> = match mode {
        PerturbMode::Abbreviate => headers.iter().map(|h| abbreviate(h)).collect(),
        PerturbMode::SynonymMap => {
            let map = map.ok_or(VariantError::MissingSynonymMap)?;
            headers
                .iter()
                .map(|h| map.get(h).cloned().unwrap_or_else(|| h.clone()))
                .collect()
        }
    };
    Ok(t.with_headers(new)?)
}
