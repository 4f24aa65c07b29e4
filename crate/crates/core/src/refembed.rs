//! Deterministic feature-hashing embedders.
//!
//! `ref-cf` embeds every column, row, cell or table from its own tokens only,
//! so its column embeddings are exactly invariant under any reordering of
//! rows or of other columns. `ref-ctx` mixes in neighbouring columns (and
//! neighbouring rows / cells) and is therefore order-sensitive. Both give the
//! measures an analytically known ground truth without a neural model.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{Table, TableError};
use crate::variants::{context_columns, ContextSetting, VariantError};

/// Hash probes per token.
pub const PROBES: u8 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("no tokens to embed for {0}")]
    NoTokens(String),
    #[error("context setting {0:?} is not available for this column")]
    AbsentSetting(ContextSetting),
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Variant(#[from] VariantError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub seed: u64,
    /// Weight of the target itself in context-mixing embeddings.
    pub alpha: f64,
    pub token_budget: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            seed: 42,
            alpha: 0.5,
            token_budget: 512,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < 2 {
            return Err(EmbedError::Config(format!("dim {} < 2", self.dim)));
        }
        if self.token_budget == 0 {
            return Err(EmbedError::Config("token_budget must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(EmbedError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(cell: &str) -> Vec<String> {
    cell.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn probe_hash(token: &str, probe: u8, seed: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.write(&[probe]);
    h.write(&seed.to_le_bytes());
    h.finish()
}

/// Signed feature hashing of one token, L2-normalised.
///
/// Each probe `i` hashes `token ‖ i ‖ seed_le` with FNV-1a and adds
/// `(-1)^(h mod 2)` at `(h / 2) mod dim`. Probes beyond [`PROBES`] are only
/// taken in the rare case where the first ones cancel to zero.
pub fn embed_token(token: &str, cfg: &EmbedderConfig) -> Vec<f64> {
    let mut v = vec![0.0; cfg.dim];
    let mut probe: u8 = 0;
    loop {
        let h = probe_hash(token, probe, cfg.seed);
        let sign = if h.is_multiple_of(2) { 1.0 } else { -1.0 };
        v[((h / 2) % cfg.dim as u64) as usize] += sign;
        probe = probe.wrapping_add(1);
        if probe >= PROBES && v.iter().any(|&x| x != 0.0) {
            break;
        }
    }
    normalize(v).expect("nonzero by construction")
}

/// `v / ‖v‖₂`, or `None` for a zero vector.
pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// Mean of the token embeddings of the first `token_budget` tokens, then
/// L2-normalised.
///
/// Tokens are aggregated by count in sorted order, so the result does not
/// depend on the order in which tokens were supplied (within the budget).
pub fn embed_tokens<I, S>(tokens: I, cfg: &EmbedderConfig, what: &str) -> Result<Vec<f64>, EmbedError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for tok in tokens.into_iter().take(cfg.token_budget) {
        *counts.entry(tok.as_ref().to_string()).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(EmbedError::NoTokens(what.to_string()));
    }
    let mut sum = vec![0.0; cfg.dim];
    for (tok, n) in &counts {
        let e = embed_token(tok, cfg);
        let w = *n as f64;
        sum.iter_mut().zip(&e).for_each(|(s, x)| *s += w * x);
    }
    let mean: Vec<f64> = sum.into_iter().map(|s| s / total as f64).collect();
    normalize(mean).ok_or_else(|| EmbedError::NoTokens(format!("{what} (tokens cancel)")))
}

fn cell_tokens<'a>(cells: impl IntoIterator<Item = &'a str>) -> impl Iterator<Item = String> {
    cells.into_iter().flat_map(tokenize)
}

/// Context-free column embedding: header tokens, then cell tokens.
pub fn embed_column_cf<S: AsRef<str>>(
    values: &[S],
    header: Option<&str>,
    cfg: &EmbedderConfig,
) -> Result<Vec<f64>, EmbedError> {
    let tokens = header
        .map(tokenize)
        .unwrap_or_default()
        .into_iter()
        .chain(values.iter().flat_map(|v| tokenize(v.as_ref())));
    embed_tokens(tokens, cfg, "column")
}

fn column_cf(t: &Table, c: usize, cfg: &EmbedderConfig) -> Result<Vec<f64>, EmbedError> {
    embed_column_cf(&t.column_values(c)?, t.header(c), cfg)
}

/// `alpha * own + (1 - alpha) * mean(context)`, normalised. Falls back to
/// `own` when the context is empty.
fn mix(own: Vec<f64>, context: &[Vec<f64>], alpha: f64) -> Vec<f64> {
    if context.is_empty() {
        return own;
    }
    let k = context.len() as f64;
    let mixed: Vec<f64> = (0..own.len())
        .map(|i| {
            let ctx = context.iter().map(|v| v[i]).sum::<f64>() / k;
            alpha * own[i] + (1.0 - alpha) * ctx
        })
        .collect();
    normalize(mixed).unwrap_or(own)
}

/// Column embedding under one of the four context settings.
///
/// Context columns without any token are ignored.
pub fn embed_column_ctx(
    t: &Table,
    c: usize,
    setting: ContextSetting,
    cfg: &EmbedderConfig,
) -> Result<Vec<f64>, EmbedError> {
    let settings = context_columns(t, c)?;
    let columns = settings.get(&setting).ok_or(EmbedError::AbsentSetting(setting))?;
    let own = column_cf(t, c, cfg)?;
    let mut context = Vec::new();
    for &other in columns.iter().filter(|&&o| o != c) {
        match column_cf(t, other, cfg) {
            Ok(v) => context.push(v),
            Err(EmbedError::NoTokens(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(mix(own, &context, cfg.alpha))
}

pub fn embed_row(t: &Table, r: usize, cfg: &EmbedderConfig) -> Result<Vec<f64>, EmbedError> {
    if r >= t.nrows() {
        return Err(t.cell(r, 0).unwrap_err().into());
    }
    embed_tokens(
        cell_tokens(t.rows()[r].iter().map(String::as_str)),
        cfg,
        &format!("row {r}"),
    )
}

pub fn embed_cell(t: &Table, r: usize, c: usize, cfg: &EmbedderConfig) -> Result<Vec<f64>, EmbedError> {
    embed_tokens(tokenize(t.cell(r, c)?), cfg, &format!("cell ({r}, {c})"))
}

/// Whole-table embedding, headers included.
pub fn embed_table(t: &Table, cfg: &EmbedderConfig) -> Result<Vec<f64>, EmbedError> {
    let headers = t.headers().unwrap_or_default().iter().map(String::as_str);
    let cells = t.rows().iter().flatten().map(String::as_str);
    embed_tokens(cell_tokens(headers.chain(cells)), cfg, "table")
}

/// Full-column embedding from consecutive chunks of `chunk_rows` values,
/// each embedded with the shared header; the chunk embeddings are averaged
/// and normalised. Chunks without tokens are skipped.
pub fn embed_column_chunked<S: AsRef<str>>(
    values: &[S],
    header: Option<&str>,
    chunk_rows: usize,
    cfg: &EmbedderConfig,
) -> Result<Vec<f64>, EmbedError> {
    if chunk_rows == 0 {
        return Err(EmbedError::Config("chunk_rows must be >= 1".into()));
    }
    if values.is_empty() {
        return Err(EmbedError::NoTokens("empty column".into()));
    }
    let mut chunks = Vec::new();
    for chunk in values.chunks(chunk_rows) {
        match embed_column_cf(chunk, header, cfg) {
            Ok(v) => chunks.push(v),
            Err(EmbedError::NoTokens(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if chunks.is_empty() {
        return Err(EmbedError::NoTokens("column".into()));
    }
    if chunks.len() == 1 {
        return Ok(chunks.pop().expect("one chunk"));
    }
    let k = chunks.len() as f64;
    let mean: Vec<f64> = (0..cfg.dim)
        .map(|i| chunks.iter().map(|v| v[i]).sum::<f64>() / k)
        .collect();
    normalize(mean).ok_or_else(|| EmbedError::NoTokens("column (chunks cancel)".into()))
}

/// The two shipped reference models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceModel {
    #[serde(rename = "ref-cf")]
    ContextFree,
    #[serde(rename = "ref-ctx")]
    ContextMixing,
}

impl ReferenceModel {
    pub fn id(self) -> &'static str {
        match self {
            ReferenceModel::ContextFree => "ref-cf",
            ReferenceModel::ContextMixing => "ref-ctx",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "ref-cf" => Some(ReferenceModel::ContextFree),
            "ref-ctx" => Some(ReferenceModel::ContextMixing),
            _ => None,
        }
    }

    /// `ref-ctx` uses the immediate-neighbour setting, so its column
    /// embeddings move when columns are shuffled.
    pub fn embed_column(self, t: &Table, c: usize, cfg: &EmbedderConfig) -> Result<Vec<f64>, EmbedError> {
        match self {
            ReferenceModel::ContextFree => column_cf(t, c, cfg),
            ReferenceModel::ContextMixing => embed_column_ctx(t, c, ContextSetting::Neighbors, cfg),
        }
    }

    /// `ref-ctx` mixes in the rows directly above and below.
    pub fn embed_row(self, t: &Table, r: usize, cfg: &EmbedderConfig) -> Result<Vec<f64>, EmbedError> {
        let own = embed_row(t, r, cfg)?;
        match self {
            ReferenceModel::ContextFree => Ok(own),
            ReferenceModel::ContextMixing => {
                let context: Vec<Vec<f64>> = [r.checked_sub(1), Some(r + 1)]
                    .into_iter()
                    .flatten()
                    .filter(|&o| o < t.nrows())
                    .filter_map(|o| embed_row(t, o, cfg).ok())
                    .collect();
                Ok(mix(own, &context, cfg.alpha))
            }
        }
    }

    /// `ref-ctx` mixes in the cells to the left and right in the same row.
    pub fn embed_cell(self, t: &Table, r: usize, c: usize, cfg: &EmbedderConfig) -> Result<Vec<f64>, EmbedError> {
        let own = embed_cell(t, r, c, cfg)?;
        match self {
            ReferenceModel::ContextFree => Ok(own),
            ReferenceModel::ContextMixing => {
                let context: Vec<Vec<f64>> = [c.checked_sub(1), Some(c + 1)]
                    .into_iter()
                    .flatten()
                    .filter(|&o| o < t.ncols())
                    .filter_map(|o| embed_cell(t, r, o, cfg).ok())
                    .collect();
                Ok(mix(own, &context, cfg.alpha))
            }
        }
    }

    pub fn embed_table(self, t: &Table, cfg: &EmbedderConfig) -> Result<Vec<f64>, EmbedError> {
        embed_table(t, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::fixtures::{fig3, table};
    use crate::variants::{apply_permutation, Axis};

    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

    // Hand-rolled FNV-1a, independent of the `fnv` crate used above.
    fn fnv1a(bytes: &[u8]) -> u64 {
        bytes
            .iter()
            .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
    }

    fn oracle_token(token: &str, cfg: &EmbedderConfig) -> Vec<f64> {
        let mut v = vec![0.0; cfg.dim];
        for i in 0..PROBES {
            let mut bytes = token.as_bytes().to_vec();
            bytes.push(i);
            bytes.extend_from_slice(&cfg.seed.to_le_bytes());
            let h = fnv1a(&bytes);
            let sign = if h.is_multiple_of(2) { 1.0 } else { -1.0 };
            v[((h / 2) % cfg.dim as u64) as usize] += sign;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("World Championships"), ["world", "championships"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("cntry_name-2"), ["cntry", "name", "2"]);
    }

    #[test]
    fn token_embedding_matches_fnv_oracle() {
        let cfg = EmbedderConfig::default();
        for tok in ["world", "europe", "a", "2", "netherlands"] {
            let v = embed_token(tok, &cfg);
            assert_eq!(v, embed_token(tok, &cfg));
            assert!((dot(&v, &v).sqrt() - 1.0).abs() <= 1e-12);
            assert_close(&v, &oracle_token(tok, &cfg), 0.0);
        }
    }

    #[test]
    fn distinct_tokens_golden() {
        let cfg = EmbedderConfig::default();
        // Frozen from the FNV oracle above.
        let golden_cos = dot(&oracle_token("europe", &cfg), &oracle_token("america", &cfg));
        let cos = dot(&embed_token("europe", &cfg), &embed_token("america", &cfg));
        assert_eq!(cos, golden_cos);
        assert!(cos < 0.99);
    }

    #[test]
    fn single_cell_column_is_token_embedding() {
        let cfg = EmbedderConfig::default();
        assert_eq!(embed_column_cf(&["x"], None, &cfg).unwrap(), embed_token("x", &cfg));
        assert!(matches!(
            embed_column_cf(&["", "  "], None, &cfg),
            Err(EmbedError::NoTokens(_))
        ));
    }

    #[test]
    fn column_embedding_is_order_free() {
        let cfg = EmbedderConfig::default();
        let t = fig3();
        let rev = apply_permutation(&t, Axis::Row, &[5, 4, 3, 2, 1, 0], 1).unwrap();
        for c in 0..4 {
            assert_eq!(
                ReferenceModel::ContextFree.embed_column(&t, c, &cfg).unwrap(),
                ReferenceModel::ContextFree.embed_column(&rev, c, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn fig3_continent_by_hand() {
        let cfg = EmbedderConfig::default();
        let t = fig3();
        let got = embed_column_cf(&t.column_values(3).unwrap(), t.header(3), &cfg).unwrap();
        let bag = [("continent", 1.0), ("europe", 3.0), ("north", 3.0), ("america", 3.0)];
        let mut sum = vec![0.0; cfg.dim];
        for (tok, w) in bag {
            for (s, x) in sum.iter_mut().zip(oracle_token(tok, &cfg)) {
                *s += w * x / 10.0;
            }
        }
        let n = dot(&sum, &sum).sqrt();
        let expected: Vec<f64> = sum.iter().map(|x| x / n).collect();
        assert_close(&got, &expected, 1e-12);
    }

    #[test]
    fn fig3_row0_by_hand() {
        let cfg = EmbedderConfig::default();
        let got = embed_row(&fig3(), 0, &cfg).unwrap();
        let mut sum = vec![0.0; cfg.dim];
        for tok in ["jan", "amsterdam", "netherlands", "europe"] {
            for (s, x) in sum.iter_mut().zip(oracle_token(tok, &cfg)) {
                *s += x;
            }
        }
        let n = dot(&sum, &sum).sqrt();
        assert_close(&got, &sum.iter().map(|x| x / n).collect::<Vec<_>>(), 1e-12);
    }

    #[test]
    fn one_by_one_levels_coincide() {
        let cfg = EmbedderConfig::default();
        let t = table("t", None, &[&["Lisbon harbour"]]);
        let cell = embed_cell(&t, 0, 0, &cfg).unwrap();
        assert_eq!(embed_row(&t, 0, &cfg).unwrap(), cell);
        assert_eq!(ReferenceModel::ContextFree.embed_column(&t, 0, &cfg).unwrap(), cell);
        assert_eq!(embed_table(&t, &cfg).unwrap(), cell);
    }

    #[test]
    fn table_embedding_permutation_invariant() {
        let cfg = EmbedderConfig::default();
        let t = fig3();
        let base = embed_table(&t, &cfg).unwrap();
        let r = apply_permutation(&t, Axis::Row, &[2, 0, 1, 5, 4, 3], 1).unwrap();
        let c = apply_permutation(&t, Axis::Column, &[3, 1, 0, 2], 1).unwrap();
        assert_eq!(embed_table(&r, &cfg).unwrap(), base);
        assert_eq!(embed_table(&c, &cfg).unwrap(), base);
    }

    /// Two single-token words whose hash supports are disjoint.
    fn orthogonal_pair(cfg: &EmbedderConfig) -> (&'static str, &'static str) {
        let words = ["amber", "basalt", "cedar", "dune", "ember", "fjord", "granite", "heath"];
        for a in words {
            for b in words {
                if a < b && dot(&oracle_token(a, cfg), &oracle_token(b, cfg)) == 0.0 {
                    return (a, b);
                }
            }
        }
        panic!("no orthogonal pair among fixture words");
    }

    #[test]
    fn ctx_setting_arithmetic() {
        let cfg = EmbedderConfig::default();
        let (a, b) = orthogonal_pair(&cfg);
        let t = table("t", None, &[&[a, b]]);
        let u = embed_column_ctx(&t, 0, ContextSetting::ColumnOnly, &cfg).unwrap();
        assert_eq!(u, embed_token(a, &cfg));
        let d = embed_column_ctx(&t, 0, ContextSetting::EntireTable, &cfg).unwrap();
        let v = embed_token(b, &cfg);
        let mixed: Vec<f64> = u.iter().zip(&v).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
        let n = dot(&mixed, &mixed).sqrt();
        assert_close(&d, &mixed.iter().map(|x| x / n).collect::<Vec<_>>(), 1e-12);
        assert!((dot(&u, &d) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn alpha_one_ignores_context() {
        let cfg = EmbedderConfig {
            alpha: 1.0,
            ..Default::default()
        };
        let t = fig3();
        let cf = embed_column_ctx(&t, 2, ContextSetting::ColumnOnly, &cfg).unwrap();
        for s in ContextSetting::ALL {
            assert_close(&embed_column_ctx(&t, 2, s, &cfg).unwrap(), &cf, 1e-15);
        }
        assert_eq!(
            embed_column_ctx(&t, 0, ContextSetting::SubjectColumn, &cfg),
            Err(EmbedError::AbsentSetting(ContextSetting::SubjectColumn))
        );
    }

    #[test]
    fn ctx_changes_with_disjoint_context() {
        let cfg = EmbedderConfig::default();
        let a = table("a", Some(&["city", "note"]), &[&["Oslo", "fjord"], &["Bergen", "rain"]]);
        let b = table(
            "b",
            Some(&["city", "note"]),
            &[&["Oslo", "tulip"], &["Bergen", "windmill"]],
        );
        let ea = ReferenceModel::ContextMixing.embed_column(&a, 0, &cfg).unwrap();
        let eb = ReferenceModel::ContextMixing.embed_column(&b, 0, &cfg).unwrap();
        assert!(dot(&ea, &eb) < 1.0 - 1e-6);
        assert_eq!(
            ReferenceModel::ContextFree.embed_column(&a, 0, &cfg).unwrap(),
            ReferenceModel::ContextFree.embed_column(&b, 0, &cfg).unwrap()
        );
    }

    #[test]
    fn chunked_cases() {
        let cfg = EmbedderConfig::default();
        let vals = ["red", "green", "blue", "cyan"];
        assert_eq!(
            embed_column_chunked(&vals, Some("colour"), 10, &cfg).unwrap(),
            embed_column_cf(&vals, Some("colour"), &cfg).unwrap()
        );
        let twice = ["red", "green", "red", "green"];
        assert_close(
            &embed_column_chunked(&twice, None, 2, &cfg).unwrap(),
            &embed_column_cf(&["red", "green"], None, &cfg).unwrap(),
            1e-15,
        );
        let c1 = embed_column_cf(&vals[..2], None, &cfg).unwrap();
        let c2 = embed_column_cf(&vals[2..], None, &cfg).unwrap();
        let mean: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| (x + y) / 2.0).collect();
        let n = dot(&mean, &mean).sqrt();
        assert_close(
            &embed_column_chunked(&vals, None, 2, &cfg).unwrap(),
            &mean.iter().map(|x| x / n).collect::<Vec<_>>(),
            1e-12,
        );
        let empty: [&str; 0] = [];
        assert!(embed_column_chunked(&empty, None, 2, &cfg).is_err());
        assert!(embed_column_chunked(&vals, None, 0, &cfg).is_err());
    }

    #[test]
    fn outputs_are_unit_norm() {
        let cfg = EmbedderConfig::default();
        let t = fig3();
        for m in [ReferenceModel::ContextFree, ReferenceModel::ContextMixing] {
            for c in 0..t.ncols() {
                let v = m.embed_column(&t, c, &cfg).unwrap();
                assert!((dot(&v, &v) - 1.0).abs() < 1e-9);
            }
            for r in 0..t.nrows() {
                let v = m.embed_row(&t, r, &cfg).unwrap();
                assert!((dot(&v, &v) - 1.0).abs() < 1e-9);
                let v = m.embed_cell(&t, r, 1, &cfg).unwrap();
                assert!((dot(&v, &v) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(EmbedderConfig::default().validate().is_ok());
        for bad in [
            EmbedderConfig {
                dim: 1,
                ..Default::default()
            },
            EmbedderConfig {
                token_budget: 0,
                ..Default::default()
            },
            EmbedderConfig {
                alpha: 1.5,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
