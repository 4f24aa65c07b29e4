//! JSONL interchange format for embeddings at every level.
//!
//! One record per line:
//!
//! ```text
//! {"model":"ref-cf","table":"t1","variant":0,"level":"column","target":[2],"dim":64,"vec":[...],"meta":{...}}
//! ```
//!
//! A directory holding `*.jsonl` record files and a `manifest.json` is the
//! unit exchanged between embedding producers and the measure drivers.
//! Target indices always refer to the coordinates of the original
//! (variant 0) table, so a series tracks the same column, row or cell across
//! variants.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "embeddings.jsonl";

#[derive(Debug, Error)]
pub enum EmbeddingIoError {
    #[error("line {line}: dim {found} does not match {expected}")]
    DimMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: non-finite vector entry")]
    NonFinite { line: usize },
    #[error("line {line}: duplicate record {key}")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("no embeddings for {0}")]
    MissingKey(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> EmbeddingIoError {
    let context = context.into();
    move |source| EmbeddingIoError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Table,
    Column,
    Row,
    Cell,
    Entity,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Table, Level::Column, Level::Row, Level::Cell, Level::Entity];

    /// Number of indices in a target tuple at this level.
    pub fn arity(self) -> usize {
        match self {
            Level::Table => 0,
            Level::Column | Level::Row => 1,
            Level::Cell | Level::Entity => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Table => "table",
            Level::Column => "column",
            Level::Row => "row",
            Level::Cell => "cell",
            Level::Entity => "entity",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown level `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(rename = "table")]
    pub table_id: String,
    #[serde(rename = "variant")]
    pub variant_id: u32,
    pub level: Level,
    pub target: Vec<usize>,
    pub dim: usize,
    #[serde(rename = "vec")]
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl EmbeddingRecord {
    pub fn new(
        model_id: impl Into<String>,
        table_id: impl Into<String>,
        variant_id: u32,
        level: Level,
        target: Vec<usize>,
        vector: Vec<f64>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            table_id: table_id.into(),
            variant_id,
            level,
            target,
            dim: vector.len(),
            vector,
            meta: None,
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta
            .get_or_insert_with(BTreeMap::new)
            .insert(key.into(), value.into());
        self
    }

    pub fn key(&self) -> SeriesKey {
        SeriesKey {
            model_id: self.model_id.clone(),
            table_id: self.table_id.clone(),
            level: self.level,
            target: self.target.clone(),
        }
    }

    fn check(&self, line: usize, expected_dim: Option<usize>) -> Result<(), EmbeddingIoError> {
        if self.vector.len() != self.dim {
            return Err(EmbeddingIoError::DimMismatch {
                line,
                expected: self.dim,
                found: self.vector.len(),
            });
        }
        if let Some(expected) = expected_dim.filter(|&d| d != self.dim) {
            return Err(EmbeddingIoError::DimMismatch {
                line,
                expected,
                found: self.dim,
            });
        }
        if self.vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingIoError::NonFinite { line });
        }
        if self.target.len() != self.level.arity() {
            return Err(EmbeddingIoError::Malformed {
                line,
                message: format!(
                    "level {} needs {} target indices, got {}",
                    self.level.as_str(),
                    self.level.arity(),
                    self.target.len()
                ),
            });
        }
        if self.model_id.is_empty() || self.table_id.is_empty() {
            return Err(EmbeddingIoError::Malformed {
                line,
                message: "model and table must be nonempty".into(),
            });
        }
        Ok(())
    }
}

/// Identifies one series of embeddings across variants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub model_id: String,
    pub table_id: String,
    pub level: Level,
    pub target: Vec<usize>,
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let target: Vec<String> = self.target.iter().map(usize::to_string).collect();
        write!(
            f,
            "{}/{}/{}[{}]",
            self.model_id,
            self.table_id,
            self.level.as_str(),
            target.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub vector: Vec<f64>,
    pub meta: Option<BTreeMap<String, String>>,
}

/// Validated, indexed collection of records sharing one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingSet {
    dim: Option<usize>,
    series: BTreeMap<SeriesKey, BTreeMap<u32, Entry>>,
}

/// Vectors of one series ordered by variant id.
#[derive(Debug, Clone)]
pub struct SeriesView<'a> {
    pub variants: Vec<u32>,
    pub vectors: Vec<&'a [f64]>,
    pub metas: Vec<Option<&'a BTreeMap<String, String>>>,
    /// Set when variant ids are not the contiguous range `0..=max`.
    pub warning: Option<String>,
}

impl EmbeddingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Number of records.
    pub fn len(&self) -> usize {
        self.series.values().map(BTreeMap::len).sum()
    }

    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), EmbeddingIoError> {
        self.insert_at(record, 0)
    }

    fn insert_at(&mut self, record: EmbeddingRecord, line: usize) -> Result<(), EmbeddingIoError> {
        record.check(line, self.dim)?;
        let key = record.key();
        let variants = self.series.entry(key).or_default();
        if variants.contains_key(&record.variant_id) {
            return Err(EmbeddingIoError::Duplicate {
                line,
                key: format!("{} variant {}", record.key(), record.variant_id),
            });
        }
        self.dim = Some(record.dim);
        variants.insert(
            record.variant_id,
            Entry {
                vector: record.vector,
                meta: record.meta,
            },
        );
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &SeriesKey> {
        self.series.keys()
    }

    pub fn models(&self) -> Vec<&str> {
        let mut m: Vec<&str> = self.series.keys().map(|k| k.model_id.as_str()).collect();
        m.dedup();
        m.sort_unstable();
        m.dedup();
        m
    }

    pub fn get(&self, key: &SeriesKey, variant: u32) -> Option<&Entry> {
        self.series.get(key).and_then(|v| v.get(&variant))
    }

    pub fn variants(&self, key: &SeriesKey) -> Option<&BTreeMap<u32, Entry>> {
        self.series.get(key)
    }

    /// The vectors of `key` in ascending variant order.
    pub fn series(&self, key: &SeriesKey) -> Result<SeriesView<'_>, EmbeddingIoError> {
        let variants = self
            .series
            .get(key)
            .ok_or_else(|| EmbeddingIoError::MissingKey(key.to_string()))?;
        let ids: Vec<u32> = variants.keys().copied().collect();
        let max = *ids.last().expect("series are never empty");
        let warning = (ids.len() as u64 != u64::from(max) + 1).then(|| {
            let missing: Vec<String> = (0..=max)
                .filter(|i| !variants.contains_key(i))
                .map(|i| i.to_string())
                .collect();
            format!("{key}: missing variants {}", missing.join(","))
        });
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        Ok(SeriesView {
            variants: ids,
            vectors: variants.values().map(|e| e.vector.as_slice()).collect(),
            metas: variants.values().map(|e| e.meta.as_ref()).collect(),
            warning,
        })
    }

    /// Records in key order, then variant order.
    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        self.series.iter().flat_map(|(key, variants)| {
            variants.iter().map(move |(&variant_id, e)| EmbeddingRecord {
                model_id: key.model_id.clone(),
                table_id: key.table_id.clone(),
                variant_id,
                level: key.level,
                target: key.target.clone(),
                dim: e.vector.len(),
                vector: e.vector.clone(),
                meta: e.meta.clone(),
            })
        })
    }
}

/// Writes records as JSONL after validating them as a set.
pub fn write_records<'a, W: Write>(
    records: impl IntoIterator<Item = &'a EmbeddingRecord>,
    sink: W,
) -> Result<usize, EmbeddingIoError> {
    let records: Vec<&EmbeddingRecord> = records.into_iter().collect();
    let mut check = EmbeddingSet::new();
    for (i, r) in records.iter().enumerate() {
        check.insert_at((*r).clone(), i + 1)?;
    }
    let mut w = BufWriter::new(sink);
    for r in &records {
        serde_json::to_writer(&mut w, r).map_err(|e| EmbeddingIoError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err("writing records"))?;
    }
    w.flush().map_err(io_err("writing records"))?;
    Ok(records.len())
}

/// Reads and validates JSONL records. Blank lines are ignored; errors carry
/// 1-based line numbers.
pub fn read_records<R: BufRead>(source: R) -> Result<EmbeddingSet, EmbeddingIoError> {
    let mut set = EmbeddingSet::new();
    read_into(&mut set, source)?;
    Ok(set)
}

fn read_into<R: BufRead>(set: &mut EmbeddingSet, source: R) -> Result<(), EmbeddingIoError> {
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(io_err("reading records"))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| EmbeddingIoError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        set.insert_at(record, i + 1)?;
    }
    Ok(())
}

/// Describes how an embedding directory was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub property: String,
    pub models: Vec<String>,
    pub dim: usize,
    pub corpus: String,
    pub seed: u64,
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_hash: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
}

/// Writes `embeddings.jsonl` and `manifest.json` into `dir`.
pub fn write_dir(dir: &Path, manifest: &Manifest, records: &[EmbeddingRecord]) -> Result<usize, EmbeddingIoError> {
    std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let path = dir.join(RECORDS_FILE);
    let file = File::create(&path).map_err(io_err(format!("creating {}", path.display())))?;
    let n = write_records(records, file)?;
    let text = serde_json::to_string_pretty(manifest).map_err(|e| EmbeddingIoError::Manifest(e.to_string()))?;
    let mpath = dir.join(MANIFEST_FILE);
    std::fs::write(&mpath, text + "\n").map_err(io_err(format!("writing {}", mpath.display())))?;
    Ok(n)
}

/// Reads every `*.jsonl` file of `dir` (in name order) and the manifest, if
/// present.
pub fn read_dir(dir: &Path) -> Result<(EmbeddingSet, Option<Manifest>), EmbeddingIoError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err(format!("reading {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut set = EmbeddingSet::new();
    for path in &files {
        let f = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
        read_into(&mut set, BufReader::new(f))?;
    }
    let mpath = dir.join(MANIFEST_FILE);
    let manifest = if mpath.exists() {
        let text = std::fs::read_to_string(&mpath).map_err(io_err(format!("reading {}", mpath.display())))?;
        Some(serde_json::from_str(&text).map_err(|e| EmbeddingIoError::Manifest(e.to_string()))?)
    } else {
        None
    };
    Ok((set, manifest))
}

/// A model's vectors for a population of named entities, unit-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub model_id: String,
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingSpace {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<(), EmbeddingIoError> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(EmbeddingIoError::DimMismatch {
                line: 0,
                expected: self.dim,
                found: vector.len(),
            });
        }
        let vector = crate::refembed::normalize(vector).ok_or(EmbeddingIoError::NonFinite { line: 0 })?;
        if self.entries.contains_key(&key) {
            return Err(EmbeddingIoError::Duplicate { line: 0, key });
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Entity space of `model_id` from the variant-0 entity records of a set.
    ///
    /// Entities are keyed by `meta.entity` when present, else by
    /// `table/row/col`.
    pub fn from_set(set: &EmbeddingSet, model_id: &str) -> Result<Self, EmbeddingIoError> {
        let dim = set.dim().unwrap_or(0);
        let mut space = Self::new(model_id, dim);
        for key in set
            .keys()
            .filter(|k| k.model_id == model_id && k.level == Level::Entity)
        {
            if let Some(e) = set.get(key, 0) {
                let name = e
                    .meta
                    .as_ref()
                    .and_then(|m| m.get("entity"))
                    .cloned()
                    .unwrap_or_else(|| format!("{}/{}/{}", key.table_id, key.target[0], key.target[1]));
                space.insert(name, e.vector.clone())?;
            }
        }
        Ok(space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(table: &str, variant: u32, v: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord::new("m", table, variant, Level::Column, vec![2], v)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let recs = vec![
            rec("t", 0, vec![0.1, 1.0 / 3.0, -2.5e-300]),
            rec("t", 1, vec![f64::MIN_POSITIVE, 1e308, -0.0]).with_meta("ratio", "0.5"),
            EmbeddingRecord::new("m", "t", 0, Level::Table, vec![], vec![0.7, 0.2, 0.1]),
        ];
        let mut buf = Vec::new();
        assert_eq!(write_records(&recs, &mut buf).unwrap(), 3);
        let set = read_records(buf.as_slice()).unwrap();
        let back: Vec<EmbeddingRecord> = set.records().collect();
        for r in &recs {
            let b = back
                .iter()
                .find(|b| b.key() == r.key() && b.variant_id == r.variant_id)
                .unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&b.vector), bits(&r.vector));
            assert_eq!(b.meta, r.meta);
        }
    }

    #[test]
    fn line_format() {
        let r = rec("t", 0, vec![0.5, 0.25]);
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(
            line,
            r#"{"model":"m","table":"t","variant":0,"level":"column","target":[2],"dim":2,"vec":[0.5,0.25]}"#
        );
    }

    #[test]
    fn duplicate_names_key() {
        let text = format!(
            "{}\n{}\n",
            serde_json::to_string(&rec("t", 0, vec![1.0])).unwrap(),
            serde_json::to_string(&rec("t", 0, vec![2.0])).unwrap()
        );
        match read_records(text.as_bytes()) {
            Err(EmbeddingIoError::Duplicate { line: 2, key }) => assert!(key.contains("m/t/column[2]")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixed_dims_rejected() {
        let text = format!(
            "{}\n{}\n",
            serde_json::to_string(&rec("t", 0, vec![1.0; 64])).unwrap(),
            serde_json::to_string(&rec("t", 1, vec![1.0; 128])).unwrap()
        );
        assert!(matches!(
            read_records(text.as_bytes()),
            Err(EmbeddingIoError::DimMismatch {
                line: 2,
                expected: 64,
                found: 128
            })
        ));
        let bad = r#"{"model":"m","table":"t","variant":0,"level":"column","target":[0],"dim":3,"vec":[1.0]}"#;
        assert!(matches!(
            read_records(bad.as_bytes()),
            Err(EmbeddingIoError::DimMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_and_malformed() {
        let mut buf = Vec::new();
        assert!(matches!(
            write_records(&[rec("t", 0, vec![f64::NAN])], &mut buf),
            Err(EmbeddingIoError::NonFinite { line: 1 })
        ));
        let inf = r#"{"model":"m","table":"t","variant":0,"level":"column","target":[0],"dim":1,"vec":[1e999]}"#;
        assert!(read_records(inf.as_bytes()).is_err());
        let text = "\n{not json\n";
        assert!(matches!(
            read_records(text.as_bytes()),
            Err(EmbeddingIoError::Malformed { line: 2, .. })
        ));
        let arity = r#"{"model":"m","table":"t","variant":0,"level":"cell","target":[0],"dim":1,"vec":[1.0]}"#;
        assert!(matches!(
            read_records(arity.as_bytes()),
            Err(EmbeddingIoError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn series_order_and_gaps() {
        let mut set = EmbeddingSet::new();
        for v in [2, 0, 1] {
            set.insert(rec("t", v, vec![v as f64])).unwrap();
        }
        let key = rec("t", 0, vec![]).key();
        let s = set.series(&key).unwrap();
        assert_eq!(s.variants, vec![0, 1, 2]);
        assert_eq!(s.vectors, vec![&[0.0][..], &[1.0], &[2.0]]);
        assert!(s.warning.is_none());

        let mut gap = EmbeddingSet::new();
        gap.insert(rec("u", 0, vec![1.0])).unwrap();
        gap.insert(rec("u", 2, vec![1.0])).unwrap();
        let s = gap.series(&rec("u", 0, vec![]).key()).unwrap();
        assert_eq!(s.vectors.len(), 2);
        assert!(s.warning.unwrap().contains("missing variants 1"));

        assert!(matches!(
            set.series(&rec("zz", 0, vec![]).key()),
            Err(EmbeddingIoError::MissingKey(_))
        ));
    }

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            property: "row_order".into(),
            models: vec!["m".into()],
            dim: 2,
            corpus: "c".into(),
            seed: 7,
            generator: "ref-cf".into(),
            corpus_hash: None,
            params: BTreeMap::new(),
        };
        let recs = vec![rec("t", 0, vec![0.1, 0.2])];
        write_dir(dir.path(), &manifest, &recs).unwrap();
        let (set, m) = read_dir(dir.path()).unwrap();
        assert_eq!(m.unwrap(), manifest);
        assert_eq!(set.len(), 1);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("\"property\": \"row_order\""));
    }

    #[test]
    fn entity_space_from_records() {
        let mut set = EmbeddingSet::new();
        set.insert(
            EmbeddingRecord::new("m", "t", 0, Level::Entity, vec![0, 1], vec![3.0, 4.0]).with_meta("entity", "Q1"),
        )
        .unwrap();
        set.insert(EmbeddingRecord::new(
            "m",
            "t",
            0,
            Level::Entity,
            vec![1, 1],
            vec![1.0, 0.0],
        ))
        .unwrap();
        let space = EmbeddingSpace::from_set(&set, "m").unwrap();
        assert_eq!(space.keys().collect::<Vec<_>>(), ["Q1", "t/1/1"]);
        assert_eq!(space.get("Q1").unwrap(), [0.6, 0.8]);
    }

    fn level_strategy() -> impl Strategy<Value = Level> {
        prop_oneof![
            Just(Level::Table),
            Just(Level::Column),
            Just(Level::Row),
            Just(Level::Cell),
            Just(Level::Entity)
        ]
    }

    proptest! {
        #[test]
        fn read_inverts_write(
            specs in proptest::collection::vec((level_strategy(), 0u32..4, 0usize..5, "[a-c]"), 1..12),
            values in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 3),
        ) {
            let mut set = EmbeddingSet::new();
            for (level, variant, idx, table) in specs {
                let target = vec![idx; level.arity()];
                let mut v = values.clone();
                v[0] = variant as f64 + idx as f64;
                let r = EmbeddingRecord::new("m", table, variant, level, target, v);
                let _ = set.insert(r);
            }
            let recs: Vec<EmbeddingRecord> = set.records().collect();
            let mut buf = Vec::new();
            write_records(&recs, &mut buf).unwrap();
            let back = read_records(buf.as_slice()).unwrap();
            prop_assert_eq!(back, set);
        }
    }
}
