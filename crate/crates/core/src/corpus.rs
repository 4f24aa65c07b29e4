//! A corpus is a directory of table files.
//!
//! Recognised files, loaded in filename order:
//!
//! | pattern             | format                  |
//! |---------------------|-------------------------|
//! | `*.headerless.csv`  | CSV without header row  |
//! | `*.csv`             | CSV with header row     |
//! | `*.jsonl`           | one JSON row per line   |
//!
//! The table id is the file name without the pattern suffix. Other files are
//! ignored.

use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::table::{parse_table, Table, TableFormat};

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub tables: Vec<Table>,
    /// SHA-256 over the file names and bytes of every loaded file.
    pub hash: String,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.id() == id)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

fn classify(file_name: &str) -> Option<(&str, TableFormat)> {
    if let Some(id) = file_name.strip_suffix(".headerless.csv") {
        Some((id, TableFormat::CsvHeaderless))
    } else if let Some(id) = file_name.strip_suffix(".csv") {
        Some((id, TableFormat::CsvWithHeader))
    } else {
        file_name.strip_suffix(".jsonl").map(|id| (id, TableFormat::JsonlRows))
    }
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading corpus {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading corpus {}", dir.display()), e))?;
        if entry.path().is_file() {
            if let Some(name) = entry.file_name().to_str() {
                files.push(name.to_string());
            }
        }
    }
    files.sort();

    let mut hasher = Sha256::new();
    let mut tables = Vec::new();
    let mut ids = BTreeSet::new();
    for name in &files {
        let Some((id, format)) = classify(name) else {
            continue;
        };
        if !ids.insert(id.to_string()) {
            return Err(Error::InvalidParam(format!("duplicate table id `{id}` in corpus")));
        }
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        tables.push(parse_table(&bytes, format, id)?);
    }
    if tables.is_empty() {
        return Err(Error::InvalidParam(format!("no table files in {}", dir.display())));
    }
    let name = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_string))
        .unwrap_or_else(|| dir.display().to_string());
    Ok(Corpus {
        name,
        tables,
        hash: hex::encode(hasher.finalize()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::fixtures::FIG3_CSV;

    #[test]
    fn loads_all_formats_in_order() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.csv"), FIG3_CSV).unwrap();
        std::fs::write(dir.path().join("a.headerless.csv"), "1,2\n3,4\n").unwrap();
        std::fs::write(dir.path().join("c.jsonl"), "[\"x\"]\n[\"y\"]\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let c = load_corpus(dir.path()).unwrap();
        let ids: Vec<&str> = c.tables.iter().map(|t| t.id()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(c.get("a").unwrap().headers().is_none());
        assert_eq!(c.get("b").unwrap().nrows(), 6);
        assert_eq!(c.hash.len(), 64);
        assert_eq!(load_corpus(dir.path()).unwrap().hash, c.hash);

        std::fs::write(dir.path().join("a.headerless.csv"), "1,2\n3,5\n").unwrap();
        assert_ne!(load_corpus(dir.path()).unwrap().hash, c.hash);
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus(dir.path()).is_err());
        std::fs::write(dir.path().join("t.csv"), "a\n1\n").unwrap();
        std::fs::write(dir.path().join("t.jsonl"), "[\"1\"]\n").unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::InvalidParam(_))));
    }
}
