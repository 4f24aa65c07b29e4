//! Unary functional dependencies: exhaustive discovery at determinant size 1,
//! FD groups for the preservation measure, and non-FD pair sampling.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{cell_key, Table, TableError};

#[derive(Debug, Error, PartialEq)]
pub enum FdError {
    #[error("FD {x_col} -> {y_col} violated in `{table_id}`: `{x_value}` maps to both `{y_first}` and `{y_second}`")]
    Violated {
        table_id: String,
        x_col: usize,
        y_col: usize,
        x_value: String,
        y_first: String,
        y_second: String,
    },
    #[error("table `{0}` has no column pair without a functional dependency")]
    NoNonFdPair(String),
    #[error("determinant and dependent column are both {0}")]
    Trivial(usize),
    #[error("fd list: {0}")]
    Csv(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// `x_col -> y_col` on one table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FdInstance {
    pub x_col: usize,
    pub y_col: usize,
}

/// Rows of a table grouped by determinant value.
#[derive(Debug, Clone, PartialEq)]
pub struct FdGroupSet {
    pub table_id: String,
    pub fd: FdInstance,
    /// Trimmed determinant value -> row indices (ascending).
    pub groups: BTreeMap<String, Vec<usize>>,
}

/// First conflict on `x -> y`, as (x value, first y, second y).
fn first_violation(t: &Table, x: usize, y: usize) -> Option<(String, String, String)> {
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for row in t.rows() {
        let (xv, yv) = (cell_key(&row[x]), cell_key(&row[y]));
        match seen.get(xv) {
            Some(&prev) if prev != yv => return Some((xv.into(), prev.into(), yv.into())),
            Some(_) => {}
            None => {
                seen.insert(xv, yv);
            }
        }
    }
    None
}

pub fn holds(t: &Table, fd: FdInstance) -> Result<bool, FdError> {
    t.check_col(fd.x_col)?;
    t.check_col(fd.y_col)?;
    Ok(first_violation(t, fd.x_col, fd.y_col).is_none())
}

/// Every ordered pair `(x, y)`, `x != y`, with `x -> y`, sorted by `(x, y)`.
///
/// Values are compared after trimming; empty cells are an ordinary value.
pub fn discover_unary_fds(t: &Table) -> Vec<FdInstance> {
    let n = t.ncols();
    (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .filter(|&(x, y)| x != y && first_violation(t, x, y).is_none())
        .map(|(x_col, y_col)| FdInstance { x_col, y_col })
        .collect()
}

/// Groups rows by the value of the determinant without checking the FD.
pub fn determinant_groups(t: &Table, x_col: usize) -> Result<BTreeMap<String, Vec<usize>>, FdError> {
    let values = t.column_values(x_col)?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (r, v) in values.into_iter().enumerate() {
        groups.entry(cell_key(v).to_string()).or_default().push(r);
    }
    Ok(groups)
}

/// FD groups of a dependency that must hold on `t`.
pub fn fd_groups(t: &Table, fd: FdInstance) -> Result<FdGroupSet, FdError> {
    if fd.x_col == fd.y_col {
        return Err(FdError::Trivial(fd.x_col));
    }
    t.check_col(fd.y_col)?;
    let groups = determinant_groups(t, fd.x_col)?;
    if let Some((x_value, y_first, y_second)) = first_violation(t, fd.x_col, fd.y_col) {
        return Err(FdError::Violated {
            table_id: t.id().to_string(),
            x_col: fd.x_col,
            y_col: fd.y_col,
            x_value,
            y_first,
            y_second,
        });
    }
    Ok(FdGroupSet {
        table_id: t.id().to_string(),
        fd,
        groups,
    })
}

/// Seeded sample without replacement of ordered column pairs on which no FD
/// holds. Returns fewer than `count` pairs when fewer exist.
pub fn sample_non_fd_pairs(t: &Table, count: usize, seed: u64) -> Result<Vec<FdInstance>, FdError> {
    let n = t.ncols();
    let eligible: Vec<FdInstance> = (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .filter(|&(x, y)| x != y && first_violation(t, x, y).is_some())
        .map(|(x_col, y_col)| FdInstance { x_col, y_col })
        .collect();
    if eligible.is_empty() {
        return Err(FdError::NoNonFdPair(t.id().to_string()));
    }
    let k = count.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, eligible.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| eligible[i]).collect())
}

/// Row of an FD list file: `table_id,x_col,y_col,holds`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdListEntry {
    pub table_id: String,
    pub x_col: usize,
    pub y_col: usize,
    pub holds: bool,
}

pub fn write_fd_list<W: Write>(entries: &[FdListEntry], sink: W) -> Result<(), FdError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    for e in entries {
        w.serialize(e).map_err(|e| FdError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| FdError::Csv(e.to_string()))
}

pub fn read_fd_list<R: Read>(source: R) -> Result<Vec<FdListEntry>, FdError> {
    csv::Reader::from_reader(source)
        .deserialize()
        .map(|r| r.map_err(|e| FdError::Csv(e.to_string())))
        .collect()
}
