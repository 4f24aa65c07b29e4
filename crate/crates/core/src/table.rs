//! Relational tables: parsing, validation, projection and column classification.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on `nrows * ncols` accepted by [`Table::new`].
pub const MAX_CELLS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("table `{id}`: empty input")]
    Empty { id: String },
    #[error("table `{id}`: row {row} has {found} cells, expected {expected}")]
    Ragged {
        id: String,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("table `{id}`: {found} headers for {expected} columns")]
    HeaderCount { id: String, found: usize, expected: usize },
    #[error("table `{id}`: {cells} cells exceeds the limit of {MAX_CELLS}")]
    TooLarge { id: String, cells: usize },
    #[error("table id must be nonempty")]
    EmptyId,
    #[error("table `{id}`: column {col} out of bounds ({ncols} columns)")]
    ColumnOutOfBounds { id: String, col: usize, ncols: usize },
    #[error("table `{id}`: row {row} out of bounds ({nrows} rows)")]
    RowOutOfBounds { id: String, row: usize, nrows: usize },
    #[error("table `{id}`: invalid UTF-8 input")]
    Utf8 { id: String },
    #[error("table `{id}`: line {line}: {message}")]
    Malformed { id: String, line: usize, message: String },
}

/// Input encodings understood by [`parse_table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    CsvWithHeader,
    CsvHeaderless,
    /// One JSON array of strings per line, optionally preceded by a
    /// `{"headers": [...]}` line.
    JsonlRows,
}

/// Reference to one column of a table in a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table_id: String,
    pub col_index: usize,
}

impl ColumnRef {
    pub fn new(table_id: impl Into<String>, col_index: usize) -> Self {
        Self {
            table_id: table_id.into(),
            col_index,
        }
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{}]", self.table_id, self.col_index)
    }
}

/// A rectangular relational table. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    id: String,
    headers: Option<Vec<String>>,
    rows: Vec<Vec<String>>,
    ncols: usize,
}

impl Table {
    /// Builds a table, checking rectangularity and the size limit.
    ///
    /// `ncols` is taken from the headers when present, else from the first row.
    pub fn new(
        id: impl Into<String>,
        headers: Option<Vec<String>>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self, TableError> {
        let id = id.into();
        if id.is_empty() {
            return Err(TableError::EmptyId);
        }
        let ncols = match (&headers, rows.first()) {
            (Some(h), _) => h.len(),
            (None, Some(r)) => r.len(),
            (None, None) => return Err(TableError::Empty { id }),
        };
        if ncols == 0 {
            return Err(TableError::Empty { id });
        }
        let offset = usize::from(headers.is_some());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(TableError::Ragged {
                    id,
                    row: i + offset,
                    found: row.len(),
                    expected: ncols,
                });
            }
        }
        let cells = ncols.saturating_mul(rows.len());
        if cells > MAX_CELLS {
            return Err(TableError::TooLarge { id, cells });
        }
        Ok(Self {
            id,
            headers,
            rows,
            ncols,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn headers(&self) -> Option<&[String]> {
        self.headers.as_deref()
    }

    pub fn header(&self, c: usize) -> Option<&str> {
        self.headers.as_ref().and_then(|h| h.get(c)).map(String::as_str)
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, r: usize, c: usize) -> Result<&str, TableError> {
        self.check_col(c)?;
        self.rows
            .get(r)
            .map(|row| row[c].as_str())
            .ok_or_else(|| TableError::RowOutOfBounds {
                id: self.id.clone(),
                row: r,
                nrows: self.nrows(),
            })
    }

    pub(crate) fn check_col(&self, c: usize) -> Result<(), TableError> {
        if c < self.ncols {
            Ok(())
        } else {
            Err(TableError::ColumnOutOfBounds {
                id: self.id.clone(),
                col: c,
                ncols: self.ncols,
            })
        }
    }

    /// Cells of column `c` in row order.
    pub fn column_values(&self, c: usize) -> Result<Vec<&str>, TableError> {
        self.check_col(c)?;
        Ok(self.rows.iter().map(|r| r[c].as_str()).collect())
    }

    /// Same table under a different id.
    pub fn with_id(&self, id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..self.clone()
        }
    }

    /// Table without headers.
    pub fn without_headers(&self) -> Self {
        Self {
            headers: None,
            ..self.clone()
        }
    }

    /// Keeps the listed columns, in the listed order.
    pub fn project(&self, cols: &[usize], id: impl Into<String>) -> Result<Self, TableError> {
        for &c in cols {
            self.check_col(c)?;
        }
        let headers = self
            .headers
            .as_ref()
            .map(|h| cols.iter().map(|&c| h[c].clone()).collect());
        let rows = self
            .rows
            .iter()
            .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
            .collect();
        Table::new(id, headers, rows)
    }

    /// Same cells with replacement headers.
    pub fn with_headers(&self, headers: Vec<String>) -> Result<Self, TableError> {
        Table::new(self.id.clone(), Some(headers), self.rows.clone())
    }

    /// Serializes in the given format; `parse_table` inverts this.
    ///
    /// `CsvHeaderless` drops headers.
    pub fn to_bytes(&self, format: TableFormat) -> Vec<u8> {
        match format {
            TableFormat::CsvWithHeader | TableFormat::CsvHeaderless => {
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::Any(b'\n'))
                    .from_writer(Vec::new());
                if format == TableFormat::CsvWithHeader {
                    if let Some(h) = &self.headers {
                        w.write_record(h).expect("in-memory csv write");
                    }
                }
                for row in &self.rows {
                    w.write_record(row).expect("in-memory csv write");
                }
                w.into_inner().expect("in-memory csv flush")
            }
            TableFormat::JsonlRows => {
                let mut out = Vec::new();
                if let Some(h) = &self.headers {
                    let line = serde_json::json!({ "headers": h });
                    out.extend_from_slice(line.to_string().as_bytes());
                    out.push(b'\n');
                }
                for row in &self.rows {
                    out.extend_from_slice(serde_json::to_string(row).expect("string array serializes").as_bytes());
                    out.push(b'\n');
                }
                out
            }
        }
    }
}

/// Parses `bytes` into a [`Table`] with the given id.
pub fn parse_table(bytes: &[u8], format: TableFormat, id: &str) -> Result<Table, TableError> {
    let text = std::str::from_utf8(bytes).map_err(|_| TableError::Utf8 { id: id.to_string() })?;
    if text.trim_end_matches(['\r', '\n']).is_empty() {
        return Err(TableError::Empty { id: id.to_string() });
    }
    match format {
        TableFormat::CsvWithHeader | TableFormat::CsvHeaderless => parse_csv(text, format, id),
        TableFormat::JsonlRows => parse_jsonl(text, id),
    }
}

fn parse_csv(text: &str, format: TableFormat, id: &str) -> Result<Table, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| TableError::Malformed {
            id: id.to_string(),
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    if records.is_empty() {
        return Err(TableError::Empty { id: id.to_string() });
    }
    let headers = if format == TableFormat::CsvWithHeader {
        Some(records.remove(0))
    } else {
        None
    };
    Table::new(id, headers, records)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    headers: Vec<String>,
}

fn parse_jsonl(text: &str, id: &str) -> Result<Table, TableError> {
    let mut headers = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| TableError::Malformed {
            id: id.to_string(),
            line: i + 1,
            message,
        };
        if line.trim_start().starts_with('{') {
            if headers.is_some() || !rows.is_empty() {
                return Err(malformed("header object must be the first line".into()));
            }
            let h: HeaderLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            headers = Some(h.headers);
        } else {
            let row: Vec<String> = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            rows.push(row);
        }
    }
    Table::new(id, headers, rows)
}

/// Canonical form used for value equality: leading and trailing ASCII
/// whitespace removed, case preserved.
pub fn cell_key(cell: &str) -> &str {
    cell.trim_matches(|c: char| c.is_ascii_whitespace())
}

static NUMERIC: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[+-]?(?:(?:[0-9]{1,3}(?:,[0-9]{3})+|[0-9]+)(?:\.[0-9]*)?|\.[0-9]+)$")
        .expect("numeric grammar compiles")
});

/// Optional sign, digits with optional thousands separators, optional
/// decimal part.
pub fn is_numeric_cell(cell: &str) -> bool {
    NUMERIC.is_match(cell_key(cell))
}

/// A column is textual when strictly more than half of its non-empty cells
/// are not numeric. All-empty columns are not textual.
pub fn is_textual_column(t: &Table, c: usize) -> Result<bool, TableError> {
    let values = t.column_values(c)?;
    let (mut nonempty, mut text) = (0usize, 0usize);
    for v in values {
        if cell_key(v).is_empty() {
            continue;
        }
        nonempty += 1;
        if !is_numeric_cell(v) {
            text += 1;
        }
    }
    Ok(nonempty > 0 && 2 * text > nonempty)
}

/// Leftmost textual column, standing in for the subject column.
pub fn subject_column_proxy(t: &Table) -> Option<usize> {
    (0..t.ncols()).find(|&c| is_textual_column(t, c).unwrap_or(false))
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_line_csv() {
        let t = parse_table(b"a,b\n1,2", TableFormat::CsvWithHeader, "t").unwrap();
        assert_eq!(t.headers().unwrap(), ["a", "b"]);
        assert_eq!(t.rows(), [vec!["1".to_string(), "2".to_string()]]);
        assert_eq!((t.ncols(), t.nrows()), (2, 1));
    }

    #[test]
    fn ragged_row_names_the_row() {
        let err = parse_table(b"a,b\n1,2,3\n", TableFormat::CsvWithHeader, "t").unwrap_err();
        assert!(matches!(
            err,
            TableError::Ragged {
                row: 1,
                found: 3,
                expected: 2,
                ..
            }
        ));
    }

    #[test]
    fn empty_input_is_an_error() {
        for fmt in [
            TableFormat::CsvWithHeader,
            TableFormat::CsvHeaderless,
            TableFormat::JsonlRows,
        ] {
            assert!(matches!(parse_table(b"", fmt, "t"), Err(TableError::Empty { .. })));
        }
    }

    #[test]
    fn fig3_shape_and_continent_column() {
        let t = fig3();
        assert_eq!((t.ncols(), t.nrows()), (4, 6));
        assert_eq!(
            t.column_values(3).unwrap(),
            [
                "Europe",
                "Europe",
                "North America",
                "Europe",
                "North America",
                "North America"
            ]
        );
        assert!(t.column_values(4).is_err());
    }

    #[test]
    fn single_row_column() {
        let t = table("t", None, &[&["x", "y"]]);
        assert_eq!(t.column_values(1).unwrap(), ["y"]);
    }

    #[test]
    fn whitespace_is_preserved_and_crlf_accepted() {
        let t = parse_table(b"a,b\r\n x ,\"y,z\"\r\n", TableFormat::CsvWithHeader, "t").unwrap();
        assert_eq!(t.cell(0, 0).unwrap(), " x ");
        assert_eq!(t.cell(0, 1).unwrap(), "y,z");
    }

    #[test]
    fn jsonl_with_and_without_header_line() {
        let t = parse_table(
            b"{\"headers\": [\"a\", \"b\"]}\n[\"1\", \"2\"]\n",
            TableFormat::JsonlRows,
            "t",
        )
        .unwrap();
        assert_eq!(t.headers().unwrap(), ["a", "b"]);
        let t = parse_table(b"[\"1\", \"2\"]\n[\"3\", \"4\"]\n", TableFormat::JsonlRows, "t").unwrap();
        assert!(t.headers().is_none());
        assert_eq!(t.nrows(), 2);
        let err = parse_table(b"[\"1\"]\n[\"3\", \"4\"]\n", TableFormat::JsonlRows, "t").unwrap_err();
        assert!(matches!(err, TableError::Ragged { row: 1, .. }));
    }

    #[test]
    fn oversized_table_rejected() {
        let rows = vec![vec![String::new(); 1001]; 1000];
        assert!(matches!(
            Table::new("big", None, rows),
            Err(TableError::TooLarge { .. })
        ));
    }

    // Independent check: strip separators and sign, then require digits with
    // at most one decimal point.
    fn numeric_oracle(s: &str) -> bool {
        let s = s.trim();
        let s = s.strip_prefix(['+', '-']).unwrap_or(s);
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.contains(',') {
            let groups: Vec<&str> = int.split(',').collect();
            let first_ok = (1..=3).contains(&groups[0].len());
            if !first_ok || groups[1..].iter().any(|g| g.len() != 3) {
                return false;
            }
        }
        let int: String = int.chars().filter(|&c| c != ',').collect();
        let digits = int.chars().chain(frac.chars()).count();
        digits > 0 && int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    }

    #[test]
    fn textual_classification() {
        let col = |vals: &[&str]| {
            let rows: Vec<&[&str]> = vals.iter().map(std::slice::from_ref).collect();
            table("t", None, &rows)
        };
        assert!(!is_textual_column(&col(&["12", "3.5", "-7"]), 0).unwrap());
        assert!(is_textual_column(&col(&["Alice", "Bob", "1"]), 0).unwrap());
        let thousands = ["1,000", "2,000"];
        let oracle_text = thousands.iter().filter(|v| !numeric_oracle(v)).count();
        assert_eq!(oracle_text, 0);
        assert!(!is_textual_column(&col(&thousands), 0).unwrap());
        assert!(!is_textual_column(&col(&["", " "]), 0).unwrap());
        // exactly half textual is not a strict majority
        assert!(!is_textual_column(&col(&["a", "1", ""]), 0).unwrap());
    }

    #[test]
    fn subject_proxy() {
        assert_eq!(subject_column_proxy(&fig3()), Some(0));
        let numeric = table("n", None, &[&["1", "2"], &["3", "4"]]);
        assert_eq!(subject_column_proxy(&numeric), None);
        let t = table("t", None, &[&["1", "2.0", "3", "Paris"], &["4", "5", "6", "Rome"]]);
        let oracle = (0..t.ncols()).find(|&c| {
            let vals = t.column_values(c).unwrap();
            vals.iter().filter(|v| !numeric_oracle(v)).count() * 2 > vals.len()
        });
        assert_eq!(oracle, Some(3));
        assert_eq!(subject_column_proxy(&t), Some(3));
    }

    proptest! {
        #[test]
        fn numeric_grammar_matches_oracle(s in "[+-]?[0-9,.]{0,8}") {
            prop_assert_eq!(is_numeric_cell(&s), numeric_oracle(&s));
        }

        #[test]
        fn round_trip_all_formats(
            ncols in 1usize..5,
            cells in proptest::collection::vec("[ a-zA-Z0-9,\"\n]{0,6}", 1..40),
            with_header in any::<bool>(),
        ) {
            let nrows = cells.len() / ncols;
            prop_assume!(nrows > 0);
            let rows: Vec<Vec<String>> = cells
                .chunks(ncols)
                .take(nrows)
                .map(|c| c.to_vec())
                .collect();
            let headers = with_header.then(|| (0..ncols).map(|i| format!("h{i}")).collect());
            let t = Table::new("t", headers, rows).unwrap();
            let formats: &[TableFormat] = if with_header {
                &[TableFormat::CsvWithHeader, TableFormat::JsonlRows]
            } else {
                &[TableFormat::CsvHeaderless, TableFormat::JsonlRows]
            };
            for &fmt in formats {
                let back = parse_table(&t.to_bytes(fmt), fmt, "t").unwrap();
                prop_assert_eq!(&back, &t);
            }
        }
    }
}
