//! Structured-text tables emitted by `reconstruct`, `train`, and the two
//! benchmark subcommands.
//!
//! Schema, line by line:
//!
//! ```text
//! #qst-table v1
//! #meta key=value            (zero or more)
//! col1<TAB>col2<TAB>...      (header)
//! a<TAB>b<TAB>...            (rows, one per line, same arity as header)
//! ```
//!
//! Cells never contain tabs or newlines; absent values are a single `-`.
//! Fidelity and loss cells are printed with [`fmt_f64`] so a parse-back
//! recovers the exact binary value.

use std::fs;
use std::path::Path;

use qst_core::{Error, Result};

/// First line of every report file.
pub const SCHEMA_LINE: &str = "#qst-table v1";

/// Placeholder cell for values that do not apply to a row.
pub const EMPTY_CELL: &str = "-";

/// In-memory form of one report table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: Vec<S>) -> Self {
        Table {
            meta: Vec::new(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    /// Rows must match the header arity; a mismatch is a programming error.
    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.columns.len(), "table row arity");
        self.rows.push(cells);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&str> {
        let col = self.column_index(column)?;
        self.rows.get(row).map(|r| r[col].as_str())
    }

    /// Numeric view of a cell; `-` and malformed numbers are corruption.
    pub fn cell_f64(&self, row: usize, column: &str) -> Result<f64> {
        let text = self
            .cell(row, column)
            .ok_or_else(|| Error::Corruption(format!("no cell at row {row}, column {column}")))?;
        text.parse()
            .map_err(|_| Error::Corruption(format!("cell '{text}' is not a number")))
    }

    pub fn render(&self) -> String {
        let mut out = String::from(SCHEMA_LINE);
        out.push('\n');
        for (key, value) in &self.meta {
            out.push_str(&format!("#meta {key}={value}\n"));
        }
        out.push_str(&self.columns.join("\t"));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.render())
    }

    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text.lines();
        match lines.next() {
            Some(first) if first == SCHEMA_LINE => {}
            Some(first) => {
                return Err(Error::UnsupportedFormat(format!(
                    "report starts with '{first}', expected '{SCHEMA_LINE}'"
                )))
            }
            None => return Err(Error::Corruption("empty report".into())),
        }
        let mut meta = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#meta ") {
                let (key, value) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Corruption(format!("meta line '{line}' lacks '='")))?;
                meta.push((key.to_string(), value.to_string()));
                continue;
            }
            let cells: Vec<String> = line.split('\t').map(str::to_string).collect();
            match &columns {
                None => columns = Some(cells),
                Some(header) => {
                    if cells.len() != header.len() {
                        return Err(Error::Corruption(format!(
                            "row has {} cells, header has {}",
                            cells.len(),
                            header.len()
                        )));
                    }
                    rows.push(cells);
                }
            }
        }
        let columns = columns.ok_or_else(|| Error::Corruption("report has no header".into()))?;
        Ok(Table { meta, columns, rows })
    }

    pub fn read(path: &Path) -> Result<Table> {
        Table::parse(&fs::read_to_string(path)?)
    }
}

/// Round-trip-exact float formatting for fidelity and loss cells.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip_preserves_everything() {
        let mut t = Table::new(vec!["method", "fidelity"]);
        t.meta("command", "bench-noise");
        t.meta("levels", "0,0.25");
        t.row(vec!["mle".into(), fmt_f64(0.9931)]);
        t.row(vec!["linear".into(), EMPTY_CELL.into()]);
        let back = Table::parse(&t.render()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.cell_f64(0, "fidelity").unwrap(), 0.9931);
        assert_eq!(back.cell(1, "fidelity"), Some("-"));
    }

    #[test]
    fn formatted_floats_survive_a_parse_back_exactly() {
        for &v in &[1.0 / 3.0, 0.1 + 0.2, f64::MIN_POSITIVE, 0.997_123_456_789] {
            let cell = fmt_f64(v);
            let parsed: f64 = cell.parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits(), "cell {cell}");
        }
    }

    #[test]
    fn wrong_schema_and_ragged_rows_are_rejected() {
        assert!(matches!(
            Table::parse("#qst-table v2\na\n"),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            Table::parse("#qst-table v1\na\tb\n1\n"),
            Err(Error::Corruption(_))
        ));
        assert!(matches!(Table::parse(""), Err(Error::Corruption(_))));
    }
}
