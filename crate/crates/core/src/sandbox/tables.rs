use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArtifactKind, ExecutionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Number(f64),
    Text(String),
}

impl Cell {
    pub fn parse(raw: &str) -> Self {
        let trimmed = raw.trim();
        match trimmed.parse::<f64>() {
            Ok(v) if !trimmed.is_empty() && v.is_finite() => Cell::Number(v),
            _ => Cell::Text(raw.to_string()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Number(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    /// True when every non-empty cell of the column is a number.
    pub fn is_numeric_column(&self, index: usize) -> bool {
        self.rows.iter().all(|r| matches!(r.get(index), Some(Cell::Number(_))))
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            writer
                .write_record(row.iter().map(ToString::to_string))
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("table {name}: parse error at line {line}: {reason}")]
    TableParseError { name: String, line: u64, reason: String },
    #[error("tables can only be collected from a successful execution")]
    NotSuccessful,
}

/// Parses comma-separated text with a header row.
pub fn parse_table(name: &str, text: &str) -> Result<ResultTable, TableError> {
    let err = |line: u64, reason: &str| TableError::TableParseError {
        name: name.to_string(),
        line,
        reason: reason.to_string(),
    };
    if text.trim().is_empty() {
        return Err(err(1, "empty file, header row expected"));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| err(1, &e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, &e.to_string())
        })?;
        rows.push(record.iter().map(Cell::parse).collect());
    }
    Ok(ResultTable {
        name: name.to_string(),
        columns,
        rows,
    })
}

/// Parses every table artifact of a successful execution. Failures are
/// reported per file; tables that parse are still returned.
pub fn collect_tables(
    result: &ExecutionResult,
    workdir: &Path,
) -> Result<Vec<Result<ResultTable, TableError>>, TableError> {
    if !result.exit_status.is_success() {
        return Err(TableError::NotSuccessful);
    }
    Ok(result
        .artifacts
        .iter()
        .filter(|a| a.kind == ArtifactKind::Table)
        .map(|a| {
            let text = std::fs::read(workdir.join(&a.file)).map_err(|e| TableError::TableParseError {
                name: a.name.clone(),
                line: 0,
                reason: e.to_string(),
            })?;
            let text = String::from_utf8(text).map_err(|_| TableError::TableParseError {
                name: a.name.clone(),
                line: 1,
                reason: "not UTF-8".into(),
            })?;
            parse_table(&a.name, &text)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_table() {
        let t = parse_table("t", "a,b\n1,2\n").unwrap();
        assert_eq!(t.columns, vec!["a", "b"]);
        assert_eq!(t.rows, vec![vec![Cell::Number(1.0), Cell::Number(2.0)]]);
    }

    #[test]
    fn empty_file_fails_at_line_one() {
        assert_eq!(
            parse_table("t", ""),
            Err(TableError::TableParseError {
                name: "t".into(),
                line: 1,
                reason: "empty file, header row expected".into()
            })
        );
    }

    #[test]
    fn text_column() {
        let t = parse_table("t", "a\nx\n").unwrap();
        assert_eq!(t.rows, vec![vec![Cell::Text("x".into())]]);
        assert!(!t.is_numeric_column(0));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse_table("t", "a,b\n1,2\n3\n").unwrap_err();
        assert!(matches!(err, TableError::TableParseError { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn csv_round_trip() {
        let t = parse_table("t", "g,v\n\"a,b\",1.5\nc,2\n").unwrap();
        assert_eq!(parse_table("t", &t.to_csv()).unwrap(), t);
    }
}
