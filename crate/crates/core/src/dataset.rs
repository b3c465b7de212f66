//! Dataset references and their schemas.
//!
//! Scripts never receive dataset contents through a prompt. They receive the
//! location and the schema, and read the data themselves inside the sandbox.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static TEMPORAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\d{4}-\d{2}(-\d{2})?([ T]\d{2}:\d{2}(:\d{2})?)?$|^\d{1,2}/\d{1,2}/\d{4}$").unwrap());

/// Rows sampled when inferring column kinds.
const INFER_SAMPLE_ROWS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("invalid dataset schema: {0}")]
    InvalidSchema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Temporal,
    Text,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Temporal => "temporal",
            ColumnKind::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub table: String,
    pub columns: Vec<ColumnSpec>,
    pub row_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub url_or_path: String,
    pub schema: Vec<TableSchema>,
}

impl DatasetRef {
    pub fn new(url_or_path: impl Into<String>, schema: Vec<TableSchema>) -> Result<Self, DatasetError> {
        let dataset = Self {
            url_or_path: url_or_path.into(),
            schema,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.schema.is_empty() {
            return Err(DatasetError::InvalidSchema("no tables".into()));
        }
        for table in &self.schema {
            if table.columns.is_empty() {
                return Err(DatasetError::InvalidSchema(format!(
                    "table {} has no columns",
                    table.table
                )));
            }
            let mut seen = HashSet::new();
            for col in &table.columns {
                if !seen.insert(col.name.as_str()) {
                    return Err(DatasetError::InvalidSchema(format!(
                        "duplicate column {} in table {}",
                        col.name, table.table
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads a dataset from a CSV file, a directory of CSV files (one table
    /// per file) or a JSON descriptor holding a serialized `DatasetRef`.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let unreadable = |reason: String| DatasetError::Unreadable {
            path: path.display().to_string(),
            reason,
        };
        let meta = std::fs::metadata(path).map_err(|e| unreadable(e.to_string()))?;
        if meta.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| unreadable(e.to_string()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(unreadable("directory contains no .csv files".into()));
            }
            let schema = files.iter().map(|f| infer_table(f)).collect::<Result<Vec<_>, _>>()?;
            return Self::new(path.display().to_string(), schema);
        }
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("json")) {
            let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
            let dataset: DatasetRef = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
            dataset.validate()?;
            return Ok(dataset);
        }
        Self::new(path.display().to_string(), vec![infer_table(path)?])
    }

    /// Column names across all tables. A name that occurs in more than one
    /// table is qualified as `table.column`.
    pub fn qualified_columns(&self) -> Vec<(String, ColumnKind)> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &self.schema {
            for c in &t.columns {
                *counts.entry(c.name.as_str()).or_default() += 1;
            }
        }
        self.schema
            .iter()
            .flat_map(|t| {
                let counts = &counts;
                t.columns.iter().map(move |c| {
                    let name = if counts[c.name.as_str()] > 1 {
                        format!("{}.{}", t.table, c.name)
                    } else {
                        c.name.clone()
                    };
                    (name, c.kind)
                })
            })
            .collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        if let Some((table, col)) = name.split_once('.') {
            if self
                .schema
                .iter()
                .any(|t| t.table == table && t.columns.iter().any(|c| c.name == col))
            {
                return true;
            }
        }
        self.schema.iter().any(|t| t.columns.iter().any(|c| c.name == name))
    }

    /// `(table, column)` a reference points to. Qualified names win; an
    /// unqualified name resolves to its first occurrence.
    pub fn resolve_column(&self, name: &str) -> Option<(&str, &str)> {
        let name = name.trim();
        if let Some((table, col)) = name.split_once('.') {
            if let Some(hit) = self.schema.iter().find_map(|t| {
                (t.table == table)
                    .then(|| t.columns.iter().find(|c| c.name == col))
                    .flatten()
                    .map(|c| (t.table.as_str(), c.name.as_str()))
            }) {
                return Some(hit);
            }
        }
        self.schema.iter().find_map(|t| {
            t.columns
                .iter()
                .find(|c| c.name == name)
                .map(|c| (t.table.as_str(), c.name.as_str()))
        })
    }

    pub fn column_kind(&self, name: &str) -> Option<ColumnKind> {
        self.schema
            .iter()
            .flat_map(|t| t.columns.iter().map(move |c| (t, c)))
            .find(|(t, c)| c.name == name || format!("{}.{}", t.table, c.name) == name)
            .map(|(_, c)| c.kind)
    }
}

fn infer_table(path: &Path) -> Result<TableSchema, DatasetError> {
    let unreadable = |reason: String| DatasetError::Unreadable {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| unreadable(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| unreadable(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(unreadable("missing header row".into()));
    }
    let mut samples: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    let mut rows = 0u64;
    for record in reader.records() {
        let record = record.map_err(|e| unreadable(e.to_string()))?;
        if (rows as usize) < INFER_SAMPLE_ROWS {
            for (i, field) in record.iter().enumerate().take(headers.len()) {
                samples[i].push(field.trim().to_string());
            }
        }
        rows += 1;
    }
    let columns = headers
        .into_iter()
        .zip(samples)
        .map(|(name, values)| ColumnSpec {
            kind: infer_kind(&values),
            name,
        })
        .collect();
    let table = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    Ok(TableSchema {
        table,
        columns,
        row_count: rows,
    })
}

fn infer_kind(values: &[String]) -> ColumnKind {
    let present: Vec<&str> = values.iter().map(String::as_str).filter(|v| !v.is_empty()).collect();
    if present.is_empty() {
        return ColumnKind::Text;
    }
    if present.iter().all(|v| v.parse::<f64>().is_ok()) {
        return ColumnKind::Numeric;
    }
    if present.iter().all(|v| TEMPORAL.is_match(v)) {
        return ColumnKind::Temporal;
    }
    let distinct: HashSet<&str> = present.iter().copied().collect();
    let avg_len = present.iter().map(|v| v.len()).sum::<usize>() / present.len();
    if avg_len <= 40 && (distinct.len() <= 20 || distinct.len() * 2 <= present.len()) {
        ColumnKind::Categorical
    } else {
        ColumnKind::Text
    }
}
