//! Expert analysis stage: render result tables and artifact names into a
//! prompt and parse the backend's headed report.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{default_params, Backend, BackendError, BackendRequest, SamplingParams, Stage};
use crate::clock::Clock;
use crate::query::UserQuery;
use crate::sandbox::ResultTable;
use crate::template::render;

pub const ANALYSIS_TEMPLATE: &str = include_str!("../assets/analysis_prompt.txt");
pub const EXPANSIVE_CLAUSE: &str = "and your broader knowledge, provide insights and potential action points";

/// Tables longer than this are shown as head and tail halves.
pub const TABLE_ROW_CAP: usize = 50;

static FINDING_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[-*]\s*\[((?:[^\[\]]|\[[^\[\]]*\])+)\]\s*(.+?)\s*$").unwrap());
static CELL_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(.+?)\[\s*(\d+)\s*,\s*([^\]]+?)\s*\]$").unwrap());

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no tables or artifacts to analyze")]
    NothingToAnalyze,
    #[error("analysis response is not in the report format")]
    UnparseableReport,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFinding {
    pub statement: String,
    pub evidence_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub narrative: String,
    pub findings: Vec<ReportFinding>,
    pub recommendations: Vec<String>,
    pub generated_at: DateTime<Utc>,
}

/// Names a report may cite: artifacts, tables and cells of tables.
#[derive(Debug, Clone, Default)]
pub struct EvidenceIndex {
    artifacts: HashSet<String>,
    tables: HashMap<String, (usize, Vec<String>)>,
}

impl EvidenceIndex {
    pub fn new<'a>(artifact_names: impl IntoIterator<Item = &'a str>, tables: &[ResultTable]) -> Self {
        Self {
            artifacts: artifact_names.into_iter().map(str::to_string).collect(),
            tables: tables
                .iter()
                .map(|t| (t.name.clone(), (t.rows.len(), t.columns.clone())))
                .collect(),
        }
    }

    /// `name`, or `table[row, col]` with a 0-based row and a column index or name.
    pub fn resolves(&self, reference: &str) -> bool {
        let reference = reference.trim();
        if self.artifacts.contains(reference) || self.tables.contains_key(reference) {
            return true;
        }
        let Some(caps) = CELL_REF.captures(reference) else {
            return false;
        };
        let Some((n_rows, columns)) = self.tables.get(caps[1].trim()) else {
            return false;
        };
        let row_ok = caps[2].parse::<usize>().is_ok_and(|r| r < *n_rows);
        let col = &caps[3];
        let col_ok = col
            .parse::<usize>()
            .map_or_else(|_| columns.iter().any(|c| c == col), |c| c < columns.len());
        row_ok && col_ok
    }
}

fn serialize_table(table: &ResultTable) -> String {
    let n = table.rows.len();
    let mut out = format!("### {} ({} rows)\n", table.name, n);
    let capped = if n > TABLE_ROW_CAP {
        let half = TABLE_ROW_CAP / 2;
        let head = ResultTable {
            rows: table.rows[..half].to_vec(),
            ..table.clone()
        };
        let tail = ResultTable {
            rows: table.rows[n - half..].to_vec(),
            ..table.clone()
        };
        let tail_csv = tail.to_csv();
        let tail_rows = tail_csv.split_once('\n').map_or("", |(_, rest)| rest);
        format!(
            "{}... ({} rows omitted) ...\n{}",
            head.to_csv(),
            n - TABLE_ROW_CAP,
            tail_rows
        )
    } else {
        table.to_csv()
    };
    out.push_str(&capped);
    out
}

pub fn assemble_analysis_prompt(
    query: &UserQuery,
    dataset_ref: &str,
    tables: &[ResultTable],
    artifact_names: &[String],
) -> Result<String, AnalysisError> {
    if tables.is_empty() && artifact_names.is_empty() {
        return Err(AnalysisError::NothingToAnalyze);
    }
    let artifacts = if artifact_names.is_empty() {
        "(none)".to_string()
    } else {
        artifact_names.join(", ")
    };
    let serialized = if tables.is_empty() {
        "(none)\n".to_string()
    } else {
        tables.iter().map(serialize_table).collect::<Vec<_>>().join("\n")
    };
    Ok(render(
        ANALYSIS_TEMPLATE,
        &[
            ("query_id", &query.id),
            ("query", &query.text),
            ("dataset_ref", dataset_ref),
            ("artifact_names", &artifacts),
            ("tables", &serialized),
        ],
    ))
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Narrative,
    Findings,
    Recommendations,
}

fn header(line: &str) -> Option<(Section, &str)> {
    let trimmed = line.trim_start();
    for (name, section) in [
        ("NARRATIVE:", Section::Narrative),
        ("FINDINGS:", Section::Findings),
        ("RECOMMENDATIONS:", Section::Recommendations),
    ] {
        if trimmed.len() >= name.len() && trimmed[..name.len()].eq_ignore_ascii_case(name) {
            return Some((section, trimmed[name.len()..].trim()));
        }
    }
    None
}

/// Parses the report format. Findings whose evidence does not resolve are
/// dropped and described in the returned warnings.
pub fn parse_report(
    response: &str,
    evidence: &EvidenceIndex,
    generated_at: DateTime<Utc>,
) -> Result<(AnalysisReport, Vec<String>), AnalysisError> {
    let mut section = None;
    let mut saw_narrative = false;
    let mut narrative: Vec<String> = Vec::new();
    let mut findings = Vec::new();
    let mut recommendations = Vec::new();
    let mut warnings = Vec::new();

    let mut handle = |section: Section, text: &str, warnings: &mut Vec<String>| {
        let text = text.trim();
        if text.is_empty() {
            return;
        }
        match section {
            Section::Narrative => narrative.push(text.to_string()),
            Section::Findings => match FINDING_LINE.captures(text) {
                Some(caps) => {
                    let evidence_ref = caps[1].trim().to_string();
                    if evidence.resolves(&evidence_ref) {
                        findings.push(ReportFinding {
                            statement: caps[2].to_string(),
                            evidence_ref,
                        });
                    } else {
                        warnings.push(format!("dropped finding citing unknown evidence {evidence_ref:?}"));
                    }
                }
                None => warnings.push(format!("ignored malformed finding line {text:?}")),
            },
            Section::Recommendations => {
                let item = text.trim_start_matches(['-', '*']).trim();
                if !item.is_empty() {
                    recommendations.push(item.to_string());
                }
            }
        }
    };

    for line in response.lines() {
        if let Some((s, rest)) = header(line) {
            saw_narrative |= s == Section::Narrative;
            section = Some(s);
            handle(s, rest, &mut warnings);
            continue;
        }
        if let Some(s) = section {
            handle(s, line, &mut warnings);
        }
    }
    if !saw_narrative {
        return Err(AnalysisError::UnparseableReport);
    }
    Ok((
        AnalysisReport {
            narrative: narrative.join("\n"),
            findings,
            recommendations,
            generated_at,
        },
        warnings,
    ))
}

pub async fn analyze(
    prompt: &str,
    backend: &dyn Backend,
    evidence: &EvidenceIndex,
    clock: &dyn Clock,
    params: Option<SamplingParams>,
) -> Result<(AnalysisReport, Vec<String>), AnalysisError> {
    let request = BackendRequest::new(Stage::Analysis, prompt)
        .with_params(params.unwrap_or_else(|| default_params(Stage::Analysis)));
    let response = backend.complete(&request).await?;
    parse_report(&response, evidence, clock.now())
}
