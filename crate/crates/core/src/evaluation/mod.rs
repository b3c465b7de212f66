//! Scoring of generated visualizations against benchmark ground truth.
//!
//! Three representation criteria are computed here from specs and result
//! tables; the five presentation and application criteria come from judge
//! label files. A query is inaccurate when any of the eight fails.

mod ingest;
mod labels;
mod report;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, DatasetRef};
use crate::sandbox::{Cell, ResultTable};

pub use ingest::{ingest_benchmark, parse_vql, BenchmarkSource, IngestOutcome};
pub use labels::{ingest_judge_labels, HumanLabels};
pub use report::{accuracy_table, build_report, AccuracyRow, AccuracyTable, DatasetSummary, EvaluationReport};

/// Tolerance for numeric cells when comparing result tables.
pub const TABLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("benchmark has no queries")]
    EmptyBenchmark,
    #[error("{inaccurate} inaccurate queries out of {total}")]
    InvalidCounts { total: usize, inaccurate: usize },
    #[error("column {column:?} does not resolve against the dataset")]
    UnresolvedColumn { column: String },
    #[error("malformed label file at line {line}: {reason}")]
    MalformedLabelFile { line: usize, reason: String },
    #[error("duplicate query id {0:?}")]
    DuplicateQueryId(String),
    #[error("scorecard for {query_id} does not cover exactly the eight criteria")]
    IncompleteScorecard { query_id: String },
    #[error("invalid benchmark manifest: {0}")]
    InvalidManifest(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("cannot ingest benchmark: {0}")]
    Ingest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    DataMapping,
    MarkCorrectness,
    AxesQuality,
    ColorMapping,
    ImageSimilarity,
    PerceptualSimilarity,
    VisualizationLiteracy,
    Significance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Representation,
    Presentation,
    Application,
}

impl Criterion {
    pub const ALL: [Criterion; 8] = [
        Criterion::DataMapping,
        Criterion::MarkCorrectness,
        Criterion::AxesQuality,
        Criterion::ColorMapping,
        Criterion::ImageSimilarity,
        Criterion::PerceptualSimilarity,
        Criterion::VisualizationLiteracy,
        Criterion::Significance,
    ];

    /// Criteria computed from specs and tables.
    pub const AUTOMATIC: [Criterion; 3] = [
        Criterion::DataMapping,
        Criterion::MarkCorrectness,
        Criterion::AxesQuality,
    ];

    /// Criteria supplied by judge labels.
    pub const HUMAN: [Criterion; 5] = [
        Criterion::ColorMapping,
        Criterion::ImageSimilarity,
        Criterion::PerceptualSimilarity,
        Criterion::VisualizationLiteracy,
        Criterion::Significance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::DataMapping => "data_mapping",
            Criterion::MarkCorrectness => "mark_correctness",
            Criterion::AxesQuality => "axes_quality",
            Criterion::ColorMapping => "color_mapping",
            Criterion::ImageSimilarity => "image_similarity",
            Criterion::PerceptualSimilarity => "perceptual_similarity",
            Criterion::VisualizationLiteracy => "visualization_literacy",
            Criterion::Significance => "significance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Column heading used in the text report.
    pub fn short_label(self) -> &'static str {
        match self {
            Criterion::DataMapping => "DataMap",
            Criterion::MarkCorrectness => "MarkCorr",
            Criterion::AxesQuality => "Axes",
            Criterion::ColorMapping => "Color",
            Criterion::ImageSimilarity => "ImgSim",
            Criterion::PerceptualSimilarity => "Percept",
            Criterion::VisualizationLiteracy => "VisLit",
            Criterion::Significance => "Signif",
        }
    }

    pub fn layer(self) -> Layer {
        match self {
            Criterion::DataMapping | Criterion::MarkCorrectness | Criterion::AxesQuality => Layer::Representation,
            Criterion::ColorMapping | Criterion::ImageSimilarity | Criterion::PerceptualSimilarity => {
                Layer::Presentation
            }
            Criterion::VisualizationLiteracy | Criterion::Significance => Layer::Application,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Bar,
    Line,
    Scatter,
    Pie,
    Other,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    None,
    Count,
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    pub op: String,
    pub value: serde_json::Value,
}

/// Row-count placeholder accepted as `y` for count aggregates.
pub const ROWS_REF: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisSpec {
    pub chart_kind: ChartKind,
    pub x: String,
    pub y: String,
    #[serde(default)]
    pub aggregate: Aggregate,
    #[serde(default)]
    pub filters: Vec<Filter>,
}

impl VisSpec {
    /// `y` with a count of the grouping column written as `*`.
    pub fn canonical_y(&self) -> &str {
        if self.aggregate == Aggregate::Count && self.y == self.x {
            ROWS_REF
        } else {
            &self.y
        }
    }

    /// Every column reference must resolve; `y` may be `*` for counts.
    pub fn validate(&self, dataset: &DatasetRef) -> Result<(), EvaluationError> {
        let unresolved = |column: &str| EvaluationError::UnresolvedColumn {
            column: column.to_string(),
        };
        if dataset.resolve_column(&self.x).is_none() {
            return Err(unresolved(&self.x));
        }
        if !(self.y == ROWS_REF && self.aggregate == Aggregate::Count) && dataset.resolve_column(&self.y).is_none() {
            return Err(unresolved(&self.y));
        }
        if let Some(f) = self
            .filters
            .iter()
            .find(|f| dataset.resolve_column(&f.column).is_none())
        {
            return Err(unresolved(&f.column));
        }
        Ok(())
    }
}

/// A table of values without a name, as stored in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl From<ResultTable> for TableData {
    fn from(t: ResultTable) -> Self {
        Self {
            columns: t.columns,
            rows: t.rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkQuery {
    pub id: String,
    pub nl_query: String,
    pub ground_truth: VisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_table: Option<TableData>,
    /// Grouping key for per-dataset reporting; defaults to the benchmark name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub benchmark_name: String,
    pub dataset: DatasetRef,
    pub queries: Vec<BenchmarkQuery>,
}

fn read_text(path: &Path) -> Result<String, EvaluationError> {
    std::fs::read_to_string(path).map_err(|e| EvaluationError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

impl BenchmarkManifest {
    pub fn from_json(text: &str) -> Result<Self, EvaluationError> {
        let manifest: Self = serde_json::from_str(text).map_err(|e| EvaluationError::InvalidManifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, EvaluationError> {
        Self::from_json(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<(), EvaluationError> {
        self.dataset
            .validate()
            .map_err(|e| EvaluationError::InvalidManifest(e.to_string()))?;
        let mut seen = HashSet::new();
        for q in &self.queries {
            if !seen.insert(q.id.as_str()) {
                return Err(EvaluationError::DuplicateQueryId(q.id.clone()));
            }
            q.ground_truth.validate(&self.dataset)?;
        }
        Ok(())
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.queries.iter().map(|q| q.id.clone()).collect()
    }

    pub fn dataset_name<'a>(&'a self, q: &'a BenchmarkQuery) -> &'a str {
        q.dataset_name.as_deref().unwrap_or(&self.benchmark_name)
    }
}

/// What the system produced for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedVis {
    pub spec: VisSpec,
    pub table: TableData,
}

pub type GeneratedSet = BTreeMap<String, GeneratedVis>;

pub fn load_generated(path: &Path) -> Result<GeneratedSet, EvaluationError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| EvaluationError::InvalidManifest(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationScore {
    pub data_mapping: bool,
    pub mark_correctness: bool,
    pub axes_quality: bool,
}

fn cells_match(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Number(x), Cell::Number(y)) => (x - y).abs() <= TABLE_TOLERANCE,
        (Cell::Text(x), Cell::Text(y)) => x.trim() == y.trim(),
        _ => false,
    }
}

/// Equal up to row order, with numeric cells within [`TABLE_TOLERANCE`].
/// Column headers are not compared.
pub fn tables_match(generated: &TableData, truth: &TableData) -> bool {
    if generated.columns.len() != truth.columns.len() || generated.rows.len() != truth.rows.len() {
        return false;
    }
    let mut used = vec![false; truth.rows.len()];
    generated.rows.iter().all(|g| {
        let hit = truth
            .rows
            .iter()
            .enumerate()
            .position(|(i, t)| !used[i] && g.len() == t.len() && g.iter().zip(t).all(|(a, b)| cells_match(a, b)));
        match hit {
            Some(i) => {
                used[i] = true;
                true
            }
            None => false,
        }
    })
}

/// Shares of a whole over categories: a categorical `x` with a count or sum.
pub fn is_categorical_share(spec: &VisSpec, dataset: &DatasetRef) -> bool {
    let categorical = dataset
        .resolve_column(&spec.x)
        .and_then(|(t, c)| dataset.column_kind(&format!("{t}.{c}")))
        == Some(ColumnKind::Categorical);
    categorical && matches!(spec.aggregate, Aggregate::Count | Aggregate::Sum)
}

/// Same chart kind, or pie and bar on a categorical-share query.
pub fn marks_equivalent(generated: &VisSpec, truth: &VisSpec, dataset: &DatasetRef) -> bool {
    if generated.chart_kind == truth.chart_kind {
        return true;
    }
    let pie_bar = matches!(
        (generated.chart_kind, truth.chart_kind),
        (ChartKind::Pie, ChartKind::Bar) | (ChartKind::Bar, ChartKind::Pie)
    );
    pie_bar && is_categorical_share(truth, dataset)
}

fn same_column(dataset: &DatasetRef, a: &str, b: &str) -> bool {
    if a == ROWS_REF || b == ROWS_REF {
        return a == b;
    }
    match (dataset.resolve_column(a), dataset.resolve_column(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

pub fn score_representation(
    generated: &VisSpec,
    generated_table: &TableData,
    truth: &VisSpec,
    truth_table: &TableData,
    dataset: &DatasetRef,
) -> Result<RepresentationScore, EvaluationError> {
    generated.validate(dataset)?;
    truth.validate(dataset)?;
    Ok(RepresentationScore {
        data_mapping: tables_match(generated_table, truth_table),
        mark_correctness: marks_equivalent(generated, truth, dataset),
        axes_quality: same_column(dataset, &generated.x, &truth.x)
            && same_column(dataset, generated.canonical_y(), truth.canonical_y())
            && generated.aggregate == truth.aggregate,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationScorecard {
    pub query_id: String,
    pub dataset_name: String,
    pub criteria: BTreeMap<Criterion, bool>,
    pub inaccurate: bool,
}

impl EvaluationScorecard {
    pub fn new(
        query_id: impl Into<String>,
        dataset_name: impl Into<String>,
        criteria: BTreeMap<Criterion, bool>,
    ) -> Result<Self, EvaluationError> {
        let query_id = query_id.into();
        if criteria.len() != Criterion::ALL.len() {
            return Err(EvaluationError::IncompleteScorecard { query_id });
        }
        let inaccurate = criteria.values().any(|pass| !pass);
        Ok(Self {
            query_id,
            dataset_name: dataset_name.into(),
            criteria,
            inaccurate,
        })
    }

    /// Scorecard passing everything except `failed`.
    pub fn with_failures(query_id: impl Into<String>, dataset_name: impl Into<String>, failed: &[Criterion]) -> Self {
        let criteria = Criterion::ALL.into_iter().map(|c| (c, !failed.contains(&c))).collect();
        Self::new(query_id, dataset_name, criteria).expect("all criteria present")
    }

    pub fn failed(&self) -> Vec<Criterion> {
        self.criteria
            .iter()
            .filter(|(_, pass)| !**pass)
            .map(|(c, _)| *c)
            .collect()
    }
}

/// Fraction of accurate queries.
pub fn accuracy(total_queries: usize, inaccurate_queries: usize) -> Result<f64, EvaluationError> {
    if total_queries == 0 {
        return Err(EvaluationError::EmptyBenchmark);
    }
    if inaccurate_queries > total_queries {
        return Err(EvaluationError::InvalidCounts {
            total: total_queries,
            inaccurate: inaccurate_queries,
        });
    }
    Ok((total_queries - inaccurate_queries) as f64 / total_queries as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InaccuracyBreakdown {
    /// Failures per criterion; a query may count under several.
    pub counts: BTreeMap<Criterion, usize>,
    pub failure_sum: usize,
    /// Queries with at least one failure.
    pub distinct_inaccurate: usize,
}

impl InaccuracyBreakdown {
    pub fn count(&self, c: Criterion) -> usize {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    /// Counts in [`Criterion::ALL`] order.
    pub fn ordered_counts(&self) -> [usize; 8] {
        Criterion::ALL.map(|c| self.count(c))
    }
}

pub fn inaccuracy_breakdown(scorecards: &[EvaluationScorecard]) -> InaccuracyBreakdown {
    let mut counts: BTreeMap<Criterion, usize> = Criterion::ALL.into_iter().map(|c| (c, 0)).collect();
    let mut distinct = 0;
    for card in scorecards {
        let failed = card.failed();
        if !failed.is_empty() {
            distinct += 1;
        }
        for c in failed {
            *counts.entry(c).or_default() += 1;
        }
    }
    InaccuracyBreakdown {
        failure_sum: counts.values().sum(),
        counts,
        distinct_inaccurate: distinct,
    }
}

/// Scores every manifest query. Queries without a generated visualization
/// fail all representation criteria; queries without a truth table are
/// judged on data mapping by spec equality.
pub fn evaluate_benchmark(
    manifest: &BenchmarkManifest,
    generated: &GeneratedSet,
    labels: &HumanLabels,
) -> Result<(Vec<EvaluationScorecard>, Vec<String>), EvaluationError> {
    if manifest.queries.is_empty() {
        return Err(EvaluationError::EmptyBenchmark);
    }
    let mut warnings = labels.warnings.clone();
    let mut cards = Vec::with_capacity(manifest.queries.len());
    let mut missing = 0;
    let mut spec_only = 0;
    for q in &manifest.queries {
        let auto = match generated.get(&q.id) {
            None => {
                missing += 1;
                RepresentationScore {
                    data_mapping: false,
                    mark_correctness: false,
                    axes_quality: false,
                }
            }
            Some(g) => match &q.truth_table {
                Some(truth_table) => {
                    score_representation(&g.spec, &g.table, &q.ground_truth, truth_table, &manifest.dataset)?
                }
                None => {
                    spec_only += 1;
                    let mut score =
                        score_representation(&g.spec, &g.table, &q.ground_truth, &g.table, &manifest.dataset)?;
                    score.data_mapping = score.axes_quality && g.spec.filters == q.ground_truth.filters;
                    score
                }
            },
        };
        let mut criteria = BTreeMap::from([
            (Criterion::DataMapping, auto.data_mapping),
            (Criterion::MarkCorrectness, auto.mark_correctness),
            (Criterion::AxesQuality, auto.axes_quality),
        ]);
        criteria.extend(labels.for_query(&q.id));
        cards.push(EvaluationScorecard::new(
            q.id.clone(),
            manifest.dataset_name(q),
            criteria,
        )?);
    }
    if missing > 0 {
        warnings.push(format!(
            "{missing} queries have no generated visualization and fail representation"
        ));
    }
    if spec_only > 0 {
        warnings.push(format!(
            "{spec_only} queries have no truth table; data mapping judged by spec equality"
        ));
    }
    Ok((cards, warnings))
}
