//! Normalizes public benchmark formats into a [`BenchmarkManifest`].

use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

use super::{Aggregate, BenchmarkManifest, BenchmarkQuery, ChartKind, EvaluationError, Filter, VisSpec, ROWS_REF};
use crate::dataset::DatasetRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkSource {
    NvBench,
    Nl4dv,
}

impl BenchmarkSource {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nvbench" => Some(Self::NvBench),
            "nl4dv" => Some(Self::Nl4dv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub manifest: BenchmarkManifest,
    /// One line per skipped entry.
    pub warnings: Vec<String>,
}

static VQL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)^\s*visualize\s+(.+?)\s+select\s+(.+?)\s*,\s*(.+?)\s+from\s+(\S+)(.*)$").expect("valid regex")
});
static WHERE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)\bwhere\s+(.+?)\s*(?:\bgroup\s+by\b|\border\s+by\b|\bbin\b|$)").expect("valid regex")
});
static AGG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(count|sum|avg|mean)\s*\(\s*(.+?)\s*\)$").expect("valid regex"));
static CONDITION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(\S+?)\s*(!=|<>|<=|>=|=|<|>|\blike\b)\s*(.+)$").expect("valid regex"));
static AND: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\s+and\s+").expect("valid regex"));

fn chart_kind(name: &str) -> ChartKind {
    let name = name.to_ascii_lowercase();
    if name.contains("pie") {
        ChartKind::Pie
    } else if name.contains("bar") {
        ChartKind::Bar
    } else if name.contains("line") {
        ChartKind::Line
    } else if name.contains("scatter") || name.contains("point") {
        ChartKind::Scatter
    } else {
        ChartKind::Other
    }
}

fn literal(raw: &str) -> Value {
    let raw = raw.trim();
    let unquoted = raw
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .or_else(|| raw.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')));
    match unquoted {
        Some(s) => Value::String(s.to_string()),
        None => raw
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map_or_else(|| Value::String(raw.to_string()), Value::Number),
    }
}

fn parse_filters(clause: &str) -> Result<Vec<Filter>, String> {
    let lowered = clause.to_ascii_lowercase();
    if lowered.contains(" or ") || lowered.contains("select") {
        return Err(format!("unsupported WHERE clause {clause:?}"));
    }
    AND.split(clause)
        .map(|cond| {
            let caps = CONDITION
                .captures(cond.trim())
                .ok_or_else(|| format!("unsupported condition {cond:?}"))?;
            let op = match caps[2].to_ascii_lowercase().as_str() {
                "<>" => "!=".to_string(),
                other => other.to_string(),
            };
            Ok(Filter {
                column: caps[1].to_string(),
                op,
                value: literal(&caps[3]),
            })
        })
        .collect()
}

/// Parses the subset of VQL used by nvBench:
/// `Visualize <CHART> SELECT <x> , <y> FROM <table> [WHERE ...] ...`.
pub fn parse_vql(vql: &str) -> Result<VisSpec, String> {
    let caps = VQL.captures(vql).ok_or_else(|| format!("not a VQL query: {vql:?}"))?;
    let x = caps[2].trim().to_string();
    let (aggregate, y) = match AGG.captures(caps[3].trim()) {
        Some(agg) => {
            let aggregate = match agg[1].to_ascii_lowercase().as_str() {
                "count" => Aggregate::Count,
                "sum" => Aggregate::Sum,
                _ => Aggregate::Mean,
            };
            let y = if aggregate == Aggregate::Count && agg[2].trim() == ROWS_REF {
                ROWS_REF.to_string()
            } else {
                agg[2].trim().to_string()
            };
            (aggregate, y)
        }
        None => (Aggregate::None, caps[3].trim().to_string()),
    };
    let filters = match WHERE.captures(&caps[5]) {
        Some(w) => parse_filters(&w[1])?,
        None => Vec::new(),
    };
    Ok(VisSpec {
        chart_kind: chart_kind(&caps[1]),
        x,
        y,
        aggregate,
        filters,
    })
}

/// Maps join aliases such as `T1.name` onto a column the dataset knows.
fn normalize_column(dataset: &DatasetRef, column: &str) -> Option<String> {
    if column == ROWS_REF {
        return Some(column.to_string());
    }
    if dataset.resolve_column(column).is_some() {
        return Some(column.to_string());
    }
    let (_, bare) = column.rsplit_once('.')?;
    dataset.resolve_column(bare).map(|_| bare.to_string())
}

fn normalize_spec(dataset: &DatasetRef, mut spec: VisSpec) -> Result<VisSpec, String> {
    let fix = |c: &str| normalize_column(dataset, c).ok_or_else(|| format!("column {c:?} does not resolve"));
    spec.x = fix(&spec.x)?;
    if spec.y == ROWS_REF && spec.aggregate != Aggregate::Count {
        return Err("`*` is only valid under COUNT".into());
    }
    if spec.aggregate == Aggregate::Count && spec.y != ROWS_REF && dataset.resolve_column(&spec.y).is_none() {
        spec.y = ROWS_REF.to_string();
    }
    spec.y = fix(&spec.y)?;
    spec.y = spec.canonical_y().to_string();
    for f in &mut spec.filters {
        f.column = fix(&f.column)?;
    }
    spec.validate(dataset).map_err(|e| e.to_string())?;
    Ok(spec)
}

#[derive(Deserialize)]
struct NvEntry {
    vis_query: NvVisQuery,
    #[serde(default)]
    db_id: Option<String>,
    nl_queries: Vec<String>,
}

#[derive(Deserialize)]
struct NvVisQuery {
    #[serde(rename = "VQL")]
    vql: String,
}

#[derive(Deserialize)]
struct Nl4dvEntry {
    query: String,
    #[serde(default)]
    dataset: Option<String>,
    #[serde(rename = "vlSpec")]
    vl_spec: Value,
}

fn nl4dv_spec(vl: &Value) -> Result<VisSpec, String> {
    let mark = match &vl["mark"] {
        Value::String(s) => s.clone(),
        Value::Object(m) => m.get("type").and_then(Value::as_str).unwrap_or_default().to_string(),
        _ => return Err("vlSpec has no mark".into()),
    };
    let channel = |name: &str| -> (Option<String>, Aggregate) {
        let enc = &vl["encoding"][name];
        let field = enc["field"].as_str().map(str::to_string);
        let aggregate = match enc["aggregate"].as_str().map(str::to_ascii_lowercase).as_deref() {
            Some("count") => Aggregate::Count,
            Some("sum") => Aggregate::Sum,
            Some("mean") | Some("average") | Some("avg") => Aggregate::Mean,
            _ => Aggregate::None,
        };
        (field, aggregate)
    };
    let (mut x, mut x_agg) = channel("x");
    let (mut y, mut y_agg) = channel("y");
    if chart_kind(&mark) == ChartKind::Pie || mark.eq_ignore_ascii_case("arc") {
        (x, x_agg) = channel("color");
        (y, y_agg) = channel("theta");
    }
    // Horizontal charts aggregate on x; the grouping channel becomes x.
    if x_agg != Aggregate::None && y_agg == Aggregate::None {
        std::mem::swap(&mut x, &mut y);
        std::mem::swap(&mut x_agg, &mut y_agg);
    }
    let x = x.ok_or("vlSpec has no grouping field")?;
    let y = match (y, y_agg) {
        (Some(f), _) => f,
        (None, Aggregate::Count) => ROWS_REF.to_string(),
        (None, _) => return Err("vlSpec has no measure field".into()),
    };
    let kind = if mark.eq_ignore_ascii_case("arc") {
        ChartKind::Pie
    } else {
        chart_kind(&mark)
    };
    Ok(VisSpec {
        chart_kind: kind,
        x,
        y,
        aggregate: y_agg,
        filters: Vec::new(),
    })
}

/// Converts benchmark JSON into a manifest over `dataset`. Entries whose
/// spec cannot be parsed or whose columns do not resolve are skipped.
pub fn ingest_benchmark(
    source: BenchmarkSource,
    text: &str,
    dataset: DatasetRef,
    benchmark_name: &str,
) -> Result<IngestOutcome, EvaluationError> {
    let bad = |e: serde_json::Error| EvaluationError::Ingest(e.to_string());
    let mut queries = Vec::new();
    let mut warnings = Vec::new();
    match source {
        BenchmarkSource::NvBench => {
            let entries: std::collections::BTreeMap<String, NvEntry> = serde_json::from_str(text).map_err(bad)?;
            for (key, entry) in entries {
                let spec = parse_vql(&entry.vis_query.vql).and_then(|s| normalize_spec(&dataset, s));
                let spec = match spec {
                    Ok(s) => s,
                    Err(e) => {
                        warnings.push(format!("{key}: skipped, {e}"));
                        continue;
                    }
                };
                for (i, nl) in entry.nl_queries.iter().enumerate() {
                    queries.push(BenchmarkQuery {
                        id: format!("{key}-{i}"),
                        nl_query: nl.clone(),
                        ground_truth: spec.clone(),
                        truth_table: None,
                        dataset_name: entry.db_id.clone(),
                    });
                }
            }
        }
        BenchmarkSource::Nl4dv => {
            let entries: Vec<Nl4dvEntry> = serde_json::from_str(text).map_err(bad)?;
            for (i, entry) in entries.into_iter().enumerate() {
                let id = format!("nl4dv-{i:04}");
                match nl4dv_spec(&entry.vl_spec).and_then(|s| normalize_spec(&dataset, s)) {
                    Ok(spec) => queries.push(BenchmarkQuery {
                        id,
                        nl_query: entry.query,
                        ground_truth: spec,
                        truth_table: None,
                        dataset_name: entry.dataset,
                    }),
                    Err(e) => warnings.push(format!("{id}: skipped, {e}")),
                }
            }
        }
    }
    if queries.is_empty() {
        return Err(EvaluationError::EmptyBenchmark);
    }
    let manifest = BenchmarkManifest {
        benchmark_name: benchmark_name.to_string(),
        dataset,
        queries,
    };
    manifest.validate()?;
    Ok(IngestOutcome { manifest, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnKind, ColumnSpec, TableSchema};

    fn dataset() -> DatasetRef {
        let col = |name: &str, kind| ColumnSpec {
            name: name.into(),
            kind,
        };
        DatasetRef::new(
            "cars.csv",
            vec![TableSchema {
                table: "cars".into(),
                columns: vec![
                    col("origin", ColumnKind::Categorical),
                    col("horsepower", ColumnKind::Numeric),
                    col("year", ColumnKind::Numeric),
                ],
                row_count: 10,
            }],
        )
        .unwrap()
    }

    #[test]
    fn vql_with_aggregate_and_filter() {
        let spec = parse_vql(
            "Visualize BAR SELECT origin , AVG(horsepower) FROM cars WHERE year > 1975 AND origin != 'Japan' GROUP BY origin",
        )
        .unwrap();
        assert_eq!(spec.chart_kind, ChartKind::Bar);
        assert_eq!((spec.x.as_str(), spec.y.as_str()), ("origin", "horsepower"));
        assert_eq!(spec.aggregate, Aggregate::Mean);
        assert_eq!(spec.filters.len(), 2);
        assert_eq!(spec.filters[0].value, serde_json::json!(1975.0));
        assert_eq!(spec.filters[1].value, serde_json::json!("Japan"));
        assert!(parse_vql("SELECT 1").is_err());
        assert!(parse_vql("Visualize PIE SELECT a , COUNT(a) FROM t WHERE a = 1 OR a = 2").is_err());
    }

    #[test]
    fn nvbench_entries_expand_and_skip() {
        let text = r#"{
            "1": {"vis_query": {"VQL": "Visualize PIE SELECT origin , COUNT(origin) FROM cars GROUP BY origin"},
                  "db_id": "car_1", "nl_queries": ["share of cars by origin", "origin proportions"]},
            "2": {"vis_query": {"VQL": "Visualize LINE SELECT T1.year , SUM(T1.horsepower) FROM cars AS T1"},
                  "db_id": "car_1", "nl_queries": ["horsepower per year"]},
            "3": {"vis_query": {"VQL": "Visualize BAR SELECT maker , COUNT(maker) FROM makers"},
                  "db_id": "car_1", "nl_queries": ["makers"]}
        }"#;
        let out = ingest_benchmark(BenchmarkSource::NvBench, text, dataset(), "nvbench").unwrap();
        let ids: Vec<&str> = out.manifest.queries.iter().map(|q| q.id.as_str()).collect();
        assert_eq!(ids, vec!["1-0", "1-1", "2-0"]);
        assert_eq!(out.manifest.queries[0].ground_truth.y, ROWS_REF);
        assert_eq!(out.manifest.queries[2].ground_truth.x, "year");
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].starts_with("3:"));
    }

    #[test]
    fn nl4dv_horizontal_and_arc() {
        let text = r#"[
            {"query": "count by origin", "vlSpec": {"mark": "bar",
                "encoding": {"y": {"field": "origin"}, "x": {"aggregate": "count"}}}},
            {"query": "origin share", "dataset": "cars", "vlSpec": {"mark": {"type": "arc"},
                "encoding": {"color": {"field": "origin"}, "theta": {"field": "horsepower", "aggregate": "sum"}}}},
            {"query": "nothing", "vlSpec": {"encoding": {}}}
        ]"#;
        let out = ingest_benchmark(BenchmarkSource::Nl4dv, text, dataset(), "nl4dv").unwrap();
        assert_eq!(out.manifest.queries.len(), 2);
        let first = &out.manifest.queries[0].ground_truth;
        assert_eq!(
            (first.x.as_str(), first.y.as_str(), first.aggregate),
            ("origin", ROWS_REF, Aggregate::Count)
        );
        let second = &out.manifest.queries[1].ground_truth;
        assert_eq!(second.chart_kind, ChartKind::Pie);
        assert_eq!(second.aggregate, Aggregate::Sum);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn nothing_usable_is_an_error() {
        assert!(matches!(
            ingest_benchmark(BenchmarkSource::Nl4dv, "[]", dataset(), "x"),
            Err(EvaluationError::EmptyBenchmark)
        ));
        assert!(ingest_benchmark(BenchmarkSource::NvBench, "not json", dataset(), "x").is_err());
    }
}
