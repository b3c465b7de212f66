use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use masqrad_core::dataset::DatasetRef;
use masqrad_core::evaluation::{
    Aggregate, BenchmarkManifest, BenchmarkQuery, ChartKind, Criterion, EvaluationReport, GeneratedVis, TableData,
    VisSpec,
};
use masqrad_core::sandbox::Cell;

#[path = "../../core/tests/support/benchmark_tables.rs"]
mod tables;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn masqrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masqrad")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("engine.toml");
    let text = format!(
        "run_store_root = \"{}\"\n\n[backend]\nkind = \"mock\"\nscript = \"{}\"\n",
        dir.join("runs").display(),
        fixtures().join("mock_happy.json").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_with_mock_profile_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let dataset = fixtures().join("movies.csv");
    let out = masqrad(&[
        "run",
        "--query",
        "Which genre earns the most gross revenue?",
        "--dataset",
        dataset.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("stage: done"), "{text}");
    let run_id = text.lines().find_map(|l| l.strip_prefix("run_id: ")).unwrap();
    assert!(dir.path().join("runs").join(run_id).join("run.json").is_file());
}

#[test]
fn failed_run_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = masqrad(&[
        "run",
        "--query",
        "anything",
        "--dataset",
        "/nonexistent/data.csv",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("stage: failed"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(masqrad(&[]).status.code(), Some(2));
    assert_eq!(masqrad(&["run", "--query", "q"]).status.code(), Some(2));
    assert_eq!(masqrad(&["bench", "ingest", "--source", "vega"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "run_store_root = 3\n").unwrap();
    let out = masqrad(&[
        "run",
        "--query",
        "q",
        "--dataset",
        "d.csv",
        "--config",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kernels_selftest_passes() {
    let out = masqrad(&["kernels", "selftest"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.lines().count() >= 4, "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

fn truth_spec() -> VisSpec {
    VisSpec {
        chart_kind: ChartKind::Bar,
        x: "genre".into(),
        y: "gross".into(),
        aggregate: Aggregate::Sum,
        filters: vec![],
    }
}

fn truth_table() -> TableData {
    TableData {
        columns: vec!["genre".into(), "gross".into()],
        rows: vec![
            vec![Cell::Text("Drama".into()), Cell::Number(70.5)],
            vec![Cell::Text("Action".into()), Cell::Number(65.5)],
        ],
    }
}

/// Generated output that fails exactly the representation criteria in `failed`.
fn generated_for(failed: &[Criterion]) -> GeneratedVis {
    let mut spec = truth_spec();
    let mut table = truth_table();
    if failed.contains(&Criterion::DataMapping) {
        table.rows[0][1] = Cell::Number(71.5);
    }
    if failed.contains(&Criterion::MarkCorrectness) {
        spec.chart_kind = ChartKind::Line;
    }
    if failed.contains(&Criterion::AxesQuality) {
        spec.y = "budget".into();
    }
    GeneratedVis { spec, table }
}

#[test]
fn eval_on_benchmark_shaped_fixture_reports_overall_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = DatasetRef::load(&fixtures().join("movies.csv")).unwrap();
    let mut queries = Vec::new();
    let mut generated = BTreeMap::new();
    let mut labels = String::from("query_id,criterion,result\n");
    for (d, (name, _, _)) in tables::DATASET_COUNTS.iter().enumerate() {
        for (i, failed) in tables::dataset_failures(d).into_iter().enumerate() {
            let id = tables::query_id(name, i);
            queries.push(BenchmarkQuery {
                id: id.clone(),
                nl_query: format!("total gross by genre ({id})"),
                ground_truth: truth_spec(),
                truth_table: Some(truth_table()),
                dataset_name: Some(name.to_string()),
            });
            generated.insert(id.clone(), generated_for(&failed));
            for c in failed.iter().filter(|c| Criterion::HUMAN.contains(c)) {
                labels.push_str(&format!("{id},{c},fail\n"));
            }
        }
    }
    let manifest = BenchmarkManifest {
        benchmark_name: "mixed-500".into(),
        dataset,
        queries,
    };
    let manifest_path = dir.path().join("manifest.json");
    let generated_path = dir.path().join("generated.json");
    let labels_path = dir.path().join("labels.csv");
    let out_path = dir.path().join("report.json");
    std::fs::write(&manifest_path, serde_json::to_vec(&manifest).unwrap()).unwrap();
    std::fs::write(&generated_path, serde_json::to_vec(&generated).unwrap()).unwrap();
    std::fs::write(&labels_path, labels).unwrap();

    let out = masqrad(&[
        "eval",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--labels",
        labels_path.to_str().unwrap(),
        "--generated",
        generated_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let total_line = text
        .lines()
        .find(|l| l.starts_with("Total ") && l.contains('%'))
        .unwrap();
    assert!(
        total_line.contains("500") && total_line.contains("64") && total_line.ends_with("87.2%"),
        "{total_line}"
    );

    let report: EvaluationReport = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(report.overall.accuracy, 0.872);
    assert_eq!(report.overall.breakdown.ordered_counts(), tables::CRITERION_TOTALS);
    assert_eq!(report.overall.breakdown.failure_sum, tables::FAILURE_SUM);
    for (summary, (name, total, inaccurate)) in report.datasets.iter().zip(tables::DATASET_COUNTS) {
        assert_eq!(
            (summary.dataset.as_str(), summary.total, summary.inaccurate),
            (name, total, inaccurate)
        );
    }
}

#[test]
fn eval_rejects_malformed_labels() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = DatasetRef::load(&fixtures().join("movies.csv")).unwrap();
    let manifest = BenchmarkManifest {
        benchmark_name: "tiny".into(),
        dataset,
        queries: vec![BenchmarkQuery {
            id: "q1".into(),
            nl_query: "gross by genre".into(),
            ground_truth: truth_spec(),
            truth_table: Some(truth_table()),
            dataset_name: None,
        }],
    };
    let manifest_path = dir.path().join("m.json");
    std::fs::write(&manifest_path, serde_json::to_vec(&manifest).unwrap()).unwrap();
    let labels_path = dir.path().join("l.csv");
    std::fs::write(&labels_path, "q1,sparkle,fail\n").unwrap();
    let out = masqrad(&[
        "eval",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--labels",
        labels_path.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed label file"));
}

#[test]
fn bench_ingest_nl4dv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("nl4dv.json");
    std::fs::write(
        &input,
        r#"[{"query": "gross by genre", "dataset": "movies",
             "vlSpec": {"mark": "bar", "encoding": {"x": {"field": "genre"}, "y": {"field": "gross", "aggregate": "sum"}}}},
            {"query": "studios", "vlSpec": {"mark": "bar", "encoding": {"x": {"field": "studio"}, "y": {"aggregate": "count"}}}}]"#,
    )
    .unwrap();
    let out_path = dir.path().join("manifest.json");
    let out = masqrad(&[
        "bench",
        "ingest",
        "--source",
        "nl4dv",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--dataset",
        fixtures().join("movies.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = BenchmarkManifest::load(&out_path).unwrap();
    assert_eq!(manifest.queries.len(), 1);
    assert_eq!(manifest.queries[0].ground_truth, truth_spec());
    assert!(String::from_utf8_lossy(&out.stderr).contains("studio"));
}
