use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{accuracy, inaccuracy_breakdown, Criterion, EvaluationError, EvaluationScorecard, InaccuracyBreakdown};

pub const OVERALL_LABEL: &str = "Total";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub total: usize,
    pub inaccurate: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
    pub overall: AccuracyRow,
}

/// Per-dataset and overall accuracy from `(dataset, total, inaccurate)` counts.
pub fn accuracy_table(counts: &[(String, usize, usize)]) -> Result<AccuracyTable, EvaluationError> {
    let row = |dataset: &str, total: usize, inaccurate: usize| -> Result<AccuracyRow, EvaluationError> {
        Ok(AccuracyRow {
            dataset: dataset.to_string(),
            total,
            inaccurate,
            accuracy: accuracy(total, inaccurate)?,
        })
    };
    let rows = counts
        .iter()
        .map(|(d, t, i)| row(d, *t, *i))
        .collect::<Result<Vec<_>, _>>()?;
    let total = counts.iter().map(|c| c.1).sum();
    let inaccurate = counts.iter().map(|c| c.2).sum();
    Ok(AccuracyTable {
        rows,
        overall: row(OVERALL_LABEL, total, inaccurate)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub total: usize,
    pub inaccurate: usize,
    pub accuracy: f64,
    pub breakdown: InaccuracyBreakdown,
}

impl DatasetSummary {
    fn from_cards(dataset: &str, cards: &[&EvaluationScorecard]) -> Result<Self, EvaluationError> {
        let owned: Vec<EvaluationScorecard> = cards.iter().map(|c| (*c).clone()).collect();
        let breakdown = inaccuracy_breakdown(&owned);
        Ok(Self {
            dataset: dataset.to_string(),
            total: cards.len(),
            inaccurate: breakdown.distinct_inaccurate,
            accuracy: accuracy(cards.len(), breakdown.distinct_inaccurate)?,
            breakdown,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub benchmark_name: String,
    /// In order of first appearance.
    pub datasets: Vec<DatasetSummary>,
    pub overall: DatasetSummary,
    pub warnings: Vec<String>,
    pub scorecards: Vec<EvaluationScorecard>,
}

pub fn build_report(
    benchmark_name: impl Into<String>,
    scorecards: Vec<EvaluationScorecard>,
    warnings: Vec<String>,
) -> Result<EvaluationReport, EvaluationError> {
    if scorecards.is_empty() {
        return Err(EvaluationError::EmptyBenchmark);
    }
    let mut names: Vec<&str> = Vec::new();
    for card in &scorecards {
        if !names.contains(&card.dataset_name.as_str()) {
            names.push(&card.dataset_name);
        }
    }
    let datasets = names
        .iter()
        .map(|name| {
            let cards: Vec<&EvaluationScorecard> = scorecards.iter().filter(|c| c.dataset_name == *name).collect();
            DatasetSummary::from_cards(name, &cards)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let all: Vec<&EvaluationScorecard> = scorecards.iter().collect();
    let overall = DatasetSummary::from_cards(OVERALL_LABEL, &all)?;
    Ok(EvaluationReport {
        benchmark_name: benchmark_name.into(),
        datasets,
        overall,
        warnings,
        scorecards,
    })
}

fn percent(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

impl EvaluationReport {
    pub fn render_text(&self) -> String {
        let width = self
            .datasets
            .iter()
            .map(|d| d.dataset.len())
            .chain([OVERALL_LABEL.len(), "Dataset".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(out, "Benchmark: {}", self.benchmark_name);
        let _ = writeln!(out);
        let _ = writeln!(out, "Accuracy by dataset");
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>10}  {:>8}",
            "Dataset", "Total", "Inaccurate", "Accuracy"
        );
        for d in self.datasets.iter().chain([&self.overall]) {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>10}  {:>8}",
                d.dataset,
                d.total,
                d.inaccurate,
                percent(d.accuracy)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Inaccuracy distribution");
        let mut header = format!("{:<width$}", "Dataset");
        for c in Criterion::ALL {
            let _ = write!(header, "  {:>8}", c.short_label());
        }
        let _ = writeln!(out, "{header}  {:>8}", "Sum");
        for d in self.datasets.iter().chain([&self.overall]) {
            let mut line = format!("{:<width$}", d.dataset);
            for n in d.breakdown.ordered_counts() {
                let _ = write!(line, "  {n:>8}");
            }
            let _ = writeln!(out, "{line}  {:>8}", d.breakdown.failure_sum);
        }
        let _ = writeln!(
            out,
            "Distinct inaccurate queries: {}",
            self.overall.breakdown.distinct_inaccurate
        );
        if !self.warnings.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Warnings");
            for w in &self.warnings {
                let _ = writeln!(out, "- {w}");
            }
        }
        out
    }
}
