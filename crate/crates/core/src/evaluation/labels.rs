use std::collections::{BTreeMap, HashSet};

use super::{Criterion, EvaluationError};

/// Judge verdicts for the five presentation and application criteria.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HumanLabels {
    labels: BTreeMap<String, BTreeMap<Criterion, bool>>,
    pub warnings: Vec<String>,
}

impl HumanLabels {
    /// All five human criteria for `query_id`; unlabeled ones pass.
    pub fn for_query(&self, query_id: &str) -> BTreeMap<Criterion, bool> {
        let given = self.labels.get(query_id);
        Criterion::HUMAN
            .into_iter()
            .map(|c| (c, given.and_then(|g| g.get(&c)).copied().unwrap_or(true)))
            .collect()
    }

    pub fn labeled_queries(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }
}

const HEADER: [&str; 3] = ["query_id", "criterion", "result"];

/// Parses `query_id,criterion,pass|fail` rows. An optional header row is
/// accepted. Queries in `query_ids` without any row default to pass and
/// produce a coverage warning.
pub fn ingest_judge_labels(text: &str, query_ids: &[String]) -> Result<HumanLabels, EvaluationError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut labels: BTreeMap<String, BTreeMap<Criterion, bool>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let malformed = |line: usize, reason: String| EvaluationError::MalformedLabelFile { line, reason };
        let record = record.map_err(|e| malformed(i + 1, e.to_string()))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 3 {
            return Err(malformed(line, format!("expected 3 fields, found {}", record.len())));
        }
        if i == 0 && record.iter().zip(HEADER).all(|(a, b)| a.eq_ignore_ascii_case(b)) {
            continue;
        }
        let (query_id, criterion, result) = (&record[0], &record[1], &record[2]);
        if query_id.is_empty() {
            return Err(malformed(line, "empty query id".into()));
        }
        let criterion = Criterion::parse(criterion)
            .filter(|c| Criterion::HUMAN.contains(c))
            .ok_or_else(|| malformed(line, format!("unknown criterion {criterion:?}")))?;
        let pass = match result.to_ascii_lowercase().as_str() {
            "pass" => true,
            "fail" => false,
            other => return Err(malformed(line, format!("result must be pass or fail, got {other:?}"))),
        };
        let entry = labels.entry(query_id.to_string()).or_default();
        if let Some(previous) = entry.insert(criterion, pass) {
            if previous != pass {
                return Err(malformed(
                    line,
                    format!("conflicting labels for {query_id} {criterion}"),
                ));
            }
        }
    }

    let mut warnings = Vec::new();
    let known: HashSet<&str> = query_ids.iter().map(String::as_str).collect();
    let unlabeled = query_ids.iter().filter(|q| !labels.contains_key(*q)).count();
    if unlabeled > 0 {
        warnings.push(format!(
            "{unlabeled} of {} queries have no judge labels; their human criteria default to pass",
            query_ids.len()
        ));
    }
    let stray: Vec<&str> = labels
        .keys()
        .map(String::as_str)
        .filter(|q| !known.contains(q))
        .collect();
    if !stray.is_empty() {
        warnings.push(format!("labels for unknown queries ignored: {}", stray.join(", ")));
    }
    Ok(HumanLabels { labels, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("q{i}")).collect()
    }

    #[test]
    fn single_fail_row() {
        let labels = ingest_judge_labels("q7,color_mapping,fail\n", &ids(7)).unwrap();
        let q7 = labels.for_query("q7");
        assert!(!q7[&Criterion::ColorMapping]);
        assert_eq!(q7.values().filter(|p| **p).count(), 4);
        assert_eq!(labels.warnings.len(), 1);
    }

    #[test]
    fn empty_file_passes_everything_with_warning() {
        let labels = ingest_judge_labels("", &ids(3)).unwrap();
        for q in ids(3) {
            assert!(labels.for_query(&q).values().all(|p| *p));
        }
        assert_eq!(labels.warnings.len(), 1);
        assert!(labels.warnings[0].contains("3 of 3"));
    }

    #[test]
    fn rejects_unknown_and_automatic_criteria() {
        for bad in [
            "q1,colour,fail",
            "q1,data_mapping,fail",
            "q1,significance,maybe",
            "q1,significance",
        ] {
            assert!(
                matches!(
                    ingest_judge_labels(bad, &ids(1)),
                    Err(EvaluationError::MalformedLabelFile { .. })
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn header_and_conflicts() {
        let ok = ingest_judge_labels(
            "query_id,criterion,result\nq1,significance,PASS\nq1,significance,pass\n",
            &ids(1),
        )
        .unwrap();
        assert!(ok.warnings.is_empty());
        let conflict = ingest_judge_labels("q1,significance,pass\nq1,significance,fail\n", &ids(1));
        assert!(matches!(
            conflict,
            Err(EvaluationError::MalformedLabelFile { line: 2, .. })
        ));
    }
}
