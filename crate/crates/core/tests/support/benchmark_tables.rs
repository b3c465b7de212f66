//! Published per-dataset benchmark counts and a deterministic reconstruction
//! of per-query scorecards from them.

#![allow(dead_code)]

use masqrad_core::evaluation::{Criterion, EvaluationScorecard};

/// `(dataset, total queries, inaccurate queries)`.
pub const DATASET_COUNTS: [(&str, usize, usize); 8] = [
    ("Movies", 39, 4),
    ("movie_1+cinema", 103, 22),
    ("architecture", 22, 6),
    ("Cars", 44, 5),
    ("car_1", 100, 11),
    ("Superstore", 23, 3),
    ("inn_1", 156, 12),
    ("Euro", 13, 1),
];

/// Failures per criterion for each dataset, in `Criterion::ALL` order.
pub const CRITERION_COUNTS: [[usize; 8]; 8] = [
    [1, 4, 0, 0, 4, 2, 2, 0],
    [2, 6, 9, 0, 8, 0, 0, 0],
    [0, 2, 0, 1, 0, 1, 1, 1],
    [1, 2, 0, 0, 1, 0, 1, 0],
    [2, 3, 0, 1, 1, 1, 2, 1],
    [1, 1, 0, 1, 0, 0, 0, 0],
    [2, 3, 0, 1, 1, 1, 2, 2],
    [1, 0, 0, 0, 0, 0, 0, 0],
];

pub const CRITERION_TOTALS: [usize; 8] = [10, 21, 9, 4, 15, 5, 8, 4];
pub const FAILURE_SUM: usize = 76;
pub const DISTINCT_INACCURATE: usize = 64;

/// Failed criteria for every query of one dataset. Failures are laid out in
/// criterion order and failure `j` lands on query `j mod inaccurate`, so
/// every inaccurate query fails at least once and no query fails the same
/// criterion twice.
pub fn dataset_failures(index: usize) -> Vec<Vec<Criterion>> {
    let (_, total, inaccurate) = DATASET_COUNTS[index];
    let mut per_query = vec![Vec::new(); total];
    let mut j = 0;
    for (k, &count) in CRITERION_COUNTS[index].iter().enumerate() {
        for _ in 0..count {
            per_query[j % inaccurate].push(Criterion::ALL[k]);
            j += 1;
        }
    }
    per_query
}

pub fn query_id(dataset: &str, i: usize) -> String {
    format!("{}-{i:03}", dataset.replace('+', "_"))
}

/// One scorecard per benchmark query.
pub fn reconstructed_scorecards() -> Vec<EvaluationScorecard> {
    DATASET_COUNTS
        .iter()
        .enumerate()
        .flat_map(|(d, (name, _, _))| {
            dataset_failures(d)
                .into_iter()
                .enumerate()
                .map(move |(i, failed)| EvaluationScorecard::with_failures(query_id(name, i), *name, &failed))
        })
        .collect()
}
