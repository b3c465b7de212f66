//! Query interpretation: structured clues from a multilabel classification head
//! over a pooled query embedding, creative clues pattern-matched out of
//! backend-generated text, and the merge of both into a [`ClueSet`].

mod creative;
mod encoder;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use creative::{creative_prompt, extract_creative_clues};
pub use encoder::{Encoder, FixedEncoder, HashingEncoder};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum InterpreterError {
    #[error("dimension mismatch: head expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid classifier head: {0}")]
    InvalidHead(String),
    #[error("embedding contains non-finite values")]
    NonFiniteEmbedding,
    #[error("failed to read classifier head {path}: {reason}")]
    HeadLoad { path: String, reason: String },
}

/// Pooled first-token embedding of a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, InterpreterError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(InterpreterError::NonFiniteEmbedding);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct HeadFile {
    labels: Vec<String>,
    #[serde(default = "default_threshold")]
    threshold: f64,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Linear layer plus sigmoid producing one relevance probability per label.
///
/// `weight` is stored row-major, one row of length `dim` per label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weight: Vec<f64>,
    bias: Vec<f64>,
    labels: Vec<String>,
    dim: usize,
    threshold: f64,
}

impl ClassifierHead {
    pub fn new(
        labels: Vec<String>,
        weight: Vec<f64>,
        bias: Vec<f64>,
        threshold: f64,
    ) -> Result<Self, InterpreterError> {
        let n_labels = labels.len();
        if n_labels == 0 {
            return Err(InterpreterError::InvalidHead("at least one label required".into()));
        }
        let unique: HashSet<&str> = labels.iter().map(String::as_str).collect();
        if unique.len() != n_labels {
            return Err(InterpreterError::InvalidHead("labels must be unique".into()));
        }
        if bias.len() != n_labels {
            return Err(InterpreterError::InvalidHead(format!(
                "bias has {} entries for {n_labels} labels",
                bias.len()
            )));
        }
        if weight.is_empty() || !weight.len().is_multiple_of(n_labels) {
            return Err(InterpreterError::InvalidHead(format!(
                "weight length {} is not a positive multiple of {n_labels}",
                weight.len()
            )));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(InterpreterError::InvalidHead(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(InterpreterError::InvalidHead("non-finite parameters".into()));
        }
        let dim = weight.len() / n_labels;
        Ok(Self {
            weight,
            bias,
            labels,
            dim,
            threshold,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, InterpreterError> {
        let file: HeadFile = serde_json::from_str(text).map_err(|e| InterpreterError::InvalidHead(e.to_string()))?;
        Self::new(file.labels, file.weight, file.bias, file.threshold)
    }

    pub fn load(path: &Path) -> Result<Self, InterpreterError> {
        let text = std::fs::read_to_string(path).map_err(|e| InterpreterError::HeadLoad {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&HeadFile {
            labels: self.labels.clone(),
            threshold: self.threshold,
            weight: self.weight.clone(),
            bias: self.bias.clone(),
        })
        .expect("head serializes")
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, InterpreterError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(InterpreterError::InvalidHead(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        self.threshold = threshold;
        Ok(self)
    }

    /// Head whose row for each label is `gain` times the embedding of the
    /// label's keyword phrase, so a query scores high on labels whose
    /// keywords it shares.
    pub fn from_keywords(
        encoder: &dyn Encoder,
        entries: &[(&str, &str)],
        gain: f64,
        bias: f64,
        threshold: f64,
    ) -> Result<Self, InterpreterError> {
        let mut weight = Vec::with_capacity(entries.len() * encoder.dim());
        for (_, keywords) in entries {
            weight.extend(encoder.embed(keywords)?.0.iter().map(|v| v * gain));
        }
        Self::new(
            entries.iter().map(|(l, _)| l.to_string()).collect(),
            weight,
            vec![bias; entries.len()],
            threshold,
        )
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.dim..(i + 1) * self.dim]
    }
}

/// Generic analysis indicators used when no trained head is configured.
pub const DEFAULT_KEYWORD_LABELS: &[(&str, &str)] = &[
    (
        "category_comparison",
        "compare by each per category group genre type most least",
    ),
    ("trend_over_time", "trend over time year month date growth change"),
    ("distribution", "distribution spread histogram range frequency"),
    ("correlation", "correlation relationship between versus against"),
    ("share_of_total", "share proportion percentage fraction of total"),
    ("ranking", "top highest lowest best worst rank largest"),
    ("aggregate_total", "total sum overall revenue sales count number"),
    ("average_metric", "average mean typical rating score price"),
];
pub const DEFAULT_HEAD_DIM: usize = 256;

/// Keyword head over a [`HashingEncoder`] of dimension [`DEFAULT_HEAD_DIM`].
pub fn default_keyword_head() -> ClassifierHead {
    ClassifierHead::from_keywords(
        &HashingEncoder::new(DEFAULT_HEAD_DIM),
        DEFAULT_KEYWORD_LABELS,
        8.0,
        -1.5,
        0.5,
    )
    .expect("built-in keyword head is valid")
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-label probabilities `sigmoid(W x + b)`.
pub fn predict_probs(embedding: &EmbeddingVector, head: &ClassifierHead) -> Result<Vec<f64>, InterpreterError> {
    if embedding.dim() != head.dim {
        return Err(InterpreterError::DimensionMismatch {
            expected: head.dim,
            actual: embedding.dim(),
        });
    }
    Ok((0..head.labels.len())
        .map(|i| {
            let logit: f64 = head.row(i).iter().zip(&embedding.0).map(|(w, x)| w * x).sum::<f64>() + head.bias[i];
            sigmoid(logit)
        })
        .collect())
}

/// Labels at or above the head's threshold, most probable first. Equal
/// probabilities keep label-list order.
pub fn threshold_labels(probs: &[f64], head: &ClassifierHead) -> Vec<(String, f64)> {
    let mut hits: Vec<(usize, f64)> = probs
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, p)| *p >= head.threshold)
        .collect();
    // stable sort keeps label order among ties
    hits.sort_by(|a, b| b.1.total_cmp(&a.1));
    hits.into_iter().map(|(i, p)| (head.labels[i].clone(), p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClueSource {
    Structured,
    Creative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clue {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    pub source: ClueSource,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClueSet {
    pub clues: Vec<Clue>,
}

impl ClueSet {
    pub fn is_empty(&self) -> bool {
        self.clues.is_empty()
    }

    pub fn structured(&self) -> Vec<(String, f64)> {
        self.clues
            .iter()
            .filter(|c| c.source == ClueSource::Structured)
            .map(|c| (c.label.clone(), c.probability.unwrap_or_default()))
            .collect()
    }

    pub fn creative(&self) -> Vec<String> {
        self.clues
            .iter()
            .filter(|c| c.source == ClueSource::Creative)
            .map(|c| c.label.clone())
            .collect()
    }
}

/// Union of both clue kinds: structured clues first by descending probability,
/// then creative clues in their original order. A creative label that repeats
/// a structured one is dropped.
pub fn merge_clue_sets(structured: &[(String, f64)], creative: &[String]) -> ClueSet {
    let mut sorted: Vec<&(String, f64)> = structured.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut seen_structured = HashSet::new();
    let mut clues = Vec::with_capacity(structured.len() + creative.len());
    for (label, p) in sorted {
        if seen_structured.insert(label.as_str()) {
            clues.push(Clue {
                label: label.clone(),
                probability: Some(*p),
                source: ClueSource::Structured,
            });
        }
    }
    let mut seen_creative = HashSet::new();
    for label in creative {
        if seen_structured.contains(label.as_str()) || !seen_creative.insert(label.as_str()) {
            continue;
        }
        clues.push(Clue {
            label: label.clone(),
            probability: None,
            source: ClueSource::Creative,
        });
    }
    ClueSet { clues }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_head_prefers_matching_labels() {
        let head = default_keyword_head();
        let enc = HashingEncoder::new(DEFAULT_HEAD_DIM);
        let x = enc.embed("What is the trend of revenue over time by year?").unwrap();
        let labels: Vec<String> = threshold_labels(&predict_probs(&x, &head).unwrap(), &head)
            .into_iter()
            .map(|(l, _)| l)
            .collect();
        assert_eq!(labels.first().map(String::as_str), Some("trend_over_time"));
        assert!(!labels.contains(&"correlation".to_string()));
    }

    fn head(labels: &[&str], weight: Vec<f64>, bias: Vec<f64>) -> ClassifierHead {
        ClassifierHead::new(
            labels.iter().map(|s| s.to_string()).collect(),
            weight,
            bias,
            DEFAULT_THRESHOLD,
        )
        .unwrap()
    }

    #[test]
    fn zero_head_gives_one_half() {
        let h = head(&["a", "b", "c"], vec![0.0; 6], vec![0.0; 3]);
        let x = EmbeddingVector::new(vec![3.0, -7.5]).unwrap();
        assert_eq!(predict_probs(&x, &h).unwrap(), vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn saturated_bias_yields_no_labels() {
        let h = head(&["a", "b"], vec![0.1; 4], vec![-1000.0; 2])
            .with_threshold(0.001)
            .unwrap();
        let x = EmbeddingVector::new(vec![1.0, 1.0]).unwrap();
        let probs = predict_probs(&x, &h).unwrap();
        assert!(probs.iter().all(|p| *p < 1e-6));
        assert!(threshold_labels(&probs, &h).is_empty());
    }

    #[test]
    fn dimension_mismatch() {
        let h = head(&["a"], vec![1.0, 2.0], vec![0.0]);
        let x = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            predict_probs(&x, &h),
            Err(InterpreterError::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn threshold_orders_and_breaks_ties() {
        let h = head(&["l0", "l1", "l2"], vec![0.0; 3], vec![0.0; 3]);
        let got = threshold_labels(&[0.9, 0.2, 0.6], &h);
        assert_eq!(got, vec![("l0".to_string(), 0.9), ("l2".to_string(), 0.6)]);
        assert!(threshold_labels(&[0.1, 0.2, 0.3], &h).is_empty());
        let tie = threshold_labels(&[0.1, 0.7, 0.7], &h);
        assert_eq!(tie[0].0, "l1");
        assert_eq!(tie[1].0, "l2");
    }

    #[test]
    fn head_validation() {
        let labels = vec!["a".to_string(), "a".to_string()];
        assert!(ClassifierHead::new(labels, vec![0.0; 2], vec![0.0; 2], 0.5).is_err());
        assert!(ClassifierHead::new(vec![], vec![], vec![], 0.5).is_err());
        assert!(ClassifierHead::new(vec!["a".into()], vec![0.0; 3], vec![0.0], 1.0).is_err());
        assert!(ClassifierHead::new(vec!["a".into(), "b".into()], vec![0.0; 3], vec![0.0; 2], 0.5).is_err());
    }

    #[test]
    fn head_json_round_trip() {
        let h = head(&["budget", "genre"], vec![0.5, -0.25, 1.0, 2.0], vec![0.1, -0.1]);
        let back = ClassifierHead::from_json(&h.to_json()).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.dim(), 2);
    }

    #[test]
    fn merge_precedence_and_order() {
        let s = vec![("a".to_string(), 0.9)];
        let merged = merge_clue_sets(&s, &["b".to_string()]);
        assert_eq!(merged.clues.len(), 2);
        assert_eq!(merged.clues[0].source, ClueSource::Structured);
        assert_eq!(merged.clues[0].probability, Some(0.9));
        assert_eq!(merged.clues[1].label, "b");
        assert_eq!(merged.clues[1].probability, None);

        let dup = merge_clue_sets(&s, &["a".to_string()]);
        assert_eq!(dup.clues.len(), 1);
        assert_eq!(dup.clues[0].source, ClueSource::Structured);

        assert!(merge_clue_sets(&[], &[]).is_empty());
    }

    #[test]
    fn merge_sorts_structured_by_probability() {
        let s = vec![("low".to_string(), 0.55), ("high".to_string(), 0.95)];
        let merged = merge_clue_sets(&s, &[]);
        assert_eq!(merged.structured()[0].0, "high");
    }
}
