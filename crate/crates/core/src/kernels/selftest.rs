//! Randomized invariant checks over the kernels, run by `masqrad kernels selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    apply_rope, attention_weights, grouped_query_attention, multi_head_attention, scaled_dot_attention,
    AttentionParams, Matrix, RopeConfig,
};
use crate::interpreter::{predict_probs, ClassifierHead, EmbeddingVector};

#[derive(Debug, Clone, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Largest deviation observed against the tolerance.
    pub max_error: f64,
    pub tolerance: f64,
}

impl InvariantCheck {
    fn from_errors(name: &'static str, tolerance: f64, errors: &[f64]) -> Self {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        Self {
            name,
            passed: errors.iter().all(|e| e.is_finite() && *e <= tolerance),
            cases: errors.len(),
            max_error,
            tolerance,
        }
    }
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).expect("sized")
}

/// Inputs and weights for one attention problem.
#[derive(Debug, Clone)]
pub struct AttentionInstance {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub params: AttentionParams,
}

/// Random instance with `heads` query heads sharing `groups` key/value heads.
pub fn random_attention_instance<R: Rng>(rng: &mut R, heads: usize, groups: usize) -> AttentionInstance {
    let d_model = rng.random_range(1..=8);
    let d_k = rng.random_range(1..=8);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=6);
    let params = AttentionParams {
        w_q: (0..heads).map(|_| random_matrix(rng, d_model, d_k)).collect(),
        w_k: (0..groups).map(|_| random_matrix(rng, d_model, d_k)).collect(),
        w_v: (0..groups).map(|_| random_matrix(rng, d_model, d_k)).collect(),
        w_o: random_matrix(rng, heads * d_k, d_model),
    };
    AttentionInstance {
        q: random_matrix(rng, n, d_model),
        k: random_matrix(rng, m, d_model),
        v: random_matrix(rng, m, d_model),
        params,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Runs every invariant with a fixed seed.
pub fn run(seed: u64) -> Vec<InvariantCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // sigmoid head
    let mut half_errors = Vec::new();
    let mut bound_errors = Vec::new();
    for _ in 0..1000 {
        let d = rng.random_range(1..=16);
        let l = rng.random_range(1..=8);
        let labels: Vec<String> = (0..l).map(|i| format!("l{i}")).collect();
        // |logit| <= 19 keeps sigmoid strictly inside (0, 1) in f64
        let x = EmbeddingVector::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let zero = ClassifierHead::new(labels.clone(), vec![0.0; l * d], vec![0.0; l], 0.5).unwrap();
        half_errors.extend(predict_probs(&x, &zero).unwrap().iter().map(|p| (p - 0.5).abs()));
        let w = (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = (0..l).map(|_| rng.random_range(-3.0..3.0)).collect();
        let head = ClassifierHead::new(labels, w, b, 0.5).unwrap();
        bound_errors.extend(predict_probs(&x, &head).unwrap().iter().map(
            |p| {
                if *p > 0.0 && *p < 1.0 {
                    0.0
                } else {
                    1.0
                }
            },
        ));
    }
    checks.push(InvariantCheck::from_errors(
        "classifier_zero_head_is_one_half",
        0.0,
        &half_errors,
    ));
    checks.push(InvariantCheck::from_errors(
        "classifier_probabilities_in_open_unit_interval",
        0.0,
        &bound_errors,
    ));

    // softmax rows across all variants
    let mut row_errors = Vec::new();
    for _ in 0..200 {
        let d_k = rng.random_range(1..=8);
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let q = random_matrix(&mut rng, n, d_k);
        let k = random_matrix(&mut rng, m, d_k);
        let w = attention_weights(&q, &k.clone().scale(10.0)).unwrap();
        for r in 0..w.rows() {
            row_errors.push((w.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    checks.push(InvariantCheck::from_errors(
        "softmax_rows_sum_to_one",
        1e-9,
        &row_errors,
    ));

    // GQA with one group per head is MHA
    let mut gqa_errors = Vec::new();
    for _ in 0..200 {
        let h = rng.random_range(1..=4);
        let inst = random_attention_instance(&mut rng, h, h);
        let mha = multi_head_attention(&inst.q, &inst.k, &inst.v, &inst.params).unwrap();
        let gqa = grouped_query_attention(&inst.q, &inst.k, &inst.v, &inst.params).unwrap();
        gqa_errors.push(mha.max_abs_diff(&gqa));
    }
    checks.push(InvariantCheck::from_errors(
        "gqa_with_groups_equal_heads_matches_mha",
        1e-12,
        &gqa_errors,
    ));

    // h = 1 with identity projections is plain attention
    let mut reduce_errors = Vec::new();
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let q = random_matrix(&mut rng, n, d);
        let k = random_matrix(&mut rng, m, d);
        let v = random_matrix(&mut rng, m, d);
        let eye = Matrix::identity(d);
        let params = AttentionParams {
            w_q: vec![eye.clone()],
            w_k: vec![eye.clone()],
            w_v: vec![eye.clone()],
            w_o: eye,
        };
        let mha = multi_head_attention(&q, &k, &v, &params).unwrap();
        let plain = scaled_dot_attention(&q, &k, &v).unwrap();
        reduce_errors.push(mha.max_abs_diff(&plain));
    }
    checks.push(InvariantCheck::from_errors(
        "single_identity_head_matches_attention",
        1e-12,
        &reduce_errors,
    ));

    // RoPE
    let mut norm_errors = Vec::new();
    let mut relative_errors = Vec::new();
    for _ in 0..200 {
        let dim = 2 * rng.random_range(1..=4);
        let cfg = RopeConfig::new(dim).unwrap();
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (m, n) = (rng.random_range(-50..50), rng.random_range(-50..50));
        let shift = rng.random_range(-50..50);
        let rot = apply_rope(&[a.clone(), b.clone()], &cfg, &[m, n]).unwrap();
        norm_errors.push((norm(&rot[0]) - norm(&a)).abs());
        norm_errors.push((norm(&rot[1]) - norm(&b)).abs());
        let shifted = apply_rope(&[a, b], &cfg, &[m + shift, n + shift]).unwrap();
        relative_errors.push((dot(&rot[0], &rot[1]) - dot(&shifted[0], &shifted[1])).abs());
    }
    checks.push(InvariantCheck::from_errors("rope_preserves_norm", 1e-9, &norm_errors));
    checks.push(InvariantCheck::from_errors(
        "rope_dot_depends_on_offset_only",
        1e-8,
        &relative_errors,
    ));

    checks
}
