use super::{KernelError, Matrix};

/// Row-wise softmax, shifted by the row maximum for stability.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let (rows, cols) = scores.shape();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = scores.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / total));
    }
    Matrix::new(rows, cols, data).expect("shape preserved")
}

/// `softmax(Q Kᵀ / √d_k)`.
pub fn attention_weights(q: &Matrix, k: &Matrix) -> Result<Matrix, KernelError> {
    if q.cols() == 0 {
        return Err(KernelError::ShapeMismatch("d_k must be at least 1".into()));
    }
    if q.cols() != k.cols() {
        return Err(KernelError::ShapeMismatch(format!(
            "query width {} != key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() == 0 {
        return Err(KernelError::ShapeMismatch("no keys".into()));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul(&k.transpose())?.scale(scale);
    Ok(softmax_rows(&scores))
}

pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix, KernelError> {
    if k.rows() != v.rows() {
        return Err(KernelError::ShapeMismatch(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    attention_weights(q, k)?.matmul(v)
}

/// Projection weights for multi-head and grouped-query attention.
///
/// There is one query projection per head and one key/value projection per
/// group; query head `i` reads key/value group `i / (heads / groups)`. With as
/// many groups as heads this is ordinary multi-head attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Vec<Matrix>,
    pub w_k: Vec<Matrix>,
    pub w_v: Vec<Matrix>,
    pub w_o: Matrix,
}

impl AttentionParams {
    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn groups(&self) -> usize {
        self.w_k.len()
    }

    fn validate(&self, d_model: usize) -> Result<(usize, usize), KernelError> {
        let h = self.heads();
        let g = self.groups();
        if h == 0 {
            return Err(KernelError::ShapeMismatch("at least one head required".into()));
        }
        if g == 0 || g > h || !h.is_multiple_of(g) {
            return Err(KernelError::InvalidGrouping { heads: h, groups: g });
        }
        if self.w_v.len() != g {
            return Err(KernelError::ShapeMismatch(format!(
                "{} value projections for {g} groups",
                self.w_v.len()
            )));
        }
        let d_k = self.w_q[0].cols();
        let d_v = self.w_v[0].cols();
        if d_k == 0 || d_v == 0 {
            return Err(KernelError::ShapeMismatch("projection width must be positive".into()));
        }
        for w in self.w_q.iter().chain(&self.w_k) {
            if w.shape() != (d_model, d_k) {
                return Err(KernelError::ShapeMismatch(format!(
                    "query/key projection is {:?}, expected {:?}",
                    w.shape(),
                    (d_model, d_k)
                )));
            }
        }
        for w in &self.w_v {
            if w.shape() != (d_model, d_v) {
                return Err(KernelError::ShapeMismatch(format!(
                    "value projection is {:?}, expected {:?}",
                    w.shape(),
                    (d_model, d_v)
                )));
            }
        }
        if self.w_o.rows() != h * d_v {
            return Err(KernelError::ShapeMismatch(format!(
                "output projection has {} rows, expected {}",
                self.w_o.rows(),
                h * d_v
            )));
        }
        let all_finite = self
            .w_q
            .iter()
            .chain(&self.w_k)
            .chain(&self.w_v)
            .chain(std::iter::once(&self.w_o))
            .all(Matrix::is_finite);
        if !all_finite {
            return Err(KernelError::ShapeMismatch("non-finite weights".into()));
        }
        Ok((h, g))
    }
}

fn check_inputs(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<usize, KernelError> {
    let d_model = q.cols();
    if k.cols() != d_model || v.cols() != d_model {
        return Err(KernelError::ShapeMismatch(format!(
            "inputs must share model width {d_model}"
        )));
    }
    if k.rows() != v.rows() {
        return Err(KernelError::ShapeMismatch("key and value lengths differ".into()));
    }
    Ok(d_model)
}

/// `Concat(head_1, …, head_h) W_O`, each head with its own key/value
/// projection.
pub fn multi_head_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    params: &AttentionParams,
) -> Result<Matrix, KernelError> {
    let d_model = check_inputs(q, k, v)?;
    let (h, g) = params.validate(d_model)?;
    if g != h {
        return Err(KernelError::ShapeMismatch(format!(
            "multi-head attention needs one key/value projection per head ({h}), got {g}"
        )));
    }
    let heads = (0..h)
        .map(|i| {
            scaled_dot_attention(
                &q.matmul(&params.w_q[i])?,
                &k.matmul(&params.w_k[i])?,
                &v.matmul(&params.w_v[i])?,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Matrix::hconcat(&heads)?.matmul(&params.w_o)
}

/// Grouped-query attention: key/value projections are computed once per group
/// and shared by the query heads of that group.
pub fn grouped_query_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    params: &AttentionParams,
) -> Result<Matrix, KernelError> {
    let d_model = check_inputs(q, k, v)?;
    let (h, g) = params.validate(d_model)?;
    let heads_per_group = h / g;
    let shared: Vec<(Matrix, Matrix)> = (0..g)
        .map(|j| Ok((k.matmul(&params.w_k[j])?, v.matmul(&params.w_v[j])?)))
        .collect::<Result<_, KernelError>>()?;
    let heads = (0..h)
        .map(|i| {
            let (kj, vj) = &shared[i / heads_per_group];
            scaled_dot_attention(&q.matmul(&params.w_q[i])?, kj, vj)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Matrix::hconcat(&heads)?.matmul(&params.w_o)
}
