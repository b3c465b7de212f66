//! Reference attention kernels at desk scale: scaled dot-product attention,
//! multi-head and grouped-query attention, and rotary position embeddings.

mod attention;
mod matrix;
mod rope;
pub mod selftest;

pub use attention::{
    attention_weights, grouped_query_attention, multi_head_attention, scaled_dot_attention, softmax_rows,
    AttentionParams,
};
pub use matrix::Matrix;
pub use rope::{apply_rope, RopeConfig, DEFAULT_ROPE_BASE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{heads} heads cannot be split into {groups} groups")]
    InvalidGrouping { heads: usize, groups: usize },
    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),
}
