//! Minimal dense numeric core for the prediction model: row-major float64
//! tensors, a tape-based reverse-mode differentiation graph, the attention
//! and feed-forward building blocks, the AdamW update, and the checkpoint
//! format.

pub mod checkpoint;
pub mod graph;
pub mod losses;
pub mod nn;
pub mod store;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId, TensorError};
pub use losses::{graph_gaussian_nll, rho_from_raw, sigma_from_raw, RHO_SCALE};
pub use nn::{
    attention_block, cross_attention_concat, dropout, mlp_block, sinusoidal_embedding,
    token_position_encoding, AttentionParams, MlpParams,
};
pub use store::{AdamWConfig, ParamStore};
pub use tensor::Tensor;
