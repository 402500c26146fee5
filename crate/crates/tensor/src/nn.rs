//! Neural building blocks on top of the graph: multi-head attention with
//! optional additive or concatenated positional terms, the two-layer MLP,
//! sinusoidal encodings, and seeded dropout.

use rand::Rng;

use crate::graph::{Graph, NodeId, TensorError};
use crate::store::ParamStore;
use crate::tensor::Tensor;

/// Node ids of one attention block's parameters, bound into a graph.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_q: NodeId,
    pub b_q: NodeId,
    pub w_k: NodeId,
    pub b_k: NodeId,
    pub w_v: NodeId,
    pub b_v: NodeId,
    pub w_o: NodeId,
    pub b_o: NodeId,
    pub ln_gain: NodeId,
    pub ln_bias: NodeId,
}

impl AttentionParams {
    /// Registers freshly initialized parameters in the store.
    /// `d_q`/`d_k` are query/key feature widths (equal to `d_model` for
    /// additive positions, `2 * d_model` for the concatenated form).
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        d_q: usize,
        d_k: usize,
        d_model: usize,
    ) {
        let small = |rng: &mut R| {
            Tensor {
                shape: vec![1, d_model],
                data: (0..d_model).map(|_| rng.random_range(-0.1..0.1)).collect(),
            }
        };
        store.add(&format!("{prefix}.w_q"), Tensor::xavier(rng, d_q, d_model));
        store.add(&format!("{prefix}.b_q"), Tensor::zeros(&[1, d_model]));
        store.add(&format!("{prefix}.w_k"), Tensor::xavier(rng, d_k, d_model));
        store.add(&format!("{prefix}.b_k"), Tensor::zeros(&[1, d_model]));
        store.add(&format!("{prefix}.w_v"), Tensor::xavier(rng, d_model, d_model));
        // Value/output biases start slightly off zero so a zero-content
        // query (the decoder's first layer) cannot park the residual layer
        // norm at its zero-variance point.
        store.add(&format!("{prefix}.b_v"), small(rng));
        store.add(&format!("{prefix}.w_o"), Tensor::xavier(rng, d_model, d_model));
        store.add(&format!("{prefix}.b_o"), small(rng));
        store.add(&format!("{prefix}.ln_g"), Tensor::full(&[1, d_model], 1.0));
        store.add(&format!("{prefix}.ln_b"), Tensor::zeros(&[1, d_model]));
    }

    pub fn bind(store: &ParamStore, g: &mut Graph, prefix: &str) -> Self {
        Self {
            w_q: store.bind(g, &format!("{prefix}.w_q")),
            b_q: store.bind(g, &format!("{prefix}.b_q")),
            w_k: store.bind(g, &format!("{prefix}.w_k")),
            b_k: store.bind(g, &format!("{prefix}.b_k")),
            w_v: store.bind(g, &format!("{prefix}.w_v")),
            b_v: store.bind(g, &format!("{prefix}.b_v")),
            w_o: store.bind(g, &format!("{prefix}.w_o")),
            b_o: store.bind(g, &format!("{prefix}.b_o")),
            ln_gain: store.bind(g, &format!("{prefix}.ln_g")),
            ln_bias: store.bind(g, &format!("{prefix}.ln_b")),
        }
    }
}

/// Shared attention core: projected multi-head scaled dot-product attention
/// over prepared query/key features, followed by output projection, residual
/// add, and layer norm.
#[allow(clippy::too_many_arguments)]
fn attention_core(
    g: &mut Graph,
    q_feat: NodeId,
    k_feat: NodeId,
    values: NodeId,
    residual: NodeId,
    valid: Option<&[bool]>,
    n_heads: usize,
    p: &AttentionParams,
    dropout_mask: Option<&Tensor>,
) -> Result<NodeId, TensorError> {
    let d_model = g.value(values).cols();
    if d_model % n_heads != 0 {
        return Err(TensorError::Shape(format!("{d_model} dims not divisible by {n_heads} heads")));
    }
    let d_h = d_model / n_heads;
    let q_proj = g.matmul(q_feat, p.w_q)?;
    let q_proj = g.add_bias(q_proj, p.b_q)?;
    let k_proj = g.matmul(k_feat, p.w_k)?;
    let k_proj = g.add_bias(k_proj, p.b_k)?;
    let v_proj = g.matmul(values, p.w_v)?;
    let v_proj = g.add_bias(v_proj, p.b_v)?;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let q_h = g.slice_cols(q_proj, h * d_h, (h + 1) * d_h)?;
        let k_h = g.slice_cols(k_proj, h * d_h, (h + 1) * d_h)?;
        let v_h = g.slice_cols(v_proj, h * d_h, (h + 1) * d_h)?;
        let k_t = g.transpose(k_h);
        let scores = g.matmul(q_h, k_t)?;
        let scores = g.scale(scores, 1.0 / (d_h as f64).sqrt());
        let mut weights = g.softmax_rows(scores, valid)?;
        if let Some(mask) = dropout_mask {
            let rows = g.value(weights).rows();
            let cols = g.value(weights).cols();
            let mut m = Tensor::zeros(&[rows, cols]);
            for i in 0..rows * cols {
                m.data[i] = mask.data[(h * rows * cols + i) % mask.data.len()];
            }
            let m = g.constant(m);
            weights = g.mul(weights, m);
        }
        heads.push(g.matmul(weights, v_h)?);
    }
    let mut ctx = heads[0];
    for &h in &heads[1..] {
        ctx = g.concat_cols(ctx, h)?;
    }
    let out = g.matmul(ctx, p.w_o)?;
    let out = g.add_bias(out, p.b_o)?;
    let res = g.add(residual, out);
    g.layer_norm(res, p.ln_gain, p.ln_bias)
}

/// Multi-head attention with optional additive positional terms on queries
/// and keys. The residual path comes from `queries`; the output is
/// layer-normalized. `valid` masks key tokens.
#[allow(clippy::too_many_arguments)]
pub fn attention_block(
    g: &mut Graph,
    queries: NodeId,
    keys: NodeId,
    values: NodeId,
    pos_q: Option<NodeId>,
    pos_k: Option<NodeId>,
    valid: Option<&[bool]>,
    n_heads: usize,
    p: &AttentionParams,
    dropout_mask: Option<&Tensor>,
) -> Result<NodeId, TensorError> {
    let q_feat = match pos_q {
        Some(pq) => g.add(queries, pq),
        None => queries,
    };
    let k_feat = match pos_k {
        Some(pk) => g.add(keys, pk),
        None => keys,
    };
    attention_core(g, q_feat, k_feat, values, queries, valid, n_heads, p, dropout_mask)
}

/// Cross-attention in the concatenated query form: query features are
/// `[content, pos]` and key features `[keys, key_pos]` along channels, the
/// value path and the residual stay at model width.
#[allow(clippy::too_many_arguments)]
pub fn cross_attention_concat(
    g: &mut Graph,
    q_content: NodeId,
    q_pos: NodeId,
    keys: NodeId,
    key_pos: NodeId,
    valid: Option<&[bool]>,
    n_heads: usize,
    p: &AttentionParams,
    dropout_mask: Option<&Tensor>,
) -> Result<NodeId, TensorError> {
    let q_feat = g.concat_cols(q_content, q_pos)?;
    let k_feat = g.concat_cols(keys, key_pos)?;
    attention_core(g, q_feat, k_feat, keys, q_content, valid, n_heads, p, dropout_mask)
}

/// Node ids of one two-layer MLP's parameters.
#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl MlpParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) {
        store.add(&format!("{prefix}.w1"), Tensor::xavier(rng, d_in, d_hidden));
        store.add(&format!("{prefix}.b1"), Tensor::zeros(&[1, d_hidden]));
        store.add(&format!("{prefix}.w2"), Tensor::xavier(rng, d_hidden, d_out));
        store.add(&format!("{prefix}.b2"), Tensor::zeros(&[1, d_out]));
    }

    pub fn bind(store: &ParamStore, g: &mut Graph, prefix: &str) -> Self {
        Self {
            w1: store.bind(g, &format!("{prefix}.w1")),
            b1: store.bind(g, &format!("{prefix}.b1")),
            w2: store.bind(g, &format!("{prefix}.w2")),
            b2: store.bind(g, &format!("{prefix}.b2")),
        }
    }
}

/// Linear -> GELU -> Linear.
pub fn mlp_block(g: &mut Graph, x: NodeId, p: &MlpParams) -> Result<NodeId, TensorError> {
    let h = g.matmul(x, p.w1)?;
    let h = g.add_bias(h, p.b1)?;
    let h = g.gelu(h);
    let out = g.matmul(h, p.w2)?;
    g.add_bias(out, p.b2)
}

/// Sinusoidal encoding of continuous scalars: one row of `dim` features per
/// value, interleaved sin/cos over geometrically spaced wavelengths.
pub fn sinusoidal_embedding(values: &[f64], dim: usize) -> Tensor {
    assert!(dim % 2 == 0, "embedding dim must be even");
    let mut out = Tensor::zeros(&[values.len(), dim]);
    for (r, &pos) in values.iter().enumerate() {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            out.data[r * dim + 2 * i] = (pos * freq).sin();
            out.data[r * dim + 2 * i + 1] = (pos * freq).cos();
        }
    }
    out
}

/// Positional encoding for a token sequence, indexed 0..n.
pub fn token_position_encoding(n: usize, dim: usize) -> Tensor {
    let positions: Vec<f64> = (0..n).map(|i| i as f64).collect();
    sinusoidal_embedding(&positions, dim)
}

/// Inverted-dropout mask: 0 with probability `p`, else 1/(1-p).
pub fn dropout<R: Rng>(rng: &mut R, len: usize, p: f64) -> Tensor {
    let keep = 1.0 - p;
    let data = (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / keep })
        .collect();
    Tensor { shape: vec![1, len], data }
}
