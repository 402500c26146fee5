//! The risk-aware prediction network. Agent tracks, map polylines, and risk
//! histories become per-entity tokens via per-point MLPs with max pooling; a
//! masked self-attention encoder mixes them; the decoder crosses endpoint
//! and risk intention queries into the encoded scene and emits a
//! (N_end x N_risk)-mode prediction matrix at every layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use scrisk_tensor::checkpoint::{self, CheckpointError};
use scrisk_tensor::{
    attention_block, cross_attention_concat, mlp_block, sinusoidal_embedding,
    token_position_encoding, AttentionParams, Graph, MlpParams, NodeId, ParamStore, Tensor,
    TensorError,
};

use crate::config::ModelConfig;
use crate::features::{SceneSample, AGENT_FEAT, MAP_FEAT, RISK_FEAT};
use crate::intentions::IntentionSet;
use crate::prediction::{select_top_k_modes, PredictionMode, PredictionSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("risk history missing for {missing} of {total} agents")]
    MissingRisk { missing: usize, total: usize },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

/// Raw per-layer head outputs, shapes [M, t_f*7], [M, t_f*3], [M, 1].
pub struct LayerOutput {
    pub traj_raw: NodeId,
    pub risk_raw: NodeId,
    pub logits: NodeId,
}

/// A completed forward pass with the graph still alive for backward.
pub struct Forward {
    pub graph: Graph,
    pub layers: Vec<LayerOutput>,
    pub dense_loss: NodeId,
}

struct Encoded {
    e_a: NodeId,
    e_m: Option<NodeId>,
    e_r: Option<NodeId>,
    pe_a: Tensor,
    pe_m: Tensor,
    pe_r: Tensor,
    valid_a: Vec<bool>,
    valid_r: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct CkptConfig {
    model: ModelConfig,
    intentions: IntentionSet,
}

pub struct ErqModel {
    pub config: ModelConfig,
    pub intentions: IntentionSet,
    pub store: ParamStore,
}

impl ErqModel {
    /// Builds a model with freshly initialized parameters.
    pub fn new(config: ModelConfig, intentions: IntentionSet, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::ConfigMismatch)?;
        if intentions.n_end() != config.n_end || intentions.n_risk() != config.n_risk() {
            return Err(ModelError::ConfigMismatch(format!(
                "intentions {}x{} do not match config {}x{}",
                intentions.n_end(),
                intentions.n_risk(),
                config.n_end,
                config.n_risk()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_f;
        let head_hidden = (2 * d).max(128);
        MlpParams::init(&mut store, &mut rng, "enc.agent", AGENT_FEAT, d, d);
        MlpParams::init(&mut store, &mut rng, "enc.map", MAP_FEAT, d, d);
        MlpParams::init(&mut store, &mut rng, "enc.risk", RISK_FEAT, d, d);
        for l in 0..config.n_enc {
            AttentionParams::init(&mut store, &mut rng, &format!("enc.attn{l}"), d, d, d);
        }
        MlpParams::init(&mut store, &mut rng, "dense.head", d, head_hidden, config.t_f * 4);
        MlpParams::init(&mut store, &mut rng, "intent.end", 2 * d, d, d);
        MlpParams::init(&mut store, &mut rng, "intent.risk", d, d, d);
        for l in 0..config.n_dec {
            AttentionParams::init(&mut store, &mut rng, &format!("dec{l}.self_t"), d, d, d);
            AttentionParams::init(&mut store, &mut rng, &format!("dec{l}.self_r"), d, d, d);
            AttentionParams::init(&mut store, &mut rng, &format!("dec{l}.cross_a"), 2 * d, 2 * d, d);
            AttentionParams::init(&mut store, &mut rng, &format!("dec{l}.cross_m"), 2 * d, 2 * d, d);
            AttentionParams::init(&mut store, &mut rng, &format!("dec{l}.cross_r"), 2 * d, 2 * d, d);
            MlpParams::init(&mut store, &mut rng, &format!("dec{l}.fuse_t"), 2 * d, d, d);
            MlpParams::init(&mut store, &mut rng, &format!("dec{l}.fuse_q"), 2 * d, d, d);
            MlpParams::init(&mut store, &mut rng, &format!("dec{l}.head_traj"), d, head_hidden, config.t_f * 7);
            // Start the sigma channels near 1.4 m rather than the floor, so
            // the initial likelihood surface is well conditioned.
            {
                let bias = store.get_mut(&format!("dec{l}.head_traj.b2"));
                for t in 0..config.t_f {
                    bias.data[t * 7 + 2] = 1.0;
                    bias.data[t * 7 + 3] = 1.0;
                }
            }
            MlpParams::init(&mut store, &mut rng, &format!("dec{l}.head_risk"), d, head_hidden, config.t_f * 3);
            MlpParams::init(&mut store, &mut rng, &format!("dec{l}.head_logit"), d, d, 1);
        }
        Ok(Self { config, intentions, store })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let cfg = CkptConfig { model: self.config.clone(), intentions: self.intentions.clone() };
        let value = serde_json::to_value(&cfg)
            .map_err(|e| ModelError::ConfigMismatch(e.to_string()))?;
        checkpoint::save(path, &self.store, &value)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let (store, value) = checkpoint::load(path)?;
        let cfg: CkptConfig = serde_json::from_value(value)
            .map_err(|e| ModelError::ConfigMismatch(format!("bad checkpoint config: {e}")))?;
        cfg.model.validate().map_err(ModelError::ConfigMismatch)?;
        Ok(Self { config: cfg.model, intentions: cfg.intentions, store })
    }

    fn dropout_mask(&self, rng: &mut Option<&mut ChaCha8Rng>) -> Option<Tensor> {
        match rng {
            Some(r) if self.config.dropout > 0.0 => {
                Some(scrisk_tensor::dropout(r, 4096, self.config.dropout))
            }
            _ => None,
        }
    }

    /// Per-entity polyline encoding then masked self-attention over all
    /// tokens; returns the split agent/map/risk features.
    fn encode(
        &self,
        g: &mut Graph,
        sample: &SceneSample,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded, ModelError> {
        let cfg = &self.config;
        let d = cfg.d_f;
        if sample.risk_features.len() != sample.n_others() {
            return Err(ModelError::MissingRisk {
                missing: sample.n_others() - sample.risk_features.len().min(sample.n_others()),
                total: sample.n_others(),
            });
        }
        let agent_mlp = MlpParams::bind(&self.store, g, "enc.agent");
        let map_mlp = MlpParams::bind(&self.store, g, "enc.map");
        let risk_mlp = MlpParams::bind(&self.store, g, "enc.risk");
        let mut tokens: Vec<NodeId> = Vec::new();
        for feat in &sample.agent_features {
            let x = g.constant(feat.clone());
            let enc = mlp_block(g, x, &agent_mlp)?;
            tokens.push(g.max_rows(enc));
        }
        for feat in &sample.map_features {
            let x = g.constant(feat.clone());
            let enc = mlp_block(g, x, &map_mlp)?;
            tokens.push(g.max_rows(enc));
        }
        for feat in &sample.risk_features {
            let x = g.constant(feat.clone());
            let enc = mlp_block(g, x, &risk_mlp)?;
            tokens.push(g.max_rows(enc));
        }
        let mut x = g.concat_rows(&tokens)?;

        let n_a = sample.n_agents();
        let n_m = sample.n_maps();
        let n_r = sample.n_others();
        // Positions restart within each token group, so dropping a trailing
        // padded agent cannot shift anyone else's encoding.
        let pe_a = token_position_encoding(n_a, d);
        let pe_m = token_position_encoding(n_m, d);
        let pe_r = token_position_encoding(n_r, d);
        let mut pe = Tensor::zeros(&[n_a + n_m + n_r, d]);
        pe.data[..n_a * d].copy_from_slice(&pe_a.data);
        pe.data[n_a * d..(n_a + n_m) * d].copy_from_slice(&pe_m.data);
        pe.data[(n_a + n_m) * d..].copy_from_slice(&pe_r.data);
        let pe_node = g.constant(pe);

        let valid_a = sample.agent_valid.clone();
        let valid_r: Vec<bool> = sample.agent_valid[1..].to_vec();
        let mut valid = valid_a.clone();
        valid.extend(std::iter::repeat(true).take(n_m));
        valid.extend(valid_r.iter().copied());

        for l in 0..cfg.n_enc {
            let p = AttentionParams::bind(&self.store, g, &format!("enc.attn{l}"));
            let mask = self.dropout_mask(rng);
            x = attention_block(
                g,
                x,
                x,
                x,
                Some(pe_node),
                Some(pe_node),
                Some(&valid),
                cfg.n_heads,
                &p,
                mask.as_ref(),
            )?;
        }
        let e_a = g.slice_rows(x, 0, n_a)?;
        let e_m = if n_m > 0 { Some(g.slice_rows(x, n_a, n_a + n_m)?) } else { None };
        let e_r = if n_r > 0 { Some(g.slice_rows(x, n_a + n_m, n_a + n_m + n_r)?) } else { None };
        Ok(Encoded { e_a, e_m, e_r, pe_a, pe_m, pe_r, valid_a, valid_r })
    }

    /// Dense per-agent future prediction; returns the auxiliary loss.
    fn dense_future(
        &self,
        g: &mut Graph,
        e_a: NodeId,
        sample: &SceneSample,
    ) -> Result<NodeId, ModelError> {
        let head = MlpParams::bind(&self.store, g, "dense.head");
        let pred = mlp_block(g, e_a, &head)?;
        let gt_rows: Vec<Vec<f64>> = sample.gt_dense.iter().map(|t| t.data.clone()).collect();
        let gt = g.constant(Tensor::from_rows(&gt_rows));
        let elem = g.smooth_l1(pred, gt);
        let n_valid = sample.agent_valid.iter().filter(|&&v| v).count().max(1);
        let cols = self.config.t_f * 4;
        let mut mask = Tensor::zeros(&[sample.n_agents(), cols]);
        for (i, &ok) in sample.agent_valid.iter().enumerate() {
            if ok {
                mask.data[i * cols..(i + 1) * cols].fill(1.0);
            }
        }
        let mask = g.constant(mask);
        let masked = g.mul(elem, mask);
        let total = g.sum_all(masked);
        Ok(g.scale(total, 1.0 / (n_valid * cols) as f64))
    }

    /// Sinusoidal-then-MLP embedding of the endpoint and risk intentions.
    fn embed_intentions(&self, g: &mut Graph) -> Result<(NodeId, NodeId), ModelError> {
        let d = self.config.d_f;
        let xs: Vec<f64> = self.intentions.endpoints.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = self.intentions.endpoints.iter().map(|p| p[1]).collect();
        let pe_x = sinusoidal_embedding(&xs, d);
        let pe_y = sinusoidal_embedding(&ys, d);
        let n = xs.len();
        let mut pe = Tensor::zeros(&[n, 2 * d]);
        for r in 0..n {
            pe.data[r * 2 * d..r * 2 * d + d].copy_from_slice(&pe_x.data[r * d..(r + 1) * d]);
            pe.data[r * 2 * d + d..(r + 1) * 2 * d].copy_from_slice(&pe_y.data[r * d..(r + 1) * d]);
        }
        let pe = g.constant(pe);
        let end_mlp = MlpParams::bind(&self.store, g, "intent.end");
        let t_end = mlp_block(g, pe, &end_mlp)?;
        let pe_r = g.constant(sinusoidal_embedding(&self.intentions.risks, d));
        let risk_mlp = MlpParams::bind(&self.store, g, "intent.risk");
        let t_risk = mlp_block(g, pe_r, &risk_mlp)?;
        Ok((t_end, t_risk))
    }

    #[allow(clippy::too_many_arguments)]
    fn decode_layer(
        &self,
        g: &mut Graph,
        layer: usize,
        q_t: NodeId,
        q_r: NodeId,
        t_t: NodeId,
        t_r: NodeId,
        enc: &Encoded,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(LayerOutput, NodeId, NodeId), ModelError> {
        let cfg = &self.config;
        let heads = cfg.n_heads;
        let n_risk = cfg.n_risk();
        let n_end = cfg.n_end;

        let p_self_t = AttentionParams::bind(&self.store, g, &format!("dec{layer}.self_t"));
        let mask = self.dropout_mask(rng);
        let s_t = attention_block(g, q_t, q_t, q_t, Some(t_t), Some(t_t), None, heads, &p_self_t, mask.as_ref())?;
        let p_self_r = AttentionParams::bind(&self.store, g, &format!("dec{layer}.self_r"));
        let mask = self.dropout_mask(rng);
        let s_r = attention_block(g, q_r, q_r, q_r, Some(t_r), Some(t_r), None, heads, &p_self_r, mask.as_ref())?;

        let p_cross_a = AttentionParams::bind(&self.store, g, &format!("dec{layer}.cross_a"));
        let pe_a = g.constant(enc.pe_a.clone());
        let mask = self.dropout_mask(rng);
        let c_a = cross_attention_concat(
            g,
            s_t,
            t_t,
            enc.e_a,
            pe_a,
            Some(&enc.valid_a),
            heads,
            &p_cross_a,
            mask.as_ref(),
        )?;
        let c_m = match enc.e_m {
            Some(e_m) => {
                let p_cross_m = AttentionParams::bind(&self.store, g, &format!("dec{layer}.cross_m"));
                let pe_m = g.constant(enc.pe_m.clone());
                let mask = self.dropout_mask(rng);
                cross_attention_concat(g, s_t, t_t, e_m, pe_m, None, heads, &p_cross_m, mask.as_ref())?
            }
            None => g.constant(Tensor::zeros(&[n_end, cfg.d_f])),
        };
        let fuse_t = MlpParams::bind(&self.store, g, &format!("dec{layer}.fuse_t"));
        let cat_t = g.concat_cols(c_a, c_m)?;
        let c_t = mlp_block(g, cat_t, &fuse_t)?;

        let c_r = match enc.e_r {
            Some(e_r) if enc.valid_r.iter().any(|&v| v) => {
                let p_cross_r = AttentionParams::bind(&self.store, g, &format!("dec{layer}.cross_r"));
                let pe_r = g.constant(enc.pe_r.clone());
                let mask = self.dropout_mask(rng);
                cross_attention_concat(
                    g,
                    s_r,
                    t_r,
                    e_r,
                    pe_r,
                    Some(&enc.valid_r),
                    heads,
                    &p_cross_r,
                    mask.as_ref(),
                )?
            }
            _ => s_r,
        };

        // Ext to the coupled mode matrix, endpoint-major: m = e * N_risk + r.
        let c_te = g.repeat_rows(c_t, n_risk);
        let c_re = g.tile_rows(c_r, n_end);
        let fuse_q = MlpParams::bind(&self.store, g, &format!("dec{layer}.fuse_q"));
        let cat_q = g.concat_cols(c_te, c_re)?;
        let q_full = mlp_block(g, cat_q, &fuse_q)?;

        let head_traj = MlpParams::bind(&self.store, g, &format!("dec{layer}.head_traj"));
        let traj_raw = mlp_block(g, q_full, &head_traj)?;
        let head_risk = MlpParams::bind(&self.store, g, &format!("dec{layer}.head_risk"));
        let risk_raw = mlp_block(g, q_full, &head_risk)?;
        let head_logit = MlpParams::bind(&self.store, g, &format!("dec{layer}.head_logit"));
        let logits = mlp_block(g, q_full, &head_logit)?;

        // Avg back to per-axis query content features.
        let q_t_next = g.mean_rows_chunked(q_full, n_risk)?;
        let q_r_next = g.mean_rows_strided(q_full, n_risk)?;
        Ok((LayerOutput { traj_raw, risk_raw, logits }, q_t_next, q_r_next))
    }

    /// Full forward pass. `rng` enables the seeded dropout used in training;
    /// pass `None` for the deterministic evaluation path.
    pub fn forward(
        &self,
        sample: &SceneSample,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward, ModelError> {
        let cfg = &self.config;
        let mut g = Graph::new();
        let enc = self.encode(&mut g, sample, &mut rng)?;
        let dense_loss = self.dense_future(&mut g, enc.e_a, sample)?;
        let (t_t, t_r) = self.embed_intentions(&mut g)?;
        let mut q_t = g.constant(Tensor::zeros(&[cfg.n_end, cfg.d_f]));
        let mut q_r = g.constant(Tensor::zeros(&[cfg.n_risk(), cfg.d_f]));
        let mut layers = Vec::with_capacity(cfg.n_dec);
        for l in 0..cfg.n_dec {
            let (out, q_t_next, q_r_next) =
                self.decode_layer(&mut g, l, q_t, q_r, t_t, t_r, &enc, &mut rng)?;
            layers.push(out);
            q_t = q_t_next;
            q_r = q_r_next;
        }
        Ok(Forward { graph: g, layers, dense_loss })
    }

    /// Deterministic multimodal prediction with k selected modes and
    /// renormalized probabilities.
    pub fn predict(&self, sample: &SceneSample, k: usize) -> Result<PredictionSet, ModelError> {
        let cfg = &self.config;
        if k == 0 || k > cfg.n_modes() {
            return Err(ModelError::ConfigMismatch(format!(
                "k = {k} outside 1..={}",
                cfg.n_modes()
            )));
        }
        let fw = self.forward(sample, None)?;
        let last = fw.layers.last().expect("n_dec >= 1");
        let g = &fw.graph;
        let logits = g.value(last.logits);
        let m = cfg.n_modes();
        let max_logit = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.data.iter().map(|&v| (v - max_logit).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();

        let traj = g.value(last.traj_raw);
        let risk = g.value(last.risk_raw);
        let origin = sample.origin;
        let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
        let mut modes = Vec::with_capacity(m);
        for mode in 0..m {
            let mut trajectory = Vec::with_capacity(cfg.t_f);
            let mut velocity = Vec::with_capacity(cfg.t_f);
            let mut risk_seq = Vec::with_capacity(cfg.t_f);
            for t in 0..cfg.t_f {
                let base = mode * cfg.t_f * 7 + t * 7;
                let (wx, wy) = origin.to_world(traj.data[base], traj.data[base + 1]);
                let sx = cfg.sigma_min + softplus(traj.data[base + 2]);
                let sy = cfg.sigma_min + softplus(traj.data[base + 3]);
                let rho = scrisk_tensor::RHO_SCALE * traj.data[base + 4].tanh();
                trajectory.push([wx, wy, sx, sy, rho]);
                let (vx, vy) = origin.vec_to_world(traj.data[base + 5], traj.data[base + 6]);
                velocity.push([vx, vy]);
                let rbase = mode * cfg.t_f * 3 + t * 3;
                let raw_risk = risk.data[rbase + 2] * scrisk_core::risk::RISK_MAX;
                risk_seq.push([
                    risk.data[rbase],
                    risk.data[rbase + 1],
                    raw_risk.clamp(0.0, scrisk_core::risk::RISK_MAX),
                ]);
            }
            modes.push(PredictionMode {
                trajectory,
                velocity,
                risk: risk_seq,
                probability: probs[mode],
            });
        }
        let selected = select_top_k_modes(&modes, k, cfg.nms_radius);
        let total: f64 = selected.iter().map(|&i| modes[i].probability).sum();
        let modes: Vec<PredictionMode> = selected
            .into_iter()
            .map(|i| {
                let mut md = modes[i].clone();
                md.probability /= total;
                md
            })
            .collect();
        Ok(PredictionSet {
            scene_id: sample.scene_id.clone(),
            origin: [origin.x, origin.y, origin.heading],
            frequency_hz: scrisk_core::FRAME_HZ,
            modes,
        })
    }
}
