//! Model hyperparameters.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Shared feature width of encoder and decoder.
    pub d_f: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub n_heads: usize,
    /// Endpoint intention count (clustered trajectory endpoints).
    pub n_end: usize,
    /// History and future lengths in frames at 20 Hz.
    pub t_h: usize,
    pub t_f: usize,
    pub dropout: f64,
    pub lambda_dense: f64,
    pub lambda_risk: f64,
    /// Lower bound on predicted Gaussian sigmas, meters.
    pub sigma_min: f64,
    /// Endpoint suppression radius for mode selection, meters.
    pub nms_radius: f64,
    /// Risk intention levels on the 0..999 scale, strictly increasing,
    /// ending at 999.
    pub risk_intentions: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_f: 64,
            n_enc: 2,
            n_dec: 2,
            n_heads: 4,
            n_end: 16,
            t_h: 20,
            t_f: 100,
            dropout: 0.1,
            lambda_dense: 1.0,
            lambda_risk: 0.3,
            sigma_min: 0.1,
            nms_radius: 2.0,
            risk_intentions: vec![300.0, 600.0, 999.0],
        }
    }
}

impl ModelConfig {
    pub fn n_risk(&self) -> usize {
        self.risk_intentions.len()
    }

    pub fn n_modes(&self) -> usize {
        self.n_end * self.n_risk()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_f == 0 || self.d_f % self.n_heads != 0 {
            return Err(format!("model.d_f {} must be divisible by n_heads {}", self.d_f, self.n_heads));
        }
        if self.d_f % 2 != 0 {
            return Err("model.d_f must be even for sinusoidal encodings".into());
        }
        if self.n_end == 0 || self.risk_intentions.is_empty() {
            return Err("model: n_end and risk_intentions must be non-empty".into());
        }
        if self.t_h == 0 || self.t_f == 0 {
            return Err("model: t_h and t_f must be >= 1".into());
        }
        if self.lambda_dense < 0.0 || self.lambda_risk < 0.0 {
            return Err("model: loss weights must be >= 0".into());
        }
        if self.sigma_min <= 0.0 {
            return Err("model: sigma_min must be > 0".into());
        }
        if self.nms_radius < 0.0 {
            return Err("model: nms_radius must be >= 0".into());
        }
        for w in self.risk_intentions.windows(2) {
            if w[1] <= w[0] {
                return Err("model: risk_intentions must be strictly increasing".into());
            }
        }
        let last = *self.risk_intentions.last().unwrap();
        if (last - 999.0).abs() > 1e-9 {
            return Err(format!("model: risk_intentions must end at 999, got {last}"));
        }
        if self.n_enc == 0 || self.n_dec == 0 {
            return Err("model: n_enc and n_dec must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("model: dropout must be in [0, 1)".into());
        }
        Ok(())
    }
}
