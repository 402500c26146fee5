//! Deterministic training loop: shuffled mini-batches, per-scene graphs with
//! gradient accumulation, AdamW with a stepwise learning-rate schedule, and
//! a CSV loss log.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use scrisk_tensor::AdamWConfig;

use crate::features::SceneSample;
use crate::losses::{build_losses, LossBreakdown, VELOCITY_LOSS_WEIGHT};
use crate::model::{ErqModel, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// (step, factor) pairs: the learning rate is multiplied by `factor`
    /// from `step` onward.
    pub lr_schedule: Vec<(usize, f64)>,
    pub velocity_loss_weight: f64,
    pub log_every: usize,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 2000,
            batch_size: 8,
            lr_schedule: vec![(1000, 0.5), (1250, 0.5), (1500, 0.5), (1750, 0.5)],
            velocity_loss_weight: VELOCITY_LOSS_WEIGHT,
            log_every: 10,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lr <= 0.0 || self.steps == 0 || self.batch_size == 0 {
            return Err("training: lr > 0, steps >= 1, batch_size >= 1 required".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("training: betas must be in [0, 1)".into());
        }
        if self.lr_schedule.iter().any(|(_, f)| *f <= 0.0) {
            return Err("training: schedule factors must be > 0".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.lr;
        for (s, f) in &self.lr_schedule {
            if step >= *s {
                lr *= f;
            }
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub l_traj: f64,
    pub l_dense: f64,
    pub l_risk: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
}

/// Runs the training loop in place. On a non-finite loss the model is rolled
/// back to the last finite step before the error returns, so the caller can
/// still checkpoint it.
pub fn train(
    model: &mut ErqModel,
    samples: &[SceneSample],
    cfg: &TrainConfig,
    seed: u64,
    mut on_log: impl FnMut(&LogRow),
) -> Result<Vec<LogRow>, TrainError> {
    assert!(!samples.is_empty(), "training needs at least one sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = samples.len(); // force reshuffle on first use
    let mut log = Vec::new();
    let mut last_good: Option<(scrisk_tensor::ParamStore, u64)> = None;
    for step in 0..cfg.steps {
        let adamw = AdamWConfig {
            lr: cfg.lr_at(step),
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        };
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                if cfg.shuffle {
                    order.shuffle(&mut rng);
                }
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut sums = LossBreakdown { l_traj: 0.0, l_dense: 0.0, l_risk: 0.0, total: 0.0, i_star: 0, j_star: 0 };
        for &idx in &batch {
            let sample = &samples[idx];
            let mut fw = model.forward(sample, Some(&mut rng))?;
            let (total, breakdown) =
                build_losses(&mut fw, sample, &model.intentions, &model.config, cfg.velocity_loss_weight)?;
            if !breakdown.total.is_finite() {
                if let Some((store, adam_step)) = last_good {
                    model.store = store;
                    model.store.step = adam_step;
                }
                return Err(TrainError::NonFiniteLoss { step });
            }
            let grads = fw.graph.backward(total).map_err(ModelError::Tensor)?;
            model.store.accumulate(&fw.graph, &grads);
            sums.l_traj += breakdown.l_traj;
            sums.l_dense += breakdown.l_dense;
            sums.l_risk += breakdown.l_risk;
            sums.total += breakdown.total;
        }
        if !model.store.grads_finite() {
            if let Some((store, adam_step)) = last_good {
                model.store = store;
                model.store.step = adam_step;
            }
            return Err(TrainError::NonFiniteLoss { step });
        }
        last_good = Some((model.store.clone(), model.store.step));
        let inv = 1.0 / batch.len() as f64;
        model.store.scale_grads(inv);
        model.store.adamw_step(&adamw);
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            let row = LogRow {
                step,
                lr: adamw.lr,
                total: sums.total * inv,
                l_traj: sums.l_traj * inv,
                l_dense: sums.l_dense * inv,
                l_risk: sums.l_risk * inv,
            };
            on_log(&row);
            log.push(row);
        }
    }
    Ok(log)
}

/// CSV rendering of the loss log; formatted identically across runs.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,lr,total,l_traj,l_dense,l_risk\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            r.step, r.lr, r.total, r.l_traj, r.l_dense, r.l_risk
        ));
    }
    out
}
