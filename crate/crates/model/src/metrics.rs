//! Classical displacement metrics, collision-time grouping, and the
//! tailored safety-critical metrics: collision miss rate, collision
//! velocity/time errors, risk errors, and the multimodal collision
//! probability estimate.

use serde::{Deserialize, Serialize};

use scrisk_core::kinematics::{first_collision, Trajectory};
use scrisk_core::risk::RISK_MAX;
use scrisk_core::scene::SceneRecord;
use scrisk_core::FRAME_HZ;

use crate::prediction::{PredictionMode, PredictionSet};

/// Validation groups keyed by the ground-truth collision time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalGroup {
    NonCollision,
    CollisionIn1s,
    CollisionIn2s,
    CollisionIn5s,
}

impl EvalGroup {
    pub const ALL: [EvalGroup; 4] = [
        EvalGroup::NonCollision,
        EvalGroup::CollisionIn1s,
        EvalGroup::CollisionIn2s,
        EvalGroup::CollisionIn5s,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EvalGroup::NonCollision => "non_collision",
            EvalGroup::CollisionIn1s => "collision_in_1s",
            EvalGroup::CollisionIn2s => "collision_in_2s",
            EvalGroup::CollisionIn5s => "collision_in_5s",
        }
    }
}

/// Metric thresholds; the miss thresholds come from the tailored metric
/// definitions (2.5 m/s, 0.25 s, 0.15 normalized risk), the 2.0 m miss
/// radius is the common displacement convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub mr_threshold_m: f64,
    pub velo_miss_threshold: f64,
    pub time_miss_threshold: f64,
    pub risk_miss_threshold: f64,
    /// Closed upper bounds of the collision-time groups, seconds.
    pub group_bounds: [f64; 3],
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            mr_threshold_m: 2.0,
            velo_miss_threshold: 2.5,
            time_miss_threshold: 0.25,
            risk_miss_threshold: 0.15,
            group_bounds: [1.0, 2.0, 5.0],
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.mr_threshold_m > 0.0
            && self.velo_miss_threshold > 0.0
            && self.time_miss_threshold > 0.0
            && self.risk_miss_threshold > 0.0
            && self.group_bounds[0] < self.group_bounds[1]
            && self.group_bounds[1] < self.group_bounds[2];
        if ok {
            Ok(())
        } else {
            Err("metrics: thresholds must be positive and group bounds increasing".into())
        }
    }

    pub fn group_of_time(&self, t: Option<f64>) -> EvalGroup {
        match t {
            None => EvalGroup::NonCollision,
            Some(t) if t <= self.group_bounds[0] => EvalGroup::CollisionIn1s,
            Some(t) if t <= self.group_bounds[1] => EvalGroup::CollisionIn2s,
            _ => EvalGroup::CollisionIn5s,
        }
    }
}

pub fn group_by_collision_time(scene: &SceneRecord, cfg: &MetricsConfig) -> EvalGroup {
    cfg.group_of_time(scene.collision_time())
}

/// Classical displacement metrics over the Gaussian means of the given
/// prediction set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub mr_flag: bool,
    pub brier_min_fde: f64,
}

pub fn classical_metrics(
    pred: &PredictionSet,
    gt_future: &[(f64, f64)],
    cfg: &MetricsConfig,
) -> ClassicalMetrics {
    assert!(!pred.modes.is_empty());
    assert_eq!(pred.modes[0].trajectory.len(), gt_future.len(), "length mismatch");
    let t_f = gt_future.len();
    let mut min_ade = f64::INFINITY;
    let mut min_fde = f64::INFINITY;
    let mut best_fde_prob = 0.0;
    for mode in &pred.modes {
        let mut sum = 0.0;
        for (p, gt) in mode.trajectory.iter().zip(gt_future) {
            sum += (p[0] - gt.0).hypot(p[1] - gt.1);
        }
        let ade = sum / t_f as f64;
        let last = mode.trajectory.last().unwrap();
        let gt_last = gt_future.last().unwrap();
        let fde = (last[0] - gt_last.0).hypot(last[1] - gt_last.1);
        min_ade = min_ade.min(ade);
        if fde < min_fde {
            min_fde = fde;
            best_fde_prob = mode.probability;
        }
    }
    ClassicalMetrics {
        min_ade,
        min_fde,
        mr_flag: min_fde > cfg.mr_threshold_m,
        brier_min_fde: min_fde + (1.0 - best_fde_prob) * (1.0 - best_fde_prob),
    }
}

/// World-frame ground-truth future positions of the target.
pub fn gt_future_positions(scene: &SceneRecord, t_f: usize) -> Vec<(f64, f64)> {
    let h = scene.hazard_frame;
    scene.target().states[h + 1..h + 1 + t_f].iter().map(|s| (s.x, s.y)).collect()
}

/// Earliest collision of one predicted mode against any other agent's
/// ground-truth future.
fn mode_collision(
    mode: &PredictionMode,
    scene: &SceneRecord,
) -> Option<scrisk_core::kinematics::CollisionInfo> {
    let target = scene.target();
    let pred_traj = mode.as_trajectory(target.extent_length, target.extent_width, target.mass);
    let h = scene.hazard_frame;
    let t_f = mode.trajectory.len();
    let mut earliest: Option<scrisk_core::kinematics::CollisionInfo> = None;
    for other in scene.others() {
        let fut = Trajectory::new(
            1.0 / FRAME_HZ,
            FRAME_HZ,
            other.states[h + 1..h + 1 + t_f].to_vec(),
        );
        if let Some(hit) =
            first_collision(&pred_traj, &fut, (scene.target_agent_id, other.id)).expect("rates match")
        {
            if earliest.map_or(true, |e| hit.frame < e.frame) {
                earliest = Some(hit);
            }
        }
    }
    earliest
}

/// Per-scene tailored safety metrics for one prediction set (k = all modes)
/// and its top-probability restriction (k = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyMetrics {
    pub group: EvalGroup,
    /// Fraction of modes whose trajectory collides with any other agent's
    /// ground-truth future.
    pub collision_fraction: f64,
    /// Collision scenes only.
    pub coll_hit_any: bool,
    pub coll_hit_top: bool,
    pub velo_err_k: Option<f64>,
    pub velo_err_top: Option<f64>,
    pub time_err_k: Option<f64>,
    pub time_err_top: Option<f64>,
    /// Non-collision scenes only: normalized max-risk errors.
    pub risk_err_k: Option<f64>,
    pub risk_err_top: Option<f64>,
}

pub fn safety_metrics(pred: &PredictionSet, scene: &SceneRecord, cfg: &MetricsConfig) -> SafetyMetrics {
    let group = group_by_collision_time(scene, cfg);
    let top = pred.top_mode();
    let hits: Vec<Option<scrisk_core::kinematics::CollisionInfo>> =
        pred.modes.iter().map(|m| mode_collision(m, scene)).collect();
    let n_hit = hits.iter().filter(|h| h.is_some()).count();
    let collision_fraction = n_hit as f64 / pred.modes.len() as f64;

    let mut out = SafetyMetrics {
        group,
        collision_fraction,
        coll_hit_any: false,
        coll_hit_top: false,
        velo_err_k: None,
        velo_err_top: None,
        time_err_k: None,
        time_err_top: None,
        risk_err_k: None,
        risk_err_top: None,
    };
    if let Some(gt_coll) = scene.collision {
        out.coll_hit_any = n_hit > 0;
        out.coll_hit_top = hits[top].is_some();
        let mut best_velo = f64::INFINITY;
        let mut best_time = f64::INFINITY;
        for hit in hits.iter().flatten() {
            best_velo = best_velo.min((hit.relative_speed - gt_coll.relative_speed).abs());
            best_time = best_time.min((hit.time - gt_coll.time).abs());
        }
        if n_hit > 0 {
            out.velo_err_k = Some(best_velo);
            out.time_err_k = Some(best_time);
        }
        if let Some(hit) = &hits[top] {
            out.velo_err_top = Some((hit.relative_speed - gt_coll.relative_speed).abs());
            out.time_err_top = Some((hit.time - gt_coll.time).abs());
        }
    } else {
        let t_f = pred.modes[0].trajectory.len();
        let h = scene.hazard_frame;
        let gt_max = scene.risk.total[h + 1..h + 1 + t_f]
            .iter()
            .map(|t| t.risk)
            .fold(0.0f64, f64::max);
        let err = |m: &PredictionMode| (m.max_risk() - gt_max).abs() / RISK_MAX;
        out.risk_err_k = pred
            .modes
            .iter()
            .map(err)
            .min_by(|a, b| a.partial_cmp(b).unwrap());
        out.risk_err_top = Some(err(&pred.modes[top]));
    }
    out
}

/// Fraction of modes colliding with any other agent's ground-truth future.
pub fn collision_probability_estimate(pred: &PredictionSet, scene: &SceneRecord) -> f64 {
    let n_hit = pred.modes.iter().filter(|m| mode_collision(m, scene).is_some()).count();
    n_hit as f64 / pred.modes.len() as f64
}
