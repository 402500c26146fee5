//! Target-centric feature extraction: turns a recorded scene into the
//! matrices the network consumes, and carries the ground-truth targets the
//! losses need.

use scrisk_core::kinematics::AgentState;
use scrisk_core::risk::RISK_MAX;
use scrisk_core::scene::SceneRecord;
use scrisk_tensor::Tensor;
use thiserror::Error;

use crate::config::ModelConfig;

pub const AGENT_FEAT: usize = 11;
pub const MAP_FEAT: usize = 4;
pub const RISK_FEAT: usize = 3;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("scene too short: needs {need} history and {need_f} future frames around the hazard")]
    WindowTooShort { need: usize, need_f: usize },
    #[error("scene lacks a risk timeline for its agents")]
    MissingRisk,
}

/// World pose anchoring the target-centric frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriginPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl OriginPose {
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.x;
        let dy = y - self.y;
        let (s, c) = self.heading.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn to_world(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.x + c * x - s * y, self.y + s * x + c * y)
    }

    pub fn vec_to_local(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (c * vx + s * vy, -s * vx + c * vy)
    }

    pub fn vec_to_world(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (c * vx - s * vy, s * vx + c * vy)
    }
}

/// One training/evaluation instance in the target frame at the hazard.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub scene_id: String,
    pub origin: OriginPose,
    /// Per-agent history features, target first then others in record order.
    pub agent_features: Vec<Tensor>,
    pub agent_valid: Vec<bool>,
    /// Per lane segment, [P, MAP_FEAT].
    pub map_features: Vec<Tensor>,
    /// Per other agent, [t_h, RISK_FEAT]; parallel to agents[1..].
    pub risk_features: Vec<Tensor>,
    /// Target future positions, [t_f, 2].
    pub gt_future: Tensor,
    /// Target future velocities, [t_f, 2].
    pub gt_future_vel: Tensor,
    /// Per-agent dense future targets [t_f, 4] (position offset + velocity).
    pub gt_dense: Vec<Tensor>,
    /// Future risk triple sequence of the target, risk channel normalized by
    /// 999: columns (probability, cost, risk/999).
    pub gt_risk_seq: Tensor,
    /// Target-frame endpoint of the ground-truth future.
    pub gt_endpoint: [f64; 2],
    /// Maximum raw comprehensive risk over the future window (0..999).
    pub gt_max_risk: f64,
}

fn agent_row(state: &AgentState, origin: &OriginPose, is_target: bool) -> Vec<f64> {
    let (x, y) = origin.to_local(state.x, state.y);
    let h = state.heading - origin.heading;
    vec![
        x,
        y,
        h.cos(),
        h.sin(),
        state.speed,
        state.yaw_rate,
        state.accel,
        state.extent_length,
        state.extent_width,
        state.mass / 1000.0,
        if is_target { 1.0 } else { 0.0 },
    ]
}

impl SceneSample {
    /// Builds the sample from a recorded scene, windowing `t_h` history
    /// frames ending at the hazard and `t_f` future frames after it.
    pub fn from_record(record: &SceneRecord, config: &ModelConfig) -> Result<Self, SampleError> {
        let h = record.hazard_frame;
        let n = record.n_frames();
        if h + 1 < config.t_h || h + config.t_f >= n {
            return Err(SampleError::WindowTooShort { need: config.t_h, need_f: config.t_f });
        }
        if record.risk.total.len() != n {
            return Err(SampleError::MissingRisk);
        }
        let target = record.target();
        let origin_state = &target.states[h];
        let origin = OriginPose { x: origin_state.x, y: origin_state.y, heading: origin_state.heading };
        let hist = (h + 1 - config.t_h)..(h + 1);
        let fut = h + 1..h + 1 + config.t_f;

        let mut agent_features = Vec::new();
        let mut agent_valid = Vec::new();
        let mut gt_dense = Vec::new();
        let mut order: Vec<&scrisk_core::scene::AgentTrack> = vec![target];
        order.extend(record.others());
        for (idx, track) in order.iter().enumerate() {
            let rows: Vec<Vec<f64>> = track.states[hist.clone()]
                .iter()
                .map(|s| agent_row(s, &origin, idx == 0))
                .collect();
            agent_features.push(Tensor::from_rows(&rows));
            agent_valid.push(true);
            let own = &track.states[h];
            let dense_rows: Vec<Vec<f64>> = track.states[fut.clone()]
                .iter()
                .map(|s| {
                    let (px, py) = origin.vec_to_local(s.x - own.x, s.y - own.y);
                    let (vx, vy) = s.velocity();
                    let (vx, vy) = origin.vec_to_local(vx, vy);
                    vec![px, py, vx, vy]
                })
                .collect();
            gt_dense.push(Tensor::from_rows(&dense_rows));
        }

        let map_features = record
            .lanes
            .iter()
            .map(|lane| {
                let pts = &lane.centerline;
                let rows: Vec<Vec<f64>> = (0..pts.len())
                    .map(|i| {
                        let (x, y) = origin.to_local(pts[i][0], pts[i][1]);
                        let j = if i + 1 < pts.len() { i + 1 } else { i };
                        let k = if i + 1 < pts.len() { i } else { i - 1 };
                        let (dx, dy) =
                            origin.vec_to_local(pts[j][0] - pts[k][0], pts[j][1] - pts[k][1]);
                        let norm = dx.hypot(dy).max(1e-9);
                        vec![x, y, dx / norm, dy / norm]
                    })
                    .collect();
                Tensor::from_rows(&rows)
            })
            .collect();

        let risk_features = record
            .risk
            .per_agent
            .iter()
            .map(|seq| {
                let rows: Vec<Vec<f64>> = seq[hist.clone()]
                    .iter()
                    .map(|t| vec![t.probability, t.cost, t.risk / RISK_MAX])
                    .collect();
                Tensor::from_rows(&rows)
            })
            .collect();

        let gt_future_rows: Vec<Vec<f64>> = target.states[fut.clone()]
            .iter()
            .map(|s| {
                let (x, y) = origin.to_local(s.x, s.y);
                vec![x, y]
            })
            .collect();
        let gt_vel_rows: Vec<Vec<f64>> = target.states[fut.clone()]
            .iter()
            .map(|s| {
                let (vx, vy) = s.velocity();
                let (vx, vy) = origin.vec_to_local(vx, vy);
                vec![vx, vy]
            })
            .collect();
        let gt_risk_rows: Vec<Vec<f64>> = record.risk.total[fut.clone()]
            .iter()
            .map(|t| vec![t.probability, t.cost, t.risk / RISK_MAX])
            .collect();
        let gt_max_risk = record.risk.total[fut]
            .iter()
            .map(|t| t.risk)
            .fold(0.0f64, f64::max);
        let gt_endpoint = {
            let row = gt_future_rows.last().unwrap();
            [row[0], row[1]]
        };

        Ok(Self {
            scene_id: record.scene_id.clone(),
            origin,
            agent_features,
            agent_valid,
            map_features,
            risk_features,
            gt_future: Tensor::from_rows(&gt_future_rows),
            gt_future_vel: Tensor::from_rows(&gt_vel_rows),
            gt_dense,
            gt_risk_seq: Tensor::from_rows(&gt_risk_rows),
            gt_endpoint,
            gt_max_risk,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agent_features.len()
    }

    pub fn n_others(&self) -> usize {
        self.agent_features.len() - 1
    }

    pub fn n_maps(&self) -> usize {
        self.map_features.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_round_trip() {
        let o = OriginPose { x: 3.0, y: -2.0, heading: 0.7 };
        let (lx, ly) = o.to_local(10.0, 5.0);
        let (wx, wy) = o.to_world(lx, ly);
        assert!((wx - 10.0).abs() < 1e-12 && (wy - 5.0).abs() < 1e-12);
        // The target itself sits at the local origin.
        assert_eq!(o.to_local(3.0, -2.0), (0.0, 0.0));
    }
}
