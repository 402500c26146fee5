//! Multimodal prediction output: K modes of Gaussian trajectories with
//! velocities, risk sequences, and probabilities, plus the `scrisk-pred/1`
//! file format and the endpoint-suppression mode selection.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use scrisk_core::kinematics::{AgentState, Trajectory};
use scrisk_core::FRAME_HZ;

use crate::features::OriginPose;

pub const PRED_SCHEMA: &str = "scrisk-pred/1";

#[derive(Debug, Error)]
pub enum PredictionIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: expected {PRED_SCHEMA}, found {0}")]
    Schema(String),
}

/// One predicted future: world-frame Gaussian means with target-frame
/// uncertainty parameters, world-frame velocities, and the predicted risk
/// triple sequence (risk channel on the 0..999 scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMode {
    /// Per future frame: (mu_x, mu_y, sigma_x, sigma_y, rho).
    pub trajectory: Vec<[f64; 5]>,
    /// Per future frame: (vx, vy), world frame.
    pub velocity: Vec<[f64; 2]>,
    /// Per future frame: (probability, cost, risk).
    pub risk: Vec<[f64; 3]>,
    pub probability: f64,
}

impl PredictionMode {
    pub fn endpoint(&self) -> (f64, f64) {
        let last = self.trajectory.last().expect("non-empty trajectory");
        (last[0], last[1])
    }

    pub fn max_risk(&self) -> f64 {
        self.risk.iter().map(|r| r[2]).fold(0.0, f64::max)
    }

    /// A kinematic trajectory over the future window: positions from the
    /// Gaussian means, headings from consecutive points, speeds from the
    /// velocity head. Starts one frame after the prediction origin.
    pub fn as_trajectory(&self, extent_length: f64, extent_width: f64, mass: f64) -> Trajectory {
        let n = self.trajectory.len();
        let mut states = Vec::with_capacity(n);
        let mut last_heading = {
            // Initial heading from the first displacement, if any.
            let (x0, y0) = (self.trajectory[0][0], self.trajectory[0][1]);
            if n > 1 {
                let (x1, y1) = (self.trajectory[1][0], self.trajectory[1][1]);
                if (x1 - x0).hypot(y1 - y0) > 1e-6 {
                    (y1 - y0).atan2(x1 - x0)
                } else {
                    0.0
                }
            } else {
                0.0
            }
        };
        for k in 0..n {
            let (x, y) = (self.trajectory[k][0], self.trajectory[k][1]);
            if k + 1 < n {
                let (nx, ny) = (self.trajectory[k + 1][0], self.trajectory[k + 1][1]);
                if (nx - x).hypot(ny - y) > 1e-6 {
                    last_heading = (ny - y).atan2(nx - x);
                }
            }
            let speed = self.velocity[k][0].hypot(self.velocity[k][1]);
            states.push(AgentState {
                x,
                y,
                heading: last_heading,
                speed,
                yaw_rate: 0.0,
                accel: 0.0,
                extent_length,
                extent_width,
                mass,
            });
        }
        Trajectory::new(1.0 / FRAME_HZ, FRAME_HZ, states)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub scene_id: String,
    /// World pose of the target at the prediction origin.
    pub origin: [f64; 3],
    pub frequency_hz: f64,
    pub modes: Vec<PredictionMode>,
}

impl PredictionSet {
    pub fn origin_pose(&self) -> OriginPose {
        OriginPose { x: self.origin[0], y: self.origin[1], heading: self.origin[2] }
    }

    /// Index of the highest-probability mode (lowest index on ties).
    pub fn top_mode(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.modes.iter().enumerate() {
            if m.probability > self.modes[best].probability {
                best = i;
            }
        }
        best
    }

    /// Restricts to the single top-probability mode with probability 1.
    pub fn to_top1(&self) -> PredictionSet {
        let top = self.top_mode();
        let mut mode = self.modes[top].clone();
        mode.probability = 1.0;
        PredictionSet {
            scene_id: self.scene_id.clone(),
            origin: self.origin,
            frequency_hz: self.frequency_hz,
            modes: vec![mode],
        }
    }
}

/// Greedy probability-ordered selection with endpoint suppression: a mode is
/// kept only if its endpoint is farther than `radius` from every kept
/// endpoint; if fewer than k survive, remaining slots backfill by
/// probability order.
pub fn select_top_k_modes(modes: &[PredictionMode], k: usize, radius: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| {
        modes[b].probability.partial_cmp(&modes[a].probability).unwrap().then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    for &i in &order {
        if kept.len() >= k {
            break;
        }
        let (xi, yi) = modes[i].endpoint();
        let clear = kept.iter().all(|&j| {
            let (xj, yj) = modes[j].endpoint();
            (xi - xj).hypot(yi - yj) > radius
        });
        if clear {
            kept.push(i);
        }
    }
    for &i in &order {
        if kept.len() >= k {
            break;
        }
        if !kept.contains(&i) {
            kept.push(i);
        }
    }
    kept
}

#[derive(Serialize, Deserialize)]
struct PredJson {
    schema: String,
    scene_id: String,
    origin: [f64; 3],
    frequency_hz: f64,
    modes: Vec<PredictionMode>,
}

pub fn write_prediction(path: &Path, pred: &PredictionSet) -> Result<(), PredictionIoError> {
    let json = PredJson {
        schema: PRED_SCHEMA.to_string(),
        scene_id: pred.scene_id.clone(),
        origin: pred.origin,
        frequency_hz: pred.frequency_hz,
        modes: pred.modes.clone(),
    };
    let mut file = fs::File::create(path)?;
    file.write_all(serde_json::to_string(&json)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_prediction(path: &Path) -> Result<PredictionSet, PredictionIoError> {
    let json: PredJson = serde_json::from_str(&fs::read_to_string(path)?)?;
    if json.schema != PRED_SCHEMA {
        return Err(PredictionIoError::Schema(json.schema));
    }
    Ok(PredictionSet {
        scene_id: json.scene_id,
        origin: json.origin,
        frequency_hz: json.frequency_hz,
        modes: json.modes,
    })
}
