//! The scene file schema (`scrisk-scene/1`) and its reader/writer. Scene
//! files are the interchange format between the generator, the risk tool,
//! training, evaluation, and plotting.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{AgentState, CollisionInfo, Trajectory};
use crate::risk::{RiskTimeline, RiskTriple};
use crate::sim::ConflictType;

pub const SCENE_SCHEMA: &str = "scrisk-scene/1";

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("inconsistent scene: {0}")]
    Inconsistent(String),
}

/// One agent's full track over the scene window.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: u32,
    pub extent_length: f64,
    pub extent_width: f64,
    pub mass: f64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    /// Trajectory with time 0 at the hazard frame.
    pub fn trajectory(&self, hazard_frame: usize, frequency: f64) -> Trajectory {
        Trajectory::new(-(hazard_frame as f64) / frequency, frequency, self.states.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapLane {
    pub id: u32,
    pub centerline: Vec<[f64; 2]>,
}

/// One labeled safety-critical scene: 201 frames at 20 Hz with the hazard at
/// index 100, agent tracks, a map excerpt, the collision label, and the
/// precomputed risk timeline toward the target.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub conflict_type: ConflictType,
    pub frequency_hz: f64,
    pub hazard_frame: usize,
    pub target_agent_id: u32,
    pub collision: Option<CollisionInfo>,
    pub agents: Vec<AgentTrack>,
    pub lanes: Vec<MapLane>,
    pub risk: RiskTimeline,
}

impl SceneRecord {
    pub fn n_frames(&self) -> usize {
        self.agents.first().map_or(0, |a| a.states.len())
    }

    pub fn target(&self) -> &AgentTrack {
        self.agents
            .iter()
            .find(|a| a.id == self.target_agent_id)
            .expect("target agent present")
    }

    /// Non-target agents in file order (the order of `risk.per_agent`).
    pub fn others(&self) -> Vec<&AgentTrack> {
        self.agents.iter().filter(|a| a.id != self.target_agent_id).collect()
    }

    /// Ground-truth collision time in seconds after the hazard frame.
    pub fn collision_time(&self) -> Option<f64> {
        self.collision.map(|c| c.time)
    }
}

/// Rounds to 9 significant decimal digits, the precision scene files carry.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("round-trip of formatted float")
}

// ---------------------------------------------------------------------------
// Serialized form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneJson {
    schema: String,
    scene_id: String,
    conflict_type: ConflictType,
    frequency_hz: f64,
    hazard_frame: usize,
    target_agent_id: u32,
    collision: Option<CollisionJson>,
    agents: Vec<AgentJson>,
    map: MapJson,
    risk: RiskJson,
}

#[derive(Serialize, Deserialize)]
struct CollisionJson {
    frame: usize,
    agents: (u32, u32),
    relative_speed: f64,
}

#[derive(Serialize, Deserialize)]
struct AgentJson {
    id: u32,
    extent_length: f64,
    extent_width: f64,
    mass: f64,
    states: Vec<AgentState>,
}

#[derive(Serialize, Deserialize)]
struct MapJson {
    lanes: Vec<LaneJson>,
}

#[derive(Serialize, Deserialize)]
struct LaneJson {
    id: u32,
    centerline: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct RiskJson {
    per_agent: Vec<Vec<[f64; 3]>>,
    total: Vec<[f64; 3]>,
}

fn triple_to_array(t: &RiskTriple) -> [f64; 3] {
    [t.probability, t.cost, t.risk]
}

fn array_to_triple(a: [f64; 3]) -> RiskTriple {
    RiskTriple { probability: a[0], cost: a[1], risk: a[2] }
}

pub fn scene_to_json_string(record: &SceneRecord) -> Result<String, SceneIoError> {
    let json = SceneJson {
        schema: SCENE_SCHEMA.to_string(),
        scene_id: record.scene_id.clone(),
        conflict_type: record.conflict_type,
        frequency_hz: record.frequency_hz,
        hazard_frame: record.hazard_frame,
        target_agent_id: record.target_agent_id,
        collision: record.collision.map(|c| CollisionJson {
            frame: c.frame,
            agents: c.agent_pair,
            relative_speed: c.relative_speed,
        }),
        agents: record
            .agents
            .iter()
            .map(|a| AgentJson {
                id: a.id,
                extent_length: a.extent_length,
                extent_width: a.extent_width,
                mass: a.mass,
                states: a.states.clone(),
            })
            .collect(),
        map: MapJson {
            lanes: record
                .lanes
                .iter()
                .map(|l| LaneJson { id: l.id, centerline: l.centerline.clone() })
                .collect(),
        },
        risk: RiskJson {
            per_agent: record
                .risk
                .per_agent
                .iter()
                .map(|seq| seq.iter().map(triple_to_array).collect())
                .collect(),
            total: record.risk.total.iter().map(triple_to_array).collect(),
        },
    };
    Ok(serde_json::to_string(&json)?)
}

pub fn write_scene(path: &Path, record: &SceneRecord) -> Result<(), SceneIoError> {
    let mut file = fs::File::create(path)?;
    file.write_all(scene_to_json_string(record)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<SceneRecord, SceneIoError> {
    let text = fs::read_to_string(path)?;
    scene_from_json_str(&text)
}

pub fn scene_from_json_str(text: &str) -> Result<SceneRecord, SceneIoError> {
    let json: SceneJson = serde_json::from_str(text)?;
    if json.schema != SCENE_SCHEMA {
        return Err(SceneIoError::Schema {
            expected: SCENE_SCHEMA.to_string(),
            found: json.schema,
        });
    }
    let n_frames = json.agents.first().map_or(0, |a| a.states.len());
    if json.agents.iter().any(|a| a.states.len() != n_frames) {
        return Err(SceneIoError::Inconsistent("agent tracks differ in length".into()));
    }
    if json.hazard_frame >= n_frames {
        return Err(SceneIoError::Inconsistent("hazard_frame outside window".into()));
    }
    if json.risk.total.len() != n_frames
        || json.risk.per_agent.iter().any(|seq| seq.len() != n_frames)
    {
        return Err(SceneIoError::Inconsistent("risk timeline length mismatch".into()));
    }
    if json.risk.per_agent.len() + 1 != json.agents.len() {
        return Err(SceneIoError::Inconsistent(
            "risk.per_agent must cover every non-target agent".into(),
        ));
    }
    let agents: Vec<AgentTrack> = json
        .agents
        .into_iter()
        .map(|a| AgentTrack {
            id: a.id,
            extent_length: a.extent_length,
            extent_width: a.extent_width,
            mass: a.mass,
            states: a
                .states
                .into_iter()
                .map(|s| AgentState {
                    extent_length: a.extent_length,
                    extent_width: a.extent_width,
                    mass: a.mass,
                    ..s
                })
                .collect(),
        })
        .collect();
    if !agents.iter().any(|a| a.id == json.target_agent_id) {
        return Err(SceneIoError::Inconsistent("target_agent_id not among agents".into()));
    }
    let collision = json.collision.map(|c| CollisionInfo {
        frame: c.frame,
        time: (c.frame as f64 - json.hazard_frame as f64) / json.frequency_hz,
        agent_pair: c.agents,
        relative_speed: c.relative_speed,
    });
    Ok(SceneRecord {
        scene_id: json.scene_id,
        conflict_type: json.conflict_type,
        frequency_hz: json.frequency_hz,
        hazard_frame: json.hazard_frame,
        target_agent_id: json.target_agent_id,
        collision,
        agents,
        lanes: json
            .map
            .lanes
            .into_iter()
            .map(|l| MapLane { id: l.id, centerline: l.centerline })
            .collect(),
        risk: RiskTimeline {
            per_agent: json
                .risk
                .per_agent
                .into_iter()
                .map(|seq| seq.into_iter().map(array_to_triple).collect())
                .collect(),
            total: json.risk.total.into_iter().map(array_to_triple).collect(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::state;

    #[test]
    fn round_sig_examples() {
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(round_sig(31.622776601683793), 31.6227766);
        assert_eq!(round_sig(-1.23456789012345), -1.23456789);
        assert_eq!(round_sig(0.1), 0.1);
        assert_eq!(round_sig(123456789.123), 123456789.0);
    }

    fn tiny_record() -> SceneRecord {
        let states: Vec<AgentState> =
            (0..5).map(|k| state(round_sig(k as f64 * 0.731), 0.0, 0.0, 10.0)).collect();
        let other_states: Vec<AgentState> =
            (0..5).map(|k| state(round_sig(12.0 + k as f64 * 0.5), 0.25, 0.0, 8.0)).collect();
        let drf = crate::risk::DrfParams::default();
        let cost = crate::risk::CostParams::default();
        let t_track = Trajectory::new(0.0, 20.0, states.clone());
        let o_track = Trajectory::new(0.0, 20.0, other_states.clone());
        let mut risk = crate::risk::scene_risk_history(&t_track, &[&o_track], &drf, &cost).unwrap();
        for seq in risk.per_agent.iter_mut().chain(std::iter::once(&mut risk.total)) {
            for t in seq.iter_mut() {
                t.probability = round_sig(t.probability);
                t.cost = round_sig(t.cost);
                t.risk = round_sig(t.risk);
            }
        }
        SceneRecord {
            scene_id: "ep000000".into(),
            conflict_type: ConflictType::CutIn,
            frequency_hz: 20.0,
            hazard_frame: 2,
            target_agent_id: 0,
            collision: None,
            agents: vec![
                AgentTrack { id: 0, extent_length: 4.5, extent_width: 1.9, mass: 1500.0, states },
                AgentTrack {
                    id: 1,
                    extent_length: 4.5,
                    extent_width: 1.9,
                    mass: 1500.0,
                    states: other_states,
                },
            ],
            lanes: vec![MapLane {
                id: 0,
                centerline: (0..20).map(|k| [k as f64 * 5.0, 0.0]).collect(),
            }],
            risk,
        }
    }

    #[test]
    fn scene_round_trips_with_equality() {
        let record = tiny_record();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        write_scene(&path, &record).unwrap();
        let back = read_scene(&path).unwrap();
        assert_eq!(record, back);
        // Re-writing the parsed record reproduces the file byte for byte.
        let again = dir.path().join("scene2.json");
        write_scene(&again, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn reader_rejects_wrong_schema() {
        let record = tiny_record();
        let text = scene_to_json_string(&record).unwrap().replace("scrisk-scene/1", "other/9");
        assert!(matches!(scene_from_json_str(&text), Err(SceneIoError::Schema { .. })));
    }
}
