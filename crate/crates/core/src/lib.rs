//! Core library for the safety-critical trajectory-risk workbench: vehicle
//! kinematics, the driver-centered risk field, the deterministic scenario
//! simulator, and the scene file schema shared by every tool in the suite.

pub mod kinematics;
pub mod risk;
pub mod scene;
pub mod seed;
pub mod sim;

pub use kinematics::{AgentState, ArcFrame, CollisionInfo, KinematicsError, Trajectory};
pub use risk::{CostParams, DrfParams, RiskTimeline, RiskTriple};
pub use scene::SceneRecord;

/// Recording frequency used throughout the workbench.
pub const FRAME_HZ: f64 = 20.0;
/// Time step at [`FRAME_HZ`].
pub const FRAME_DT: f64 = 1.0 / FRAME_HZ;
