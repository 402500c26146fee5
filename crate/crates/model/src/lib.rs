//! Risk-aware trajectory prediction: the scene encoder with risk tokens, the
//! decoder driven by endpoint-risk intention query pairs, the coupled
//! hard-assignment losses, the training loop, kinematic baselines, and the
//! evaluation metrics tailored to safety-critical scenes.

pub mod baselines;
pub mod config;
pub mod features;
pub mod intentions;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod prediction;
pub mod report;
pub mod train;

pub use config::ModelConfig;
pub use features::SceneSample;
pub use intentions::IntentionSet;
pub use model::ErqModel;
pub use prediction::{PredictionMode, PredictionSet};
