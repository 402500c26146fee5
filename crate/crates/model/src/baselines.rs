//! Constant-velocity and constant-acceleration baseline predictors wrapped
//! as single-mode prediction sets. Their risk sequences come from the risk
//! field evaluated along the predicted trajectory against the other agents'
//! ground-truth futures.

use scrisk_core::kinematics::{
    predict_constant_acceleration, predict_constant_velocity, Trajectory,
};
use scrisk_core::risk::{pairwise_risk, CostParams, DrfParams, RiskTriple, RISK_MAX};
use scrisk_core::scene::SceneRecord;
use scrisk_core::FRAME_HZ;

use crate::prediction::{PredictionMode, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    ConstantVelocity,
    ConstantAcceleration,
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::ConstantVelocity => "cv",
            Baseline::ConstantAcceleration => "ca",
        }
    }
}

/// Risk triple sequence of a predicted target trajectory against the other
/// agents' recorded futures, summed per frame with the 999 cap.
pub fn risk_along_with(
    pred: &Trajectory,
    scene: &SceneRecord,
    drf: &DrfParams,
    cost: &CostParams,
) -> Vec<[f64; 3]> {
    let h = scene.hazard_frame;
    let others = scene.others();
    pred.states
        .iter()
        .enumerate()
        .map(|(k, state)| {
            let mut sum = RiskTriple::ZERO;
            for other in &others {
                let triple = pairwise_risk(state, &other.states[h + 1 + k], drf, cost);
                sum.probability += triple.probability;
                sum.cost += triple.cost;
                sum.risk += triple.risk;
            }
            [sum.probability, sum.cost, sum.risk.min(RISK_MAX)]
        })
        .collect()
}

/// Single-mode baseline prediction over the scene's future window.
pub fn baseline_prediction(
    scene: &SceneRecord,
    kind: Baseline,
    t_f: usize,
    drf: &DrfParams,
    cost: &CostParams,
) -> PredictionSet {
    let target = scene.target();
    let h = scene.hazard_frame;
    let history = Trajectory::new(
        -(h as f64) / scene.frequency_hz,
        scene.frequency_hz,
        target.states[..=h].to_vec(),
    );
    let pred = match kind {
        Baseline::ConstantVelocity => predict_constant_velocity(&history, t_f),
        Baseline::ConstantAcceleration => predict_constant_acceleration(&history, t_f),
    }
    .expect("recorded history is long enough for the baselines");
    let trajectory: Vec<[f64; 5]> = pred.states.iter().map(|s| [s.x, s.y, 0.1, 0.1, 0.0]).collect();
    let velocity: Vec<[f64; 2]> = pred
        .states
        .iter()
        .map(|s| {
            let (vx, vy) = s.velocity();
            [vx, vy]
        })
        .collect();
    let risk = risk_along_with(&pred, scene, drf, cost);
    let origin = &target.states[h];
    PredictionSet {
        scene_id: scene.scene_id.clone(),
        origin: [origin.x, origin.y, origin.heading],
        frequency_hz: FRAME_HZ,
        modes: vec![PredictionMode { trajectory, velocity, risk, probability: 1.0 }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cv_baseline_extends_straight_history() {
        let (record, _) = scrisk_core::sim::run_episode(
            &scrisk_core::sim::HazardConfig::default(),
            &scrisk_core::sim::RoadSet::standard(),
            &DrfParams::default(),
            &CostParams::default(),
            7,
            "ep-bl",
        )
        .unwrap();
        let p = baseline_prediction(
            &record,
            Baseline::ConstantVelocity,
            100,
            &DrfParams::default(),
            &CostParams::default(),
        );
        assert_eq!(p.modes.len(), 1);
        assert_eq!(p.modes[0].trajectory.len(), 100);
        assert_eq!(p.modes[0].probability, 1.0);
        // Constant displacement per frame.
        let t = &p.modes[0].trajectory;
        let d1 = (t[1][0] - t[0][0]).hypot(t[1][1] - t[0][1]);
        let d2 = (t[51][0] - t[50][0]).hypot(t[51][1] - t[50][1]);
        assert!((d1 - d2).abs() < 1e-9);
    }
}
