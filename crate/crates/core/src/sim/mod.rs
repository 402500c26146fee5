//! Deterministic 2D multi-lane traffic simulation that manufactures labeled
//! safety-critical scenes: background traffic under a car-following law, a
//! hazard-triggering vehicle scripted to create one of three conflict types,
//! and a scripted ego avoidance response with human-like reaction delay.

mod dataset;
mod episode;
mod road;
mod world;

pub use dataset::{
    generate_dataset, group_label, read_manifest, scene_paths, write_manifest, DatasetManifest,
    DiscardEntry, ManifestSceneEntry,
};
pub use episode::{run_episode, select_hazard_trigger, EpisodeMeta, SimError};
pub use road::{Corridor, CorridorGeometry, RoadNetwork, RoadSet};
pub use world::{idm_accel, IdmParams, Role, Vehicle, World};

use serde::{Deserialize, Serialize};

/// The three vehicle-to-vehicle conflict classes the generator produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictType {
    CutIn,
    Merging,
    RearEnd,
}

impl ConflictType {
    pub const ALL: [ConflictType; 3] = [ConflictType::CutIn, ConflictType::Merging, ConflictType::RearEnd];

    pub fn name(&self) -> &'static str {
        match self {
            ConflictType::CutIn => "cut_in",
            ConflictType::Merging => "merging",
            ConflictType::RearEnd => "rear_end",
        }
    }
}

/// Ego avoidance maneuver classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    BrakeThenSteer,
    SteerThenBrake,
    SteerOnly,
    BrakeOnly,
}

impl Maneuver {
    pub const ALL: [Maneuver; 4] =
        [Maneuver::BrakeThenSteer, Maneuver::SteerThenBrake, Maneuver::SteerOnly, Maneuver::BrakeOnly];

    pub fn name(&self) -> &'static str {
        match self {
            Maneuver::BrakeThenSteer => "brake_then_steer",
            Maneuver::SteerThenBrake => "steer_then_brake",
            Maneuver::SteerOnly => "steer_only",
            Maneuver::BrakeOnly => "brake_only",
        }
    }

    pub fn brakes(&self) -> bool {
        !matches!(self, Maneuver::SteerOnly)
    }

    pub fn steers(&self) -> bool {
        !matches!(self, Maneuver::BrakeOnly)
    }
}

/// A Gaussian threshold distribution, optionally clipped from below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: f64,
    pub std: f64,
    #[serde(default)]
    pub min: Option<f64>,
}

impl GaussianSpec {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std, min: None }
    }

    pub fn with_min(mean: f64, std: f64, min: f64) -> Self {
        Self { mean, std, min: Some(min) }
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        use rand_distr::Distribution;
        let normal = rand_distr::Normal::new(self.mean, self.std).expect("std >= 0");
        let v = normal.sample(rng);
        match self.min {
            Some(m) => v.max(m),
            None => v,
        }
    }
}

/// Mixture weights over maneuver classes; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManeuverMix {
    pub brake_then_steer: f64,
    pub steer_then_brake: f64,
    pub steer_only: f64,
    pub brake_only: f64,
}

impl Default for ManeuverMix {
    fn default() -> Self {
        Self { brake_then_steer: 0.41, steer_then_brake: 0.20, steer_only: 0.34, brake_only: 0.05 }
    }
}

impl ManeuverMix {
    fn weights(&self) -> [f64; 4] {
        [self.brake_then_steer, self.steer_then_brake, self.steer_only, self.brake_only]
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Maneuver {
        sample_categorical(rng, &self.weights(), &Maneuver::ALL)
    }
}

/// Mixture weights over conflict types; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConflictMix {
    pub cut_in: f64,
    pub merging: f64,
    pub rear_end: f64,
}

impl Default for ConflictMix {
    fn default() -> Self {
        Self { cut_in: 0.60, merging: 0.18, rear_end: 0.22 }
    }
}

impl ConflictMix {
    fn weights(&self) -> [f64; 3] {
        [self.cut_in, self.merging, self.rear_end]
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> ConflictType {
        sample_categorical(rng, &self.weights(), &ConflictType::ALL)
    }
}

fn sample_categorical<R: rand::Rng, T: Copy, const N: usize>(
    rng: &mut R,
    weights: &[f64; N],
    values: &[T; N],
) -> T {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (w, v) in weights.iter().zip(values.iter()) {
        acc += w;
        if u < acc {
            return *v;
        }
    }
    values[N - 1]
}

/// Hazard-generation configuration: threshold distributions, the ego
/// reaction-delay distribution, and the maneuver/conflict mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HazardConfig {
    /// Trigger braking threshold, m/s^2.
    pub decel_threshold: GaussianSpec,
    /// Trigger lateral offset rate threshold, m/s.
    pub lane_offset_rate_threshold: GaussianSpec,
    /// Ego reaction delay, seconds, clipped from below.
    pub reaction_delay: GaussianSpec,
    pub maneuver_mix: ManeuverMix,
    pub conflict_mix: ConflictMix,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self {
            decel_threshold: GaussianSpec::new(6.0, 1.0),
            lane_offset_rate_threshold: GaussianSpec::new(1.0, 0.2),
            reaction_delay: GaussianSpec::with_min(0.8, 0.25, 0.3),
            maneuver_mix: ManeuverMix::default(),
            conflict_mix: ConflictMix::default(),
        }
    }
}

impl HazardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let sum_m: f64 = self.maneuver_mix.weights().iter().sum();
        let sum_c: f64 = self.conflict_mix.weights().iter().sum();
        if (sum_m - 1.0).abs() > 1e-9 {
            return Err(format!("hazard.maneuver_mix must sum to 1, got {sum_m}"));
        }
        if (sum_c - 1.0).abs() > 1e-9 {
            return Err(format!("hazard.conflict_mix must sum to 1, got {sum_c}"));
        }
        if self.maneuver_mix.weights().iter().chain(self.conflict_mix.weights().iter()).any(|w| *w < 0.0) {
            return Err("hazard mixture weights must be non-negative".into());
        }
        for (name, g) in [
            ("decel_threshold", &self.decel_threshold),
            ("lane_offset_rate_threshold", &self.lane_offset_rate_threshold),
            ("reaction_delay", &self.reaction_delay),
        ] {
            if g.std < 0.0 || !g.mean.is_finite() {
                return Err(format!("hazard.{name}: std must be >= 0 and mean finite"));
            }
            if let Some(m) = g.min {
                if m < 0.0 {
                    return Err(format!("hazard.{name}: clip minimum must be >= 0"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_config_validates() {
        assert!(HazardConfig::default().validate().is_ok());
    }

    #[test]
    fn bad_mixture_rejected() {
        let mut cfg = HazardConfig::default();
        cfg.conflict_mix.cut_in = 0.9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn conflict_sampling_tracks_mix() {
        let mix = ConflictMix::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            match mix.sample(&mut rng) {
                ConflictType::CutIn => counts[0] += 1,
                ConflictType::Merging => counts[1] += 1,
                ConflictType::RearEnd => counts[2] += 1,
            }
        }
        let p = [0.60, 0.18, 0.22];
        for (c, target) in counts.iter().zip(p.iter()) {
            let freq = *c as f64 / n as f64;
            assert!((freq - target).abs() < 0.02, "freq {freq} vs {target}");
        }
    }

    #[test]
    fn gaussian_clipping_applies() {
        let spec = GaussianSpec::with_min(0.2, 1.0, 0.3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            assert!(spec.sample(&mut rng) >= 0.3);
        }
    }
}
