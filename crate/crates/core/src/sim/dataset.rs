//! Batch scene generation: derives one seed per attempt from the master
//! seed, runs episodes (optionally across threads with order-preserving
//! collection), writes scene files, and summarizes everything in a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::risk::{CostParams, DrfParams};
use crate::scene::{write_scene, SceneIoError, SceneRecord};
use crate::seed;
use crate::sim::episode::{run_episode, EpisodeMeta, SimError};
use crate::sim::road::RoadSet;
use crate::sim::HazardConfig;

pub const MANIFEST_SCHEMA: &str = "scrisk-manifest/1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestSceneEntry {
    pub file: String,
    pub scene_id: String,
    pub seed: u64,
    pub conflict_type: String,
    pub group: String,
    pub maneuver: String,
    pub trigger_id: u32,
    pub threshold: f64,
    pub reaction_delay: f64,
    pub collision_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscardEntry {
    pub attempt: u64,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub schema: String,
    pub master_seed: u64,
    pub episodes_requested: usize,
    pub attempts: u64,
    pub counts_by_conflict: BTreeMap<String, usize>,
    pub counts_by_group: BTreeMap<String, usize>,
    pub counts_by_maneuver: BTreeMap<String, usize>,
    pub discarded: Vec<DiscardEntry>,
    pub scenes: Vec<ManifestSceneEntry>,
}

/// Collision-time group label, closed upper bounds at 1 s / 2 s / 5 s.
pub fn group_label(collision_time: Option<f64>) -> &'static str {
    match collision_time {
        None => "non_collision",
        Some(t) if t <= 1.0 => "collision_in_1s",
        Some(t) if t <= 2.0 => "collision_in_2s",
        _ => "collision_in_5s",
    }
}

/// Generates exactly `n_episodes` scene files plus `manifest.json` under
/// `out_dir`. Attempts that fail (no trigger, anomalies) are skipped and
/// reported; their seeds are never reused. Worker threads only parallelize
/// independent episodes; results are committed in attempt order.
pub fn generate_dataset(
    config: &HazardConfig,
    roads: &RoadSet,
    drf: &DrfParams,
    cost: &CostParams,
    master_seed: u64,
    n_episodes: usize,
    out_dir: &Path,
    threads: usize,
) -> Result<DatasetManifest, SceneIoError> {
    fs::create_dir_all(out_dir)?;
    let threads = threads.max(1);
    let mut scenes: Vec<ManifestSceneEntry> = Vec::with_capacity(n_episodes);
    let mut discarded: Vec<DiscardEntry> = Vec::new();
    let mut attempt: u64 = 0;
    while scenes.len() < n_episodes {
        let wave: Vec<u64> = (0..threads as u64).map(|k| attempt + k).collect();
        let results: Vec<(u64, Result<(SceneRecord, EpisodeMeta), SimError>)> =
            if threads == 1 {
                wave.iter()
                    .map(|&a| {
                        let s = seed::derive(master_seed, a);
                        (a, run_episode(config, roads, drf, cost, s, &format!("ep{a:06}")))
                    })
                    .collect()
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = wave
                        .iter()
                        .map(|&a| {
                            scope.spawn(move || {
                                let s = seed::derive(master_seed, a);
                                (a, run_episode(config, roads, drf, cost, s, &format!("ep{a:06}")))
                            })
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("episode worker")).collect()
                })
            };
        for (a, result) in results {
            if scenes.len() >= n_episodes {
                break;
            }
            match result {
                Ok((record, meta)) => {
                    let file = format!("{}.json", record.scene_id);
                    write_scene(&out_dir.join(&file), &record)?;
                    scenes.push(ManifestSceneEntry {
                        file,
                        scene_id: record.scene_id.clone(),
                        seed: meta.seed,
                        conflict_type: meta.conflict.name().to_string(),
                        group: group_label(meta.collision_time).to_string(),
                        maneuver: meta.maneuver.name().to_string(),
                        trigger_id: meta.trigger_id,
                        threshold: crate::scene::round_sig(meta.threshold),
                        reaction_delay: crate::scene::round_sig(meta.reaction_delay),
                        collision_time: meta.collision_time,
                    });
                }
                Err(e) => {
                    discarded.push(DiscardEntry {
                        attempt: a,
                        seed: seed::derive(master_seed, a),
                        reason: e.to_string(),
                    });
                }
            }
            attempt = a + 1;
        }
    }
    let mut counts_by_conflict = BTreeMap::new();
    let mut counts_by_group = BTreeMap::new();
    let mut counts_by_maneuver = BTreeMap::new();
    for s in &scenes {
        *counts_by_conflict.entry(s.conflict_type.clone()).or_insert(0) += 1;
        *counts_by_group.entry(s.group.clone()).or_insert(0) += 1;
        *counts_by_maneuver.entry(s.maneuver.clone()).or_insert(0) += 1;
    }
    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        master_seed,
        episodes_requested: n_episodes,
        attempts: attempt,
        counts_by_conflict,
        counts_by_group,
        counts_by_maneuver,
        discarded,
        scenes,
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), SceneIoError> {
    let mut file = fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(manifest)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, SceneIoError> {
    let text = fs::read_to_string(path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(SceneIoError::Schema {
            expected: MANIFEST_SCHEMA.to_string(),
            found: manifest.schema,
        });
    }
    Ok(manifest)
}

/// Scene files of a dataset directory in manifest order.
pub fn scene_paths(dataset_dir: &Path) -> Result<Vec<std::path::PathBuf>, SceneIoError> {
    let manifest = read_manifest(&dataset_dir.join("manifest.json"))?;
    Ok(manifest.scenes.iter().map(|s| dataset_dir.join(&s.file)).collect())
}
