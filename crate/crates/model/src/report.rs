//! Dataset-level metric aggregation and the `scrisk-report/1` JSON plus the
//! flat CSV rendering. Cells that no scene feeds (for example velocity MSE
//! on a dataset without collisions) are null.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use scrisk_core::scene::SceneRecord;

use crate::metrics::{
    classical_metrics, gt_future_positions, safety_metrics, EvalGroup, MetricsConfig,
};
use crate::prediction::PredictionSet;

pub const REPORT_SCHEMA: &str = "scrisk-report/1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: expected {REPORT_SCHEMA}, found {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalCell {
    pub group: String,
    pub count: usize,
    pub min_ade_k: Option<f64>,
    pub min_fde_k: Option<f64>,
    pub mr_k: Option<f64>,
    pub brier_min_fde_k: Option<f64>,
    pub min_ade_k1: Option<f64>,
    pub min_fde_k1: Option<f64>,
    pub mr_k1: Option<f64>,
    pub brier_min_fde_k1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailoredCell {
    pub n_collision_scenes: usize,
    pub n_non_collision_scenes: usize,
    pub mse_risk_k1: Option<f64>,
    pub mse_risk_k: Option<f64>,
    pub mr_risk_k: Option<f64>,
    pub mse_velo_k1: Option<f64>,
    pub mse_velo_k: Option<f64>,
    pub mr_velo_k: Option<f64>,
    pub mse_time_k1: Option<f64>,
    pub mse_time_k: Option<f64>,
    pub mr_time_k: Option<f64>,
    pub mr_coll_k1: Option<f64>,
    pub mr_coll_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionProbabilityCell {
    pub overall: Option<f64>,
    pub collision: Option<f64>,
    pub non_collision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub k: usize,
    pub classical: Vec<ClassicalCell>,
    pub tailored: TailoredCell,
    pub collision_probability: CollisionProbabilityCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub n_scenes: usize,
    pub group_counts: BTreeMap<String, usize>,
    pub methods: BTreeMap<String, MethodReport>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    if total == 0 {
        None
    } else {
        Some(hits as f64 / total as f64)
    }
}

/// Aggregates one method's predictions over a scene set. `preds[i]` must
/// correspond to `scenes[i]` and carry the full mode set for the method's k.
pub fn evaluate_method(
    scenes: &[SceneRecord],
    preds: &[PredictionSet],
    cfg: &MetricsConfig,
) -> MethodReport {
    assert_eq!(scenes.len(), preds.len());
    let k = preds.first().map_or(0, |p| p.modes.len());
    type Entry = (crate::metrics::ClassicalMetrics, crate::metrics::ClassicalMetrics);
    let mut per_group: BTreeMap<EvalGroup, Vec<Entry>> = BTreeMap::new();
    let mut velo_k = Vec::new();
    let mut velo_k1 = Vec::new();
    let mut time_k = Vec::new();
    let mut time_k1 = Vec::new();
    let mut risk_k = Vec::new();
    let mut risk_k1 = Vec::new();
    let mut miss_velo_k = 0usize;
    let mut miss_time_k = 0usize;
    let mut miss_risk_k = 0usize;
    let mut miss_coll_k = 0usize;
    let mut miss_coll_k1 = 0usize;
    let mut n_coll = 0usize;
    let mut n_non = 0usize;
    let mut cp_all = Vec::new();
    let mut cp_coll = Vec::new();
    let mut cp_non = Vec::new();

    for (scene, pred) in scenes.iter().zip(preds) {
        let t_f = pred.modes[0].trajectory.len();
        let gt = gt_future_positions(scene, t_f);
        let full = classical_metrics(pred, &gt, cfg);
        let top_set = pred.to_top1();
        let top = classical_metrics(&top_set, &gt, cfg);
        let safety = safety_metrics(pred, scene, cfg);
        per_group.entry(safety.group).or_default().push((full, top));

        cp_all.push(safety.collision_fraction);
        if scene.collision.is_some() {
            n_coll += 1;
            cp_coll.push(safety.collision_fraction);
            if !safety.coll_hit_any {
                miss_coll_k += 1;
            }
            if !safety.coll_hit_top {
                miss_coll_k1 += 1;
            }
            match safety.velo_err_k {
                Some(e) => {
                    velo_k.push(e * e);
                    if e > cfg.velo_miss_threshold {
                        miss_velo_k += 1;
                    }
                }
                None => miss_velo_k += 1,
            }
            match safety.time_err_k {
                Some(e) => {
                    time_k.push(e * e);
                    if e > cfg.time_miss_threshold {
                        miss_time_k += 1;
                    }
                }
                None => miss_time_k += 1,
            }
            if let Some(e) = safety.velo_err_top {
                velo_k1.push(e * e);
            }
            if let Some(e) = safety.time_err_top {
                time_k1.push(e * e);
            }
        } else {
            n_non += 1;
            cp_non.push(safety.collision_fraction);
            if let Some(e) = safety.risk_err_k {
                risk_k.push(e * e);
                if e > cfg.risk_miss_threshold {
                    miss_risk_k += 1;
                }
            }
            if let Some(e) = safety.risk_err_top {
                risk_k1.push(e * e);
            }
        }
    }

    let classical = EvalGroup::ALL
        .iter()
        .map(|group| {
            let entries = per_group.get(group).cloned().unwrap_or_default();
            let n = entries.len();
            ClassicalCell {
                group: group.name().to_string(),
                count: n,
                min_ade_k: mean(&entries.iter().map(|e| e.0.min_ade).collect::<Vec<_>>()),
                min_fde_k: mean(&entries.iter().map(|e| e.0.min_fde).collect::<Vec<_>>()),
                mr_k: rate(entries.iter().filter(|e| e.0.mr_flag).count(), n),
                brier_min_fde_k: mean(&entries.iter().map(|e| e.0.brier_min_fde).collect::<Vec<_>>()),
                min_ade_k1: mean(&entries.iter().map(|e| e.1.min_ade).collect::<Vec<_>>()),
                min_fde_k1: mean(&entries.iter().map(|e| e.1.min_fde).collect::<Vec<_>>()),
                mr_k1: rate(entries.iter().filter(|e| e.1.mr_flag).count(), n),
                brier_min_fde_k1: mean(&entries.iter().map(|e| e.1.brier_min_fde).collect::<Vec<_>>()),
            }
        })
        .collect();

    MethodReport {
        k,
        classical,
        tailored: TailoredCell {
            n_collision_scenes: n_coll,
            n_non_collision_scenes: n_non,
            mse_risk_k1: mean(&risk_k1),
            mse_risk_k: mean(&risk_k),
            mr_risk_k: rate(miss_risk_k, n_non),
            mse_velo_k1: mean(&velo_k1),
            mse_velo_k: mean(&velo_k),
            mr_velo_k: rate(miss_velo_k, n_coll),
            mse_time_k1: mean(&time_k1),
            mse_time_k: mean(&time_k),
            mr_time_k: rate(miss_time_k, n_coll),
            mr_coll_k1: rate(miss_coll_k1, n_coll),
            mr_coll_k: rate(miss_coll_k, n_coll),
        },
        collision_probability: CollisionProbabilityCell {
            overall: mean(&cp_all),
            collision: mean(&cp_coll),
            non_collision: mean(&cp_non),
        },
    }
}

pub fn build_report(
    scenes: &[SceneRecord],
    methods: Vec<(String, MethodReport)>,
    cfg: &MetricsConfig,
) -> MetricsReport {
    let mut group_counts = BTreeMap::new();
    for scene in scenes {
        let g = crate::metrics::group_by_collision_time(scene, cfg);
        *group_counts.entry(g.name().to_string()).or_insert(0) += 1;
    }
    MetricsReport {
        schema: REPORT_SCHEMA.to_string(),
        n_scenes: scenes.len(),
        group_counts,
        methods: methods.into_iter().collect(),
    }
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<(), ReportError> {
    let mut file = fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(report)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport, ReportError> {
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(path)?)?;
    if report.schema != REPORT_SCHEMA {
        return Err(ReportError::Schema(report.schema));
    }
    Ok(report)
}

/// One row per (method, group, metric, k).
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("method,group,metric,k,value,count\n");
    let fmt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.9e}"),
        None => String::from("nan"),
    };
    for (name, method) in &report.methods {
        let k = method.k;
        for cell in &method.classical {
            for (metric, vk, v1) in [
                ("min_ade", cell.min_ade_k, cell.min_ade_k1),
                ("min_fde", cell.min_fde_k, cell.min_fde_k1),
                ("mr", cell.mr_k, cell.mr_k1),
                ("brier_min_fde", cell.brier_min_fde_k, cell.brier_min_fde_k1),
            ] {
                out.push_str(&format!("{name},{},{metric},{k},{},{}\n", cell.group, fmt(vk), cell.count));
                out.push_str(&format!("{name},{},{metric},1,{},{}\n", cell.group, fmt(v1), cell.count));
            }
        }
        let t = &method.tailored;
        let coll = t.n_collision_scenes;
        let non = t.n_non_collision_scenes;
        for (metric, kk, value, count) in [
            ("mse_risk", 1, t.mse_risk_k1, non),
            ("mse_risk", k, t.mse_risk_k, non),
            ("mr_risk", k, t.mr_risk_k, non),
            ("mse_velo", 1, t.mse_velo_k1, coll),
            ("mse_velo", k, t.mse_velo_k, coll),
            ("mr_velo", k, t.mr_velo_k, coll),
            ("mse_time", 1, t.mse_time_k1, coll),
            ("mse_time", k, t.mse_time_k, coll),
            ("mr_time", k, t.mr_time_k, coll),
            ("mr_coll", 1, t.mr_coll_k1, coll),
            ("mr_coll", k, t.mr_coll_k, coll),
        ] {
            out.push_str(&format!("{name},all,{metric},{kk},{},{count}\n", fmt(value)));
        }
        let cp = &method.collision_probability;
        out.push_str(&format!(
            "{name},all,collision_probability_overall,{k},{},{}\n",
            fmt(cp.overall),
            report.n_scenes
        ));
        out.push_str(&format!(
            "{name},all,collision_probability_collision,{k},{},{coll}\n",
            fmt(cp.collision)
        ));
        out.push_str(&format!(
            "{name},all,collision_probability_non_collision,{k},{},{non}\n",
            fmt(cp.non_collision)
        ));
    }
    out
}
