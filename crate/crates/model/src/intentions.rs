//! Intention priors: clustered trajectory endpoints and manually chosen risk
//! levels, plus the `scrisk-intents/1` file format and the k-means
//! clustering that produces the endpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INTENTS_SCHEMA: &str = "scrisk-intents/1";

#[derive(Debug, Error)]
pub enum IntentionError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: expected {INTENTS_SCHEMA}, found {0}")]
    Schema(String),
    #[error("invalid intentions: {0}")]
    Invalid(String),
    #[error("cannot cluster an empty dataset")]
    EmptyDataset,
}

/// The decoder's prediction priors: N_end spatial endpoints (target frame)
/// crossed with N_risk scalar risk levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionSet {
    pub endpoints: Vec<[f64; 2]>,
    pub risks: Vec<f64>,
}

impl IntentionSet {
    pub fn validate(&self) -> Result<(), IntentionError> {
        if self.endpoints.is_empty() || self.risks.is_empty() {
            return Err(IntentionError::Invalid("endpoints and risks must be non-empty".into()));
        }
        if self.endpoints.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(IntentionError::Invalid("non-finite endpoint".into()));
        }
        for w in self.risks.windows(2) {
            if w[1] <= w[0] {
                return Err(IntentionError::Invalid("risk levels must be strictly increasing".into()));
            }
        }
        if (self.risks.last().unwrap() - 999.0).abs() > 1e-9 {
            return Err(IntentionError::Invalid("risk levels must end at 999".into()));
        }
        Ok(())
    }

    pub fn n_end(&self) -> usize {
        self.endpoints.len()
    }

    pub fn n_risk(&self) -> usize {
        self.risks.len()
    }
}

#[derive(Serialize, Deserialize)]
struct IntentsJson {
    schema: String,
    endpoints: Vec<[f64; 2]>,
    risks: Vec<f64>,
}

pub fn write_intents(path: &Path, set: &IntentionSet) -> Result<(), IntentionError> {
    set.validate()?;
    let json = IntentsJson {
        schema: INTENTS_SCHEMA.to_string(),
        endpoints: set.endpoints.clone(),
        risks: set.risks.clone(),
    };
    let mut file = fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(&json)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_intents(path: &Path) -> Result<IntentionSet, IntentionError> {
    let json: IntentsJson = serde_json::from_str(&fs::read_to_string(path)?)?;
    if json.schema != INTENTS_SCHEMA {
        return Err(IntentionError::Schema(json.schema));
    }
    let set = IntentionSet { endpoints: json.endpoints, risks: json.risks };
    set.validate()?;
    Ok(set)
}

/// Lloyd's algorithm with k-means++ seeding; deterministic for a fixed seed.
/// Ties in the nearest-centroid assignment break toward the lower index, and
/// emptied clusters are reseeded at the point farthest from its centroid.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<Vec<[f64; 2]>, IntentionError> {
    if points.is_empty() {
        return Err(IntentionError::EmptyDataset);
    }
    if points.len() < k {
        return Err(IntentionError::Invalid(format!(
            "need at least {k} points to form {k} clusters, got {}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d2 = |a: &[f64; 2], b: &[f64; 2]| {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        dx * dx + dy * dy
    };
    // k-means++ seeding.
    let mut centroids: Vec<[f64; 2]> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| d2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with centroids; any choice works.
            points[rng.random_range(0..points.len())]
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            points[chosen]
        };
        centroids.push(next);
    }
    let mut assign = vec![0usize; points.len()];
    for _ in 0..100 {
        // Assignment step.
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = d2(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assign[i] = best;
        }
        // Update step.
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assign[i]][0] += p[0];
            sums[assign[i]][1] += p[1];
            counts[assign[i]] += 1;
        }
        let mut motion: f64 = 0.0;
        for c in 0..k {
            let new = if counts[c] == 0 {
                // Reseed an empty cluster at the worst-represented point.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, p), (j, q)| {
                        let da = d2(p, &centroids[assign[*i]]);
                        let db = d2(q, &centroids[assign[*j]]);
                        da.partial_cmp(&db).unwrap().then(j.cmp(i))
                    })
                    .map(|(_, p)| *p)
                    .unwrap();
                far
            } else {
                [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64]
            };
            motion = motion.max(d2(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if motion < 1e-6 {
            break;
        }
    }
    Ok(centroids)
}

/// Clusters the ground-truth endpoints of a sample set into k endpoint
/// intentions.
pub fn cluster_endpoint_intentions(
    endpoints: &[[f64; 2]],
    k: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>, IntentionError> {
    kmeans(endpoints, k, seed)
}
