//! Checkpoint format `scrisk-ckpt/1`: one line of JSON (schema, model
//! config, parameter manifest with offsets into the blob) followed by a
//! little-endian float64 blob. Reading then rewriting reproduces the file
//! byte for byte.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::ParamStore;
use crate::tensor::Tensor;

pub const CKPT_SCHEMA: &str = "scrisk-ckpt/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: expected {CKPT_SCHEMA}, found {0}")]
    Schema(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    config: serde_json::Value,
    params: Vec<ManifestEntry>,
}

pub fn save(path: &Path, store: &ParamStore, config: &serde_json::Value) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(store.params.len());
    let mut offset = 0usize;
    for p in &store.params {
        entries.push(ManifestEntry { name: p.name.clone(), shape: p.value.shape.clone(), offset });
        offset += p.value.len();
    }
    let header = Header { schema: CKPT_SCHEMA.to_string(), config: config.clone(), params: entries };
    let mut file = fs::File::create(path)?;
    file.write_all(serde_json::to_string(&header)?.as_bytes())?;
    file.write_all(b"\n")?;
    let mut blob = Vec::with_capacity(offset * 8);
    for p in &store.params {
        for &v in &p.value.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&blob)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value), CheckpointError> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Corrupt("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])?;
    if header.schema != CKPT_SCHEMA {
        return Err(CheckpointError::Schema(header.schema));
    }
    let blob = &bytes[newline + 1..];
    let mut store = ParamStore::new();
    for entry in &header.params {
        let len: usize = entry.shape.iter().product();
        let start = entry.offset * 8;
        let end = start + len * 8;
        if end > blob.len() {
            return Err(CheckpointError::Corrupt(format!("blob too short for {}", entry.name)));
        }
        let data: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.add(&entry.name, Tensor::new(entry.shape.clone(), data));
    }
    Ok((store, header.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store.add("enc.w", Tensor::xavier(&mut rng, 4, 6));
        store.add("enc.b", Tensor::zeros(&[1, 6]));
        store.add("head.w", Tensor::xavier(&mut rng, 6, 2));
        let config = serde_json::json!({"d_f": 6, "n_heads": 2, "dropout": 0.1});
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &store, &config).unwrap();
        let (loaded, cfg) = load(&p1).unwrap();
        assert_eq!(cfg, config);
        for name in ["enc.w", "enc.b", "head.w"] {
            assert_eq!(loaded.get(name), store.get(name));
        }
        save(&p2, &loaded, &cfg).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn load_rejects_wrong_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        fs::write(&p, b"{\"schema\":\"other/1\",\"config\":null,\"params\":[]}\n").unwrap();
        assert!(matches!(load(&p), Err(CheckpointError::Schema(_))));
    }
}
