//! Model checkpoints: JSON header (config, shapes, seed, epoch, per-tensor
//! checksums) followed by a raw little-endian f64 payload holding every
//! parameter and the optimizer moments, so training resumes exactly.

use super::{sha256_hex, IoError};
use crate::mat::Mat;
use crate::model::{ModelConfig, ModelParams};
use crate::trainer::{OptimizerState, TrainConfig};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSVBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into the payload in f64 units.
    pub offset: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub n_nodes: usize,
    pub rng_seed: u64,
    pub epoch: usize,
    pub opt_step: u64,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams<f64>,
    pub opt: OptimizerState,
}

fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn write_checkpoint(
    path: &Path,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    params: &ModelParams<f64>,
    opt: &OptimizerState,
    epoch: usize,
) -> Result<(), IoError> {
    let mut tensors = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, values: &[f64]| {
        tensors.push(TensorEntry {
            name,
            rows,
            cols,
            offset: payload.len(),
            sha256: sha256_hex(&f64s_to_bytes(values)),
        });
        payload.extend_from_slice(values);
    };
    for (name, m) in params.flat() {
        push(name, m.rows(), m.cols(), m.as_slice());
    }
    for (moment, store) in [("m", &opt.m), ("v", &opt.v)] {
        for (pidx, values) in store.iter().enumerate() {
            push(format!("opt.{moment}.{pidx}"), 1, values.len(), values);
        }
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        model: mcfg.clone(),
        train: tcfg.clone(),
        n_nodes: params.n_nodes,
        rng_seed: tcfg.seed,
        epoch,
        opt_step: opt.step,
        tensors,
    };
    let header_json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut file = std::fs::File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(|e| IoError::file(path, e));
    write(CHECKPOINT_MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&(header_json.len() as u64).to_le_bytes())?;
    write(&header_json)?;
    write(&f64s_to_bytes(&payload))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let mut file = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| IoError::file(path, e))?;
    let format_err = |message: String| IoError::Format {
        path: path.display().to_string(),
        message,
    };
    if bytes.len() < 20 || &bytes[0..8] != CHECKPOINT_MAGIC {
        return Err(format_err("not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..20 + header_len]).map_err(|e| IoError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
    let payload_bytes = &bytes[20 + header_len..];

    let read_tensor = |entry: &TensorEntry| -> Result<Vec<f64>, IoError> {
        let len = entry.rows * entry.cols;
        let start = entry.offset * 8;
        let end = start + len * 8;
        if payload_bytes.len() < end {
            return Err(format_err(format!("truncated payload at {}", entry.name)));
        }
        let raw = &payload_bytes[start..end];
        if sha256_hex(raw) != entry.sha256 {
            return Err(IoError::Checksum {
                path: path.display().to_string(),
                name: entry.name.clone(),
            });
        }
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    // Rebuild the parameter struct by name against a fresh scaffold.
    let mut params: ModelParams<f64> = ModelParams::init(&header.model, header.n_nodes, 0);
    let entries: std::collections::HashMap<&str, &TensorEntry> = header
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t))
        .collect();
    for (name, m) in params.flat_mut() {
        let entry = entries
            .get(name.as_str())
            .ok_or_else(|| format_err(format!("missing tensor {name}")))?;
        if entry.rows != m.rows() || entry.cols != m.cols() {
            return Err(format_err(format!(
                "tensor {name} has shape {}x{}, expected {}x{}",
                entry.rows,
                entry.cols,
                m.rows(),
                m.cols()
            )));
        }
        let values = read_tensor(entry)?;
        *m = Mat::from_vec(entry.rows, entry.cols, values);
    }
    let n_params = params.flat().len();
    let mut opt = OptimizerState::new(&params);
    opt.step = header.opt_step;
    for (store, moment) in [(&mut opt.m, "m"), (&mut opt.v, "v")] {
        for (pidx, slot) in store.iter_mut().enumerate().take(n_params) {
            let name = format!("opt.{moment}.{pidx}");
            let entry = entries
                .get(name.as_str())
                .ok_or_else(|| format_err(format!("missing tensor {name}")))?;
            *slot = read_tensor(entry)?;
        }
    }
    Ok(Checkpoint {
        header,
        params,
        opt,
    })
}
