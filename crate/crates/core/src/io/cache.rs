//! Versioned binary cache of built graph sequences.
//!
//! Layout: 8-byte magic, little-endian u32 version, little-endian u64
//! header length, JSON header, then the per-subject payload in header
//! order. Per step the payload holds the adjacency as bytes followed by
//! weights and features as little-endian f64. The header records the
//! window spec that produced the sequences and a sha256 per subject, so a
//! rebuild from identical inputs is byte-identical.

use super::{sha256_hex, IoError};
use crate::dynconn::{DynamicGraphSequence, WindowSpec};
use crate::mat::Mat;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CACHE_MAGIC: &[u8; 8] = b"DSVBSEQ\0";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSubject {
    pub subject_id: String,
    pub label: usize,
    pub n_nodes: usize,
    /// Number of graphs (T + 1).
    pub steps: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub version: u32,
    /// Window spec used to build the sequences; absent for directly
    /// generated synthetic caches.
    pub window: Option<WindowSpec>,
    pub subjects: Vec<CacheSubject>,
}

fn subject_payload(seq: &DynamicGraphSequence<f64>) -> Vec<u8> {
    let n = seq.n_nodes();
    let mut bytes = Vec::new();
    for t in 0..=seq.t_max() {
        for v in seq.adjacency[t].as_slice() {
            bytes.push(if *v != 0.0 { 1u8 } else { 0u8 });
        }
        for m in [&seq.weights[t], &seq.features[t]] {
            debug_assert_eq!(m.rows(), n);
            for v in m.as_slice() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    bytes
}

pub fn write_cache(
    path: &Path,
    sequences: &[DynamicGraphSequence<f64>],
    window: Option<&WindowSpec>,
) -> Result<CacheHeader, IoError> {
    let mut payloads = Vec::with_capacity(sequences.len());
    let mut subjects = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let bytes = subject_payload(seq);
        subjects.push(CacheSubject {
            subject_id: seq.subject_id.clone(),
            label: seq.label,
            n_nodes: seq.n_nodes(),
            steps: seq.t_max() + 1,
            sha256: sha256_hex(&bytes),
        });
        payloads.push(bytes);
    }
    let header = CacheHeader {
        version: CACHE_VERSION,
        window: window.copied(),
        subjects,
    };
    let header_json = serde_json::to_vec(&header).expect("cache header serializes");
    let mut file = std::fs::File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(|e| IoError::file(path, e));
    write(CACHE_MAGIC)?;
    write(&CACHE_VERSION.to_le_bytes())?;
    write(&(header_json.len() as u64).to_le_bytes())?;
    write(&header_json)?;
    for payload in &payloads {
        write(payload)?;
    }
    Ok(header)
}

pub fn read_cache(path: &Path) -> Result<(CacheHeader, Vec<DynamicGraphSequence<f64>>), IoError> {
    let mut file = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| IoError::file(path, e))?;
    let format_err = |message: &str| IoError::Format {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    if bytes.len() < 20 || &bytes[0..8] != CACHE_MAGIC {
        return Err(format_err("not a sequence cache"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(format_err(&format!("unsupported cache version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < 20 + header_len {
        return Err(format_err("truncated header"));
    }
    let header: CacheHeader =
        serde_json::from_slice(&bytes[20..20 + header_len]).map_err(|e| IoError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
    let mut cursor = 20 + header_len;
    let mut sequences = Vec::with_capacity(header.subjects.len());
    for subject in &header.subjects {
        let n = subject.n_nodes;
        let per_step = n * n + 2 * n * n * 8;
        let total = per_step * subject.steps;
        if bytes.len() < cursor + total {
            return Err(format_err(&format!(
                "truncated payload for subject {}",
                subject.subject_id
            )));
        }
        let payload = &bytes[cursor..cursor + total];
        if sha256_hex(payload) != subject.sha256 {
            return Err(IoError::Checksum {
                path: path.display().to_string(),
                name: subject.subject_id.clone(),
            });
        }
        cursor += total;
        let mut adjacency = Vec::with_capacity(subject.steps);
        let mut weights = Vec::with_capacity(subject.steps);
        let mut features = Vec::with_capacity(subject.steps);
        let mut offset = 0usize;
        for _ in 0..subject.steps {
            let adj_bytes = &payload[offset..offset + n * n];
            offset += n * n;
            adjacency.push(Mat::from_vec(
                n,
                n,
                adj_bytes.iter().map(|&b| f64::from(b)).collect(),
            ));
            let mut mats = Vec::with_capacity(2);
            for _ in 0..2 {
                let mut data = Vec::with_capacity(n * n);
                for k in 0..n * n {
                    let start = offset + k * 8;
                    data.push(f64::from_le_bytes(
                        payload[start..start + 8].try_into().unwrap(),
                    ));
                }
                offset += n * n * 8;
                mats.push(Mat::from_vec(n, n, data));
            }
            features.push(mats.pop().unwrap());
            weights.push(mats.pop().unwrap());
        }
        sequences.push(DynamicGraphSequence {
            subject_id: subject.subject_id.clone(),
            adjacency,
            features,
            weights,
            label: subject.label,
        });
    }
    Ok((header, sequences))
}
