//! File formats: subject manifests and ROI CSVs, the binary sequence cache,
//! model checkpoints, and analysis/report exports.

mod cache;
mod checkpoint;
mod manifest;
mod report;

pub use cache::{read_cache, write_cache, CacheHeader, CacheSubject, CACHE_VERSION};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use manifest::{load_dataset, load_manifest, load_roi_csv, write_roi_csv, Manifest, ManifestEntry};
pub use report::{
    svg_heatmap, write_assignments_csv, write_centroid_csv, write_histogram_csv,
    write_jsonl_log, write_predictions_csv, write_readouts_csv, write_report_json,
    write_transitions_json,
};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}, row {row}: {message}")]
    Csv {
        path: String,
        row: usize,
        message: String,
    },
    #[error("manifest entry {subject_id}: {message}")]
    Manifest { subject_id: String, message: String },
    #[error("{path}: bad file format: {message}")]
    Format { path: String, message: String },
    #[error("{path}: checksum mismatch for {name}")]
    Checksum { path: String, name: String },
}

impl IoError {
    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::File {
            path: path.display().to_string(),
            source,
        }
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
