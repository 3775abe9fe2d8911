//! Subject manifest (JSON) and per-subject ROI time-series CSVs
//! (rows = ROIs, columns = time points, no header).

use super::IoError;
use crate::dynconn::RoiTimeSeries;
use crate::mat::Mat;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subjects: Vec<ManifestEntry>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut ids = std::collections::HashSet::new();
    for entry in &manifest.subjects {
        if !ids.insert(&entry.subject_id) {
            return Err(IoError::Manifest {
                subject_id: entry.subject_id.clone(),
                message: "duplicate subject id".into(),
            });
        }
    }
    Ok(manifest)
}

/// Reads a headerless numeric CSV; every row must have the same number of
/// columns and every cell must parse as a finite float.
pub fn load_roi_csv(path: &Path) -> Result<Mat<f64>, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut data: Vec<f64> = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::Csv {
            path: path.display().to_string(),
            row: row_idx + 1,
            message: e.to_string(),
        })?;
        let width = record.len();
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(IoError::Csv {
                    path: path.display().to_string(),
                    row: row_idx + 1,
                    message: format!("expected {c} columns, found {width}"),
                })
            }
            _ => {}
        }
        for (col_idx, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| IoError::Csv {
                path: path.display().to_string(),
                row: row_idx + 1,
                message: format!("column {}: '{cell}' is not a number", col_idx + 1),
            })?;
            if !value.is_finite() {
                return Err(IoError::Csv {
                    path: path.display().to_string(),
                    row: row_idx + 1,
                    message: format!("column {}: non-finite value", col_idx + 1),
                });
            }
            data.push(value);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(IoError::Csv {
            path: path.display().to_string(),
            row: 0,
            message: "empty file".into(),
        });
    }
    Ok(Mat::from_vec(rows, cols, data))
}

/// Loads every subject listed in a manifest. Relative CSV paths resolve
/// against the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<RoiTimeSeries<f64>>, IoError> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let csv_path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let data = load_roi_csv(&csv_path)?;
        out.push(RoiTimeSeries::new(
            entry.subject_id.clone(),
            data,
            entry.label,
        ));
    }
    Ok(out)
}

/// Writes a matrix as a headerless CSV.
pub fn write_roi_csv(path: &Path, data: &Mat<f64>) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| IoError::Csv {
        path: path.display().to_string(),
        row: 0,
        message: e.to_string(),
    })?;
    for i in 0..data.rows() {
        let row: Vec<String> = data.row(i).iter().map(|v| format!("{v}")).collect();
        writer.write_record(&row).map_err(|e| IoError::Csv {
            path: path.display().to_string(),
            row: i + 1,
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| IoError::file(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let m = Mat::from_vec(2, 3, vec![1.0, -2.5, 3.0, 0.25, 5.0, -6.75]);
        write_roi_csv(&path, &m).unwrap();
        let back = load_roi_csv(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ragged_row_names_file_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        match load_roi_csv(&path) {
            Err(IoError::Csv { row, message, .. }) => {
                assert_eq!(row, 2);
                assert!(message.contains("expected 3 columns"));
            }
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_diagnosed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3,oops\n").unwrap();
        match load_roi_csv(&path) {
            Err(IoError::Csv { row, message, .. }) => {
                assert_eq!(row, 2);
                assert!(message.contains("column 2"));
            }
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"subjects":[{"subject_id":"a","path":"a.csv","label":0},
                            {"subject_id":"a","path":"b.csv","label":1}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(IoError::Manifest { .. })
        ));
    }

    #[test]
    fn dataset_loads_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mat::from_vec(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        write_roi_csv(&dir.path().join("s1.csv"), &m).unwrap();
        std::fs::write(
            dir.path().join("manifest.json"),
            r#"{"subjects":[{"subject_id":"s1","path":"s1.csv","label":1}]}"#,
        )
        .unwrap();
        let data = load_dataset(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].label, 1);
        assert_eq!(data[0].data, m);
    }
}
