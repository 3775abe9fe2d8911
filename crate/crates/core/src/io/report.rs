//! Analysis and evaluation exports: prediction CSVs, report JSON, training
//! logs, state-analysis tables, and small SVG heatmaps.

use super::IoError;
use crate::evaluation::SubjectPrediction;
use crate::state_analysis::{StateAssignment, TransitionMatrix, TransitionRates};
use crate::trainer::EpochRecord;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, IoError> {
    csv::Writer::from_path(path).map_err(|e| IoError::Csv {
        path: path.display().to_string(),
        row: 0,
        message: e.to_string(),
    })
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    IoError::Csv {
        path: path.display().to_string(),
        row: 0,
        message: e.to_string(),
    }
}

/// `subject_id, logit_0, logit_1, prob_1, predicted, true` per scored subject.
pub fn write_predictions_csv(path: &Path, preds: &[SubjectPrediction]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["subject_id", "logit_0", "logit_1", "prob_1", "predicted", "true"])
        .map_err(|e| csv_err(path, e))?;
    for p in preds {
        w.write_record([
            p.subject_id.clone(),
            format!("{}", p.logits[0]),
            format!("{}", p.logits.get(1).copied().unwrap_or(f64::NAN)),
            format!("{}", p.prob_positive),
            format!("{}", p.predicted),
            format!("{}", p.truth),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))?;
    Ok(())
}

/// Pretty-printed JSON for any serializable report.
pub fn write_report_json<T: Serialize>(path: &Path, report: &T) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(|e| IoError::file(path, e))
}

/// JSON-lines training log, one record per epoch.
pub fn write_jsonl_log(path: &Path, records: &[EpochRecord]) -> Result<(), IoError> {
    let mut file = std::fs::File::create(path).map_err(|e| IoError::file(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("epoch record serializes");
        writeln!(file, "{line}").map_err(|e| IoError::file(path, e))?;
    }
    Ok(())
}

/// Centroid in upper-triangle coordinates written back as a full symmetric
/// matrix with unit diagonal.
pub fn write_centroid_csv(path: &Path, centroid: &[f64], n: usize) -> Result<(), IoError> {
    assert_eq!(centroid.len(), n * (n - 1) / 2, "centroid length mismatch");
    let mut full = vec![vec![0.0f64; n]; n];
    let mut idx = 0;
    for (i, row) in full.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            full[i][j] = centroid[idx];
            full[j][i] = centroid[idx];
            idx += 1;
        }
    }
    let mut w = csv_writer(path)?;
    for row in &full {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        w.write_record(&cells).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))?;
    Ok(())
}

/// `subject_id, t_0, t_1, ...` state labels per subject.
pub fn write_assignments_csv(path: &Path, assignments: &[StateAssignment]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let steps = assignments.first().map_or(0, |a| a.states.len());
    let mut head = vec!["subject_id".to_string()];
    head.extend((0..steps).map(|t| format!("t_{t}")));
    w.write_record(&head).map_err(|e| csv_err(path, e))?;
    for a in assignments {
        let mut row = vec![a.subject_id.clone()];
        row.extend(a.states.iter().map(|s| s.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))?;
    Ok(())
}

/// Named transition matrices (e.g. one per group) as a JSON object.
pub fn write_transitions_json(
    path: &Path,
    groups: &[(String, TransitionMatrix)],
) -> Result<(), IoError> {
    let map: serde_json::Map<String, serde_json::Value> = groups
        .iter()
        .map(|(name, t)| {
            (
                name.clone(),
                serde_json::to_value(t).expect("transition matrix serializes"),
            )
        })
        .collect();
    write_report_json(path, &map)
}

/// `bin_start, bin_end, count` histogram rows.
pub fn write_histogram_csv(path: &Path, rates: &TransitionRates) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_start", "bin_end", "count"])
        .map_err(|e| csv_err(path, e))?;
    for (i, count) in rates.histogram.iter().enumerate() {
        w.write_record([
            format!("{}", rates.bin_edges[i]),
            format!("{}", rates.bin_edges[i + 1]),
            format!("{count}"),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))?;
    Ok(())
}

/// `subject_id, label, r_0..r_{D-1}` readout vectors for external embedding
/// tools.
pub fn write_readouts_csv(
    path: &Path,
    rows: &[(String, usize, Vec<f64>)],
) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let width = rows.first().map_or(0, |(_, _, v)| v.len());
    let mut head = vec!["subject_id".to_string(), "label".to_string()];
    head.extend((0..width).map(|i| format!("r_{i}")));
    w.write_record(&head).map_err(|e| csv_err(path, e))?;
    for (id, label, vec) in rows {
        let mut row = vec![id.clone(), label.to_string()];
        row.extend(vec.iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))?;
    Ok(())
}

/// Minimal SVG heatmap of a square matrix: blue for negative, white for
/// zero, red for positive, scaled to the largest |value|.
pub fn svg_heatmap(values: &[Vec<f64>], cell: usize) -> String {
    let n = values.len();
    let m = values.first().map_or(0, Vec::len);
    let max = values
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-12);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n",
        m * cell,
        n * cell
    );
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = (v / max).clamp(-1.0, 1.0);
            let (r, g, b) = if t >= 0.0 {
                (255, (255.0 * (1.0 - t)) as u8, (255.0 * (1.0 - t)) as u8)
            } else {
                ((255.0 * (1.0 + t)) as u8, (255.0 * (1.0 + t)) as u8, 255)
            };
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({r},{g},{b})\"/>\n",
                j * cell,
                i * cell
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
