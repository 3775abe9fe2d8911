//! Dynamic graph construction from ROI time series.
//!
//! A subject's multivariate series is segmented into overlapping windows;
//! each window yields a Ledoit-Wolf shrinkage correlation matrix, which is
//! proportionally thresholded into a binary adjacency matrix. The
//! pre-threshold correlation rows double as node features.

use crate::mat::Mat;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynconnError {
    #[error("series of {t_total} time points is shorter than one window of length {window}")]
    SeriesTooShort { t_total: usize, window: usize },
    #[error("ROI {roi} has zero variance within a window (degenerate signal)")]
    ZeroVarianceRoi { roi: usize },
    #[error("correlation matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("non-finite value in time series at ROI {roi}, time point {t}")]
    NonFinite { roi: usize, t: usize },
    #[error("invalid window spec: {0}")]
    BadSpec(String),
}

/// What the node feature rows are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Pre-threshold correlation rows (keeps magnitude information).
    #[default]
    RawWeights,
    /// Correlation rows masked by the binary adjacency.
    ThresholdedWeights,
}

/// Sliding-window parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    /// Window length in time points.
    pub length: usize,
    /// Shift between consecutive window starts.
    pub stride: usize,
    /// Fraction of strongest |correlation| pairs kept as edges.
    pub keep_fraction: f64,
    pub feature_source: FeatureSource,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length: 20,
            stride: 10,
            keep_fraction: 0.40,
            feature_source: FeatureSource::default(),
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), DynconnError> {
        if self.length < 2 {
            return Err(DynconnError::BadSpec(format!(
                "window length must be >= 2, got {}",
                self.length
            )));
        }
        if self.stride < 1 {
            return Err(DynconnError::BadSpec("stride must be >= 1".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(DynconnError::BadSpec(format!(
                "keep_fraction must be in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        Ok(())
    }
}

/// One subject's ROI time series with its class label.
#[derive(Debug, Clone)]
pub struct RoiTimeSeries<F> {
    pub subject_id: String,
    /// Rows are ROIs, columns are time points.
    pub data: Mat<F>,
    pub label: usize,
}

impl<F: Scalar> RoiTimeSeries<F> {
    pub fn new(subject_id: impl Into<String>, data: Mat<F>, label: usize) -> Self {
        Self {
            subject_id: subject_id.into(),
            data,
            label,
        }
    }

    pub fn n_rois(&self) -> usize {
        self.data.rows()
    }

    pub fn t_total(&self) -> usize {
        self.data.cols()
    }

    pub fn validate(&self) -> Result<(), DynconnError> {
        for i in 0..self.data.rows() {
            for (t, x) in self.data.row(i).iter().enumerate() {
                if !x.is_finite() {
                    return Err(DynconnError::NonFinite { roi: i, t });
                }
            }
        }
        Ok(())
    }
}

/// Per-subject sequence of graphs: binary adjacency, node features, and the
/// pre-threshold correlation weights, one triple per window t = 0..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraphSequence<F> {
    pub subject_id: String,
    pub adjacency: Vec<Mat<F>>,
    pub features: Vec<Mat<F>>,
    pub weights: Vec<Mat<F>>,
    pub label: usize,
}

impl<F: Scalar> DynamicGraphSequence<F> {
    /// Sequence length index bound T; the sequence holds T + 1 graphs.
    pub fn t_max(&self) -> usize {
        self.adjacency.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency[0].rows()
    }
}

/// Splits the series into overlapping windows of `spec.length` columns
/// starting at 0, stride, 2*stride, ...; a trailing partial window is
/// discarded.
pub fn segment_windows<F: Scalar>(
    series: &RoiTimeSeries<F>,
    spec: &WindowSpec,
) -> Result<Vec<Mat<F>>, DynconnError> {
    spec.validate()?;
    let (n, t_total) = (series.n_rois(), series.t_total());
    if t_total < spec.length {
        return Err(DynconnError::SeriesTooShort {
            t_total,
            window: spec.length,
        });
    }
    let count = (t_total - spec.length) / spec.stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * spec.stride;
        out.push(Mat::from_fn(n, spec.length, |i, j| {
            series.data.at(i, start + j)
        }));
    }
    Ok(out)
}

/// Number of windows produced by [`segment_windows`] for a series of
/// `t_total` points.
pub fn window_count(t_total: usize, spec: &WindowSpec) -> Option<usize> {
    if t_total < spec.length {
        None
    } else {
        Some((t_total - spec.length) / spec.stride + 1)
    }
}

/// Ledoit-Wolf shrunk covariance of a block (rows = variables, columns =
/// observations), normalized to a correlation matrix with unit diagonal.
///
/// The shrinkage target is the scaled identity `mu * I` with
/// `mu = trace(S)/N`, and the closed-form intensity is clamped to [0, 1].
pub fn ledoit_wolf_correlation<F: Scalar>(block: &Mat<F>) -> Result<Mat<F>, DynconnError> {
    let (shrunk, _) = ledoit_wolf_covariance(block)?;
    let n = shrunk.rows();
    let mut corr = Mat::zeros(n, n);
    for i in 0..n {
        *corr.at_mut(i, i) = F::one();
        for j in (i + 1)..n {
            let denom = (shrunk.at(i, i) * shrunk.at(j, j)).sqrt();
            let c = (shrunk.at(i, j) / denom)
                .max(-F::one())
                .min(F::one());
            *corr.at_mut(i, j) = c;
            *corr.at_mut(j, i) = c;
        }
    }
    Ok(corr)
}

/// Shrunk covariance and the shrinkage intensity delta.
pub fn ledoit_wolf_covariance<F: Scalar>(block: &Mat<F>) -> Result<(Mat<F>, f64), DynconnError> {
    let (n, l) = (block.rows(), block.cols());
    assert!(l >= 2, "ledoit_wolf: need at least 2 observations");
    // Center each variable and reject constant rows.
    let mut centered = block.clone();
    let linv = F::of(1.0 / l as f64);
    for i in 0..n {
        let row = centered.row_mut(i);
        // A constant row has zero variance even when centering leaves
        // rounding residue.
        if row.iter().all(|&x| x == row[0]) {
            return Err(DynconnError::ZeroVarianceRoi { roi: i });
        }
        let mean: F = row.iter().copied().sum::<F>() * linv;
        let mut var = F::zero();
        for x in row.iter_mut() {
            *x -= mean;
            var += *x * *x;
        }
        if var == F::zero() {
            return Err(DynconnError::ZeroVarianceRoi { roi: i });
        }
    }
    // Sample covariance S = (1/L) X Xt over centered columns.
    let mut s = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = F::zero();
            for (&a, &b) in centered.row(i).iter().zip(centered.row(j)) {
                acc += a * b;
            }
            let v = acc * linv;
            *s.at_mut(i, j) = v;
            *s.at_mut(j, i) = v;
        }
    }
    let mu: F = (0..n).map(|i| s.at(i, i)).sum::<F>() / F::of(n as f64);
    // d2 = ||S - mu I||^2, b2 = (1/L^2) sum_t ||x_t x_t' - S||^2, delta = min(b2, d2)/d2.
    let mut d2 = F::zero();
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { mu } else { F::zero() };
            let diff = s.at(i, j) - target;
            d2 += diff * diff;
        }
    }
    let mut b2 = F::zero();
    for t in 0..l {
        for i in 0..n {
            let xi = centered.at(i, t);
            for j in 0..n {
                let diff = xi * centered.at(j, t) - s.at(i, j);
                b2 += diff * diff;
            }
        }
    }
    b2 /= F::of((l * l) as f64);
    let delta = if d2 > F::zero() {
        (b2.min(d2) / d2).max(F::zero()).min(F::one())
    } else {
        F::zero()
    };
    let mut shrunk = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { mu } else { F::zero() };
            *shrunk.at_mut(i, j) = (F::one() - delta) * s.at(i, j) + delta * target;
        }
    }
    Ok((shrunk, delta.as_f64()))
}

/// Keeps the `ceil(keep_fraction * E)` strongest |weight| node pairs as
/// edges, where E = N(N-1)/2. Ties break on (|weight| descending, then
/// smaller i, then smaller j). The result is symmetric with a zero diagonal.
pub fn proportional_threshold<F: Scalar>(
    corr: &Mat<F>,
    keep_fraction: f64,
) -> Result<Mat<F>, DynconnError> {
    assert!(
        (0.0..=1.0).contains(&keep_fraction) && keep_fraction > 0.0,
        "keep_fraction must be in (0, 1]"
    );
    let n = corr.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            if corr.at(i, j) != corr.at(j, i) {
                return Err(DynconnError::NotSymmetric { i, j });
            }
        }
    }
    let mut pairs: Vec<(usize, usize, F)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j, corr.at(i, j).abs()));
        }
    }
    pairs.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("non-finite correlation weight")
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let keep = edge_budget(pairs.len(), keep_fraction);
    let mut adj = Mat::zeros(n, n);
    for &(i, j, _) in pairs.iter().take(keep) {
        *adj.at_mut(i, j) = F::one();
        *adj.at_mut(j, i) = F::one();
    }
    Ok(adj)
}

/// `ceil(keep_fraction * pairs)` with a guard so that products that are
/// mathematically integral (0.4 * 435 = 174) do not round up from float
/// noise.
pub fn edge_budget(pairs: usize, keep_fraction: f64) -> usize {
    let target = keep_fraction * pairs as f64;
    let nearest = target.round();
    let count = if (target - nearest).abs() < 1e-9 {
        nearest
    } else {
        target.ceil()
    };
    (count as usize).min(pairs)
}

/// Builds the full per-subject graph sequence: per window, weights are the
/// Ledoit-Wolf correlation with the diagonal zeroed, adjacency is the
/// proportional threshold of those weights, and node features are the
/// weight rows themselves.
pub fn build_sequence<F: Scalar>(
    series: &RoiTimeSeries<F>,
    spec: &WindowSpec,
) -> Result<DynamicGraphSequence<F>, DynconnError> {
    series.validate()?;
    let blocks = segment_windows(series, spec)?;
    let mut adjacency = Vec::with_capacity(blocks.len());
    let mut features = Vec::with_capacity(blocks.len());
    let mut weights = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let corr = ledoit_wolf_correlation(block)?;
        let adj = proportional_threshold(&corr, spec.keep_fraction)?;
        let mut w = corr;
        for i in 0..w.rows() {
            *w.at_mut(i, i) = F::zero();
        }
        let x = match spec.feature_source {
            FeatureSource::RawWeights => w.clone(),
            FeatureSource::ThresholdedWeights => {
                Mat::from_fn(w.rows(), w.cols(), |i, j| w.at(i, j) * adj.at(i, j))
            }
        };
        adjacency.push(adj);
        features.push(x);
        weights.push(w);
    }
    Ok(DynamicGraphSequence {
        subject_id: series.subject_id.clone(),
        adjacency,
        features,
        weights,
        label: series.label,
    })
}
