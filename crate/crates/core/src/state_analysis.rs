//! Post-hoc dynamic-state analysis: higher-order connectivity from learned
//! embeddings, k-means brain states over pooled subjects, and Markov
//! transition statistics.

use crate::mat::Mat;
use crate::scalar::Scalar;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StateAnalysisError {
    #[error("{samples} samples are fewer than {k} clusters")]
    TooFewSamples { samples: usize, k: usize },
    #[error("state sequences must have length >= 2")]
    SequenceTooShort,
}

/// Per-step correlation of embedding rows: entry (i, j) is the Pearson
/// correlation between node i's and node j's embedding vectors. Rows with
/// zero variance get all their correlations (and diagonal) set to zero and
/// are reported in the flags.
pub fn embedding_dfc<F: Scalar>(z_sequence: &[Mat<F>]) -> (Vec<Mat<F>>, Vec<Vec<usize>>) {
    let mut out = Vec::with_capacity(z_sequence.len());
    let mut flagged = Vec::with_capacity(z_sequence.len());
    for z in z_sequence {
        let (n, d) = (z.rows(), z.cols());
        assert!(d >= 2, "embedding_dfc: need latent_dim >= 2, got {d}");
        let inv_d = F::of(1.0 / d as f64);
        let mut centered = z.clone();
        let mut norms = vec![F::zero(); n];
        let mut degenerate = Vec::new();
        for i in 0..n {
            let row = centered.row_mut(i);
            let constant = row.iter().all(|&x| x == row[0]);
            let mean: F = row.iter().copied().sum::<F>() * inv_d;
            let mut sq = F::zero();
            for x in row.iter_mut() {
                *x -= mean;
                sq += *x * *x;
            }
            if constant || sq == F::zero() {
                norms[i] = F::zero();
                degenerate.push(i);
            } else {
                norms[i] = sq.sqrt();
            }
        }
        let mut corr = Mat::zeros(n, n);
        for i in 0..n {
            if norms[i] == F::zero() {
                continue;
            }
            *corr.at_mut(i, i) = F::one();
            for j in (i + 1)..n {
                if norms[j] == F::zero() {
                    continue;
                }
                let mut dot = F::zero();
                for (&a, &b) in centered.row(i).iter().zip(centered.row(j)) {
                    dot += a * b;
                }
                let c = (dot / (norms[i] * norms[j])).max(-F::one()).min(F::one());
                *corr.at_mut(i, j) = c;
                *corr.at_mut(j, i) = c;
            }
        }
        out.push(corr);
        flagged.push(degenerate);
    }
    (out, flagged)
}

/// One subject's state sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAssignment {
    pub subject_id: String,
    pub states: Vec<usize>,
}

/// k-means output over pooled per-window connectivity matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansStates {
    /// Cluster centers in upper-triangle coordinates, ordered by
    /// descending cluster size.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<StateAssignment>,
    pub inertia: f64,
}

/// Clusters all subjects' per-window matrices jointly with k-means++
/// initialization, Lloyd iterations to relative inertia change < 1e-6 (or
/// 300 iterations), best of `restarts` by inertia. State labels are
/// canonicalized by descending cluster size.
pub fn kmeans_states(
    matrices: &[(String, Vec<Mat<f64>>)],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<KmeansStates, StateAnalysisError> {
    let mut points = Vec::new();
    for (_, mats) in matrices {
        for m in mats {
            points.push(m.upper_triangle());
        }
    }
    if points.len() < k {
        return Err(StateAnalysisError::TooFewSamples {
            samples: points.len(),
            k,
        });
    }
    let mut best: Option<(Vec<Vec<f64>>, Vec<usize>, f64)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let (centroids, labels, inertia) = lloyd(&points, k, &mut rng);
        if best.as_ref().is_none_or(|b| inertia < b.2) {
            best = Some((centroids, labels, inertia));
        }
    }
    let (centroids, labels, inertia) = best.unwrap();

    // Canonical ordering: descending cluster size, then original label.
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut relabel = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let centroids: Vec<Vec<f64>> = order.iter().map(|&o| centroids[o].clone()).collect();

    let mut assignments = Vec::with_capacity(matrices.len());
    let mut cursor = 0;
    for (subject_id, mats) in matrices {
        let states: Vec<usize> = labels[cursor..cursor + mats.len()]
            .iter()
            .map(|&l| relabel[l])
            .collect();
        cursor += mats.len();
        assignments.push(StateAssignment {
            subject_id: subject_id.clone(),
            states,
        });
    }
    Ok(KmeansStates {
        centroids,
        assignments,
        inertia,
    })
}

fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<usize>, f64) {
    let mut centroids = kmeans_pp_init(points, k, rng);
    let mut labels = vec![0usize; points.len()];
    let mut inertia = f64::INFINITY;
    for _ in 0..300 {
        // Assignment; ties go to the lower centroid index.
        let mut new_inertia = 0.0;
        for (p, label) in points.iter().zip(labels.iter_mut()) {
            let mut best = (0usize, sq_dist(p, &centroids[0]));
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            *label = best.0;
            new_inertia += best.1;
        }
        // Update; empty clusters keep their previous centroid.
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (s, cv) in sums[c].iter().zip(centroids[c].iter_mut()) {
                    *cv = s / counts[c] as f64;
                }
            }
        }
        let rel = if inertia.is_finite() && inertia > 0.0 {
            (inertia - new_inertia).abs() / inertia
        } else if inertia == 0.0 {
            0.0
        } else {
            1.0
        };
        let done = rel < 1e-6;
        inertia = new_inertia;
        if done {
            break;
        }
    }
    (centroids, labels, inertia)
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = rng.gen_range(0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            let nd = sq_dist(p, centroids.last().unwrap());
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-stochastic empirical transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub p: Vec<Vec<f64>>,
    /// States never observed as a source; their rows were left uniform.
    pub empty_rows: Vec<usize>,
}

/// Pools bigram counts over all assignments and normalizes per row. Rows
/// with no outgoing observations become uniform and are flagged.
pub fn transition_matrix(
    assignments: &[StateAssignment],
    k: usize,
) -> Result<TransitionMatrix, StateAnalysisError> {
    let mut counts = vec![vec![0.0f64; k]; k];
    for a in assignments {
        if a.states.len() < 2 {
            return Err(StateAnalysisError::SequenceTooShort);
        }
        for w in a.states.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
    }
    let mut empty_rows = Vec::new();
    let mut p = counts;
    for (row_idx, row) in p.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            empty_rows.push(row_idx);
            for v in row.iter_mut() {
                *v = 1.0 / k as f64;
            }
        } else {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
    Ok(TransitionMatrix { p, empty_rows })
}

/// Per-subject switch rates plus a histogram over fixed bin edges
/// 0.0, 0.1, ..., 1.0 (the final bin includes 1.0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRates {
    pub per_subject: Vec<(String, f64)>,
    pub histogram: Vec<usize>,
    pub bin_edges: Vec<f64>,
}

pub fn transition_rate_distribution(
    assignments: &[StateAssignment],
) -> Result<TransitionRates, StateAnalysisError> {
    let mut per_subject = Vec::with_capacity(assignments.len());
    let mut histogram = vec![0usize; 10];
    for a in assignments {
        if a.states.len() < 2 {
            return Err(StateAnalysisError::SequenceTooShort);
        }
        let switches = a.states.windows(2).filter(|w| w[0] != w[1]).count();
        let rate = switches as f64 / (a.states.len() - 1) as f64;
        let bin = ((rate * 10.0).floor() as usize).min(9);
        histogram[bin] += 1;
        per_subject.push((a.subject_id.clone(), rate));
    }
    Ok(TransitionRates {
        per_subject,
        histogram,
        bin_edges: (0..=10).map(|i| i as f64 / 10.0).collect(),
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |n: usize| (n * n.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&n| choose2(n)).sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(a.len());
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if (max - expected).abs() < 1e-15 {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_rows_correlate_to_one() {
        let z = Mat::from_fn(3, 4, |_, j| j as f64 * 0.5 - 1.0);
        let (dfc, flags) = embedding_dfc(&[z]);
        assert!(flags[0].is_empty());
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(dfc[0].at(i, j), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn anti_correlated_rows() {
        let z = Mat::from_vec(2, 4, vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0]);
        let (dfc, _) = embedding_dfc(&[z]);
        assert_relative_eq!(dfc[0].at(0, 1), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_variance_row_flagged_and_zeroed() {
        let z = Mat::from_vec(2, 3, vec![0.7, 0.7, 0.7, 1.0, 2.0, 3.0]);
        let (dfc, flags) = embedding_dfc(std::slice::from_ref(&z));
        assert_eq!(flags[0], vec![0]);
        assert_eq!(dfc[0].at(0, 0), 0.0);
        assert_eq!(dfc[0].at(0, 1), 0.0);
        assert_eq!(dfc[0].at(1, 1), 1.0);
    }

    #[test]
    fn pearson_matches_naive_oracle() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: Mat<f64> = Mat::from_fn(5, 16, |_, _| rng.gen_range(-1.0..1.0));
        let (dfc, _) = embedding_dfc(std::slice::from_ref(&z));
        for i in 0..5 {
            for j in 0..5 {
                let (ri, rj) = (z.row(i), z.row(j));
                let d = ri.len() as f64;
                let (mi, mj) = (
                    ri.iter().sum::<f64>() / d,
                    rj.iter().sum::<f64>() / d,
                );
                let mut num = 0.0;
                let mut di = 0.0;
                let mut dj = 0.0;
                for t in 0..ri.len() {
                    num += (ri[t] - mi) * (rj[t] - mj);
                    di += (ri[t] - mi).powi(2);
                    dj += (rj[t] - mj).powi(2);
                }
                let naive = num / (di.sqrt() * dj.sqrt());
                assert_relative_eq!(dfc[0].at(i, j), naive, epsilon = 1e-12);
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn blob_dataset() -> (Vec<(String, Vec<Mat<f64>>)>, Vec<usize>) {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 5;
        let mut data = Vec::new();
        let mut truth = Vec::new();
        let centers = [0.0, 3.0, -3.0];
        for s in 0..6 {
            let mut mats = Vec::new();
            for w in 0..5 {
                let state = (s + w) % 3;
                truth.push(state);
                let c = centers[state];
                mats.push(Mat::from_fn(n, n, |i, j| {
                    if i == j {
                        1.0
                    } else {
                        c + rng.gen_range(-0.05..0.05)
                    }
                }));
            }
            data.push((format!("s{s}"), mats));
        }
        (data, truth)
    }

    #[test]
    fn planted_blobs_recovered_exactly() {
        let (data, truth) = blob_dataset();
        let result = kmeans_states(&data, 3, 10, 3).unwrap();
        let flat: Vec<usize> = result
            .assignments
            .iter()
            .flat_map(|a| a.states.iter().copied())
            .collect();
        assert_eq!(adjusted_rand_index(&flat, &truth), 1.0);
    }

    #[test]
    fn k_equal_one_gives_global_mean() {
        let (data, _) = blob_dataset();
        let result = kmeans_states(&data, 1, 3, 0).unwrap();
        let mut mean = vec![0.0; result.centroids[0].len()];
        let mut count = 0.0;
        for (_, mats) in &data {
            for m in mats {
                for (acc, v) in mean.iter_mut().zip(m.upper_triangle()) {
                    *acc += v;
                }
                count += 1.0;
            }
        }
        for v in &mut mean {
            *v /= count;
        }
        for (a, b) in result.centroids[0].iter().zip(&mean) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn kmeans_errors_when_fewer_samples_than_clusters() {
        let data = vec![("a".to_string(), vec![Mat::<f64>::zeros(3, 3)])];
        assert!(matches!(
            kmeans_states(&data, 3, 5, 0),
            Err(StateAnalysisError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let (data, _) = blob_dataset();
        let a = kmeans_states(&data, 3, 20, 7).unwrap();
        let b = kmeans_states(&data, 3, 20, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_labels_by_descending_size() {
        let (data, _) = blob_dataset();
        let result = kmeans_states(&data, 3, 10, 1).unwrap();
        let mut counts = [0usize; 3];
        for a in &result.assignments {
            for &s in &a.states {
                counts[s] += 1;
            }
        }
        assert!(counts[0] >= counts[1] && counts[1] >= counts[2]);
    }

    #[test]
    fn constant_sequence_transition() {
        let a = vec![StateAssignment {
            subject_id: "x".into(),
            states: vec![0, 0, 0],
        }];
        let t = transition_matrix(&a, 3).unwrap();
        assert_eq!(t.p[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(t.empty_rows, vec![1, 2]);
        for row in &t.p {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn alternating_sequence_transition() {
        let a = vec![StateAssignment {
            subject_id: "x".into(),
            states: vec![0, 1, 0, 1],
        }];
        let t = transition_matrix(&a, 2).unwrap();
        assert_eq!(t.p[0][1], 1.0);
        assert_eq!(t.p[1][0], 1.0);
        assert!(t.empty_rows.is_empty());
    }

    #[test]
    fn switch_rates_and_histogram() {
        let mk = |states: Vec<usize>| StateAssignment {
            subject_id: "s".into(),
            states,
        };
        let rates = transition_rate_distribution(&[
            mk(vec![0, 0, 0]),
            mk(vec![0, 1, 0, 1, 0]),
            mk(vec![0, 0, 1, 1, 2]),
        ])
        .unwrap();
        assert_eq!(rates.per_subject[0].1, 0.0);
        assert_eq!(rates.per_subject[1].1, 1.0);
        assert_eq!(rates.per_subject[2].1, 0.5);
        assert_eq!(rates.histogram[0], 1);
        assert_eq!(rates.histogram[9], 1);
        assert_eq!(rates.histogram[5], 1);
        assert_eq!(rates.histogram.iter().sum::<usize>(), 3);
    }

    #[test]
    fn ari_of_identical_and_permuted_labelings() {
        let a = vec![0, 0, 1, 1, 2, 2];
        let b = vec![2, 2, 0, 0, 1, 1];
        assert_eq!(adjusted_rand_index(&a, &a), 1.0);
        assert_eq!(adjusted_rand_index(&a, &b), 1.0);
        let c = vec![0, 1, 0, 1, 0, 1];
        assert!(adjusted_rand_index(&a, &c) < 0.5);
    }
}
