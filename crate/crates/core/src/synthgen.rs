//! Synthetic labeled dynamic-graph generator with planted class and state
//! structure, used as ground truth for desk-scale benchmarks.
//!
//! Each class owns one half of the nodes and lights up that half as a
//! persistent community (disjoint block supports between the classes). On
//! top of that, a per-class Markov chain walks over `k_states` brain
//! states; the states are global node blocks shared by both classes, so
//! states of different subjects are directly comparable and pooled
//! clustering can recover them. Weight matrices are block templates plus
//! symmetric Gaussian noise; adjacency comes from the same proportional
//! thresholding the real pipeline uses, and node features are the weight
//! rows.

use crate::dynconn::{proportional_threshold, DynamicGraphSequence, RoiTimeSeries, WindowSpec};
use crate::mat::Mat;
use crate::state_analysis::StateAssignment;
use crate::trainer::mix3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_nodes: usize,
    pub n_subjects_per_class: usize,
    /// Sequence index bound T; every subject gets T + 1 graphs.
    pub t_max: usize,
    /// Planted states per class.
    pub k_states: usize,
    pub noise_std: f64,
    pub keep_fraction: f64,
    /// Off-diagonal background weight.
    pub base_weight: f64,
    /// Always-on intra-class-community weight.
    pub class_weight: f64,
    /// Weight inside the active state's sub-block.
    pub active_weight: f64,
    /// Per-class K x K row-stochastic state transition matrices.
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let k = 3;
        Self {
            n_nodes: 30,
            n_subjects_per_class: 20,
            t_max: 8,
            k_states: k,
            noise_std: 0.05,
            keep_fraction: 0.40,
            base_weight: 0.05,
            class_weight: 0.30,
            active_weight: 0.90,
            transitions: vec![sticky_chain(k, 0.8); 2],
            seed: 0,
        }
    }
}

/// Row-stochastic chain that stays with probability `stay` and spreads the
/// rest uniformly.
pub fn sticky_chain(k: usize, stay: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if k == 1 {
                        1.0
                    } else if i == j {
                        stay
                    } else {
                        (1.0 - stay) / (k - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_nodes < 2 * self.k_states.max(1) {
            return Err(SynthError::BadSpec(format!(
                "{} nodes cannot host {} states per class half",
                self.n_nodes, self.k_states
            )));
        }
        if self.n_subjects_per_class == 0 {
            return Err(SynthError::BadSpec("need at least one subject per class".into()));
        }
        if self.k_states == 0 {
            return Err(SynthError::BadSpec("k_states must be >= 1".into()));
        }
        if self.noise_std < 0.0 {
            return Err(SynthError::BadSpec("noise_std must be >= 0".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(SynthError::BadSpec("keep_fraction must be in (0, 1]".into()));
        }
        if self.transitions.len() != 2 {
            return Err(SynthError::BadSpec(
                "transitions must hold one matrix per class".into(),
            ));
        }
        for (c, t) in self.transitions.iter().enumerate() {
            if t.len() != self.k_states || t.iter().any(|row| row.len() != self.k_states) {
                return Err(SynthError::BadSpec(format!(
                    "class {c} transition matrix is not {0} x {0}",
                    self.k_states
                )));
            }
            for (i, row) in t.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                    return Err(SynthError::BadSpec(format!(
                        "class {c} transition row {i} is not a probability vector"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Node range owned by a class (the community that stays on for all of
    /// that class's subjects).
    pub fn class_range(&self, class: usize) -> std::ops::Range<usize> {
        let half = self.n_nodes / 2;
        if class == 0 {
            0..half
        } else {
            half..self.n_nodes
        }
    }

    /// Global node block that lights up in a given state, shared by both
    /// classes.
    pub fn state_range(&self, state: usize) -> std::ops::Range<usize> {
        let per = self.n_nodes / self.k_states;
        let start = state * per;
        let end = if state + 1 == self.k_states {
            self.n_nodes
        } else {
            start + per
        };
        start..end
    }

    /// Noise-free weight template for (class, state). State pairs dominate
    /// class pairs, which dominate the background.
    pub fn template(&self, class: usize, state: usize) -> Mat<f64> {
        let class_r = self.class_range(class);
        let state_r = self.state_range(state);
        Mat::from_fn(self.n_nodes, self.n_nodes, |i, j| {
            if i == j {
                1.0
            } else if state_r.contains(&i) && state_r.contains(&j) {
                self.active_weight
            } else if class_r.contains(&i) && class_r.contains(&j) {
                self.class_weight
            } else {
                self.base_weight
            }
        })
    }
}

/// Samples a state path of the given length from a class's chain.
pub fn sample_state_path(
    transitions: &[Vec<f64>],
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let k = transitions.len();
    let mut path = Vec::with_capacity(len);
    let mut state = rng.gen_range(0..k);
    for _ in 0..len {
        path.push(state);
        let row = &transitions[state];
        let mut u: f64 = rng.gen();
        let mut next = k - 1;
        for (j, &p) in row.iter().enumerate() {
            if u < p {
                next = j;
                break;
            }
            u -= p;
        }
        state = next;
    }
    path
}

/// Generates the dataset along with the planted per-subject state paths.
pub fn generate(
    spec: &SynthSpec,
) -> Result<(Vec<DynamicGraphSequence<f64>>, Vec<StateAssignment>), SynthError> {
    spec.validate()?;
    let n = spec.n_nodes;
    let mut sequences = Vec::with_capacity(2 * spec.n_subjects_per_class);
    let mut truth = Vec::with_capacity(2 * spec.n_subjects_per_class);
    for class in 0..2usize {
        for s in 0..spec.n_subjects_per_class {
            let subject_id = format!("synth_c{class}_s{s:03}");
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix3(spec.seed, class as u64, s as u64));
            let path = sample_state_path(&spec.transitions[class], spec.t_max + 1, &mut rng);
            let mut adjacency = Vec::with_capacity(spec.t_max + 1);
            let mut weights = Vec::with_capacity(spec.t_max + 1);
            for &state in &path {
                let mut w = spec.template(class, state);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let noisy =
                            w.at(i, j) + spec.noise_std * rng.sample::<f64, _>(StandardNormal);
                        *w.at_mut(i, j) = noisy;
                        *w.at_mut(j, i) = noisy;
                    }
                }
                let adj = proportional_threshold(&w, spec.keep_fraction)
                    .expect("template construction is symmetric");
                for i in 0..n {
                    *w.at_mut(i, i) = 0.0;
                }
                adjacency.push(adj);
                weights.push(w);
            }
            sequences.push(DynamicGraphSequence {
                subject_id: subject_id.clone(),
                adjacency,
                features: weights.clone(),
                weights,
                label: class,
            });
            truth.push(StateAssignment {
                subject_id,
                states: path,
            });
        }
    }
    Ok((sequences, truth))
}

/// Emits ROI time series whose windowed correlations carry the same planted
/// class/state design, so the full CSV -> graphs -> training pipeline can
/// run on synthetic input. Sample t takes the state of the window starting
/// at the largest multiple of `window.stride` at or before it.
pub fn emit_timeseries(
    spec: &SynthSpec,
    window: &WindowSpec,
) -> Result<(Vec<RoiTimeSeries<f64>>, Vec<StateAssignment>), SynthError> {
    spec.validate()?;
    let n = spec.n_nodes;
    let count = spec.t_max + 1;
    let t_total = window.length + (count - 1) * window.stride;
    let mut series = Vec::with_capacity(2 * spec.n_subjects_per_class);
    let mut truth = Vec::with_capacity(2 * spec.n_subjects_per_class);
    for class in 0..2usize {
        let class_r = spec.class_range(class);
        for s in 0..spec.n_subjects_per_class {
            let subject_id = format!("synth_c{class}_s{s:03}");
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix3(spec.seed, 0xC5 + class as u64, s as u64));
            let path = sample_state_path(&spec.transitions[class], count, &mut rng);
            let mut data = Mat::zeros(n, t_total);
            for t in 0..t_total {
                let w = (t / window.stride).min(count - 1);
                let state_r = spec.state_range(path[w]);
                let g_class: f64 = rng.sample(StandardNormal);
                let g_state: f64 = rng.sample(StandardNormal);
                for i in 0..n {
                    let mut x = 0.5 * rng.sample::<f64, _>(StandardNormal);
                    if class_r.contains(&i) {
                        x += g_class;
                    }
                    if state_r.contains(&i) {
                        x += g_state;
                    }
                    *data.at_mut(i, t) = x;
                }
            }
            series.push(RoiTimeSeries::new(subject_id.clone(), data, class));
            truth.push(StateAssignment {
                subject_id,
                states: path,
            });
        }
    }
    Ok((series, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynconn::{build_sequence, edge_budget};

    #[test]
    fn default_spec_is_valid() {
        SynthSpec::default().validate().unwrap();
    }

    #[test]
    fn zero_noise_makes_same_class_state_graphs_identical() {
        let spec = SynthSpec {
            noise_std: 0.0,
            n_subjects_per_class: 3,
            t_max: 4,
            ..SynthSpec::default()
        };
        let (seqs, truth) = generate(&spec).unwrap();
        // Find two (subject, step) pairs of the same class and state.
        let mut seen: std::collections::HashMap<(usize, usize), (usize, usize)> =
            std::collections::HashMap::new();
        let mut compared = 0;
        for (si, (seq, t)) in seqs.iter().zip(&truth).enumerate() {
            for (w, &state) in t.states.iter().enumerate() {
                if let Some(&(sj, wj)) = seen.get(&(seq.label, state)) {
                    assert_eq!(seq.adjacency[w], seqs[sj].adjacency[wj]);
                    assert_eq!(seq.weights[w], seqs[sj].weights[wj]);
                    compared += 1;
                } else {
                    seen.insert((seq.label, state), (si, w));
                }
            }
        }
        assert!(compared > 0);
    }

    #[test]
    fn generated_sequences_satisfy_graph_invariants() {
        let spec = SynthSpec {
            n_subjects_per_class: 2,
            t_max: 3,
            ..SynthSpec::default()
        };
        let (seqs, _) = generate(&spec).unwrap();
        let e = spec.n_nodes * (spec.n_nodes - 1) / 2;
        let budget = edge_budget(e, spec.keep_fraction);
        for seq in &seqs {
            assert_eq!(seq.t_max(), 3);
            for t in 0..=seq.t_max() {
                assert!(seq.adjacency[t].is_symmetric());
                assert!(seq.weights[t].is_symmetric());
                let ones: f64 = seq.adjacency[t].upper_triangle().iter().sum();
                assert_eq!(ones as usize, budget);
                for i in 0..spec.n_nodes {
                    assert_eq!(seq.adjacency[t].at(i, i), 0.0);
                    assert_eq!(seq.weights[t].at(i, i), 0.0);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            n_subjects_per_class: 2,
            t_max: 2,
            ..SynthSpec::default()
        };
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn state_path_frequencies_converge_to_chain() {
        let chain = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.3, 0.5, 0.2],
            vec![0.25, 0.25, 0.5],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let path = sample_state_path(&chain, 10_000, &mut rng);
        let mut counts = vec![vec![0.0f64; 3]; 3];
        for w in path.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
        for i in 0..3 {
            let total: f64 = counts[i].iter().sum();
            for j in 0..3 {
                let freq = counts[i][j] / total;
                assert!(
                    (freq - chain[i][j]).abs() < 0.05,
                    "({i},{j}): {freq} vs {}",
                    chain[i][j]
                );
            }
        }
    }

    #[test]
    fn degree_profile_separates_classes_perfectly() {
        let spec = SynthSpec {
            n_subjects_per_class: 10,
            t_max: 4,
            noise_std: 0.01,
            ..SynthSpec::default()
        };
        let (seqs, _) = generate(&spec).unwrap();
        // Mean degree vector per subject, nearest-class-centroid classifier.
        let degree = |seq: &DynamicGraphSequence<f64>| -> Vec<f64> {
            let n = seq.n_nodes();
            let mut d = vec![0.0; n];
            for t in 0..=seq.t_max() {
                for i in 0..n {
                    d[i] += seq.adjacency[t].row(i).iter().sum::<f64>();
                }
            }
            d
        };
        let profiles: Vec<(Vec<f64>, usize)> =
            seqs.iter().map(|s| (degree(s), s.label)).collect();
        let mut centroids = vec![vec![0.0; spec.n_nodes]; 2];
        let mut counts = [0.0; 2];
        for (p, label) in &profiles {
            counts[*label] += 1.0;
            for (c, x) in centroids[*label].iter_mut().zip(p) {
                *c += x;
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            for v in c.iter_mut() {
                *v /= n;
            }
        }
        for (p, label) in &profiles {
            let d0: f64 = p.iter().zip(&centroids[0]).map(|(a, b)| (a - b).powi(2)).sum();
            let d1: f64 = p.iter().zip(&centroids[1]).map(|(a, b)| (a - b).powi(2)).sum();
            let predicted = usize::from(d1 < d0);
            assert_eq!(predicted, *label);
        }
    }

    #[test]
    fn timeseries_mode_feeds_the_graph_builder() {
        let spec = SynthSpec {
            n_nodes: 10,
            n_subjects_per_class: 2,
            t_max: 2,
            k_states: 2,
            transitions: vec![sticky_chain(2, 0.8); 2],
            ..SynthSpec::default()
        };
        let window = WindowSpec::default();
        let (series, _) = emit_timeseries(&spec, &window).unwrap();
        assert_eq!(series.len(), 4);
        for s in &series {
            assert_eq!(s.t_total(), window.length + 2 * window.stride);
            let seq = build_sequence(s, &window).unwrap();
            assert_eq!(seq.t_max(), 2);
        }
    }

    #[test]
    fn rejects_bad_transition_rows() {
        let mut spec = SynthSpec::default();
        spec.transitions[0][0][0] = 0.5;
        assert!(matches!(generate(&spec), Err(SynthError::BadSpec(_))));
    }
}
