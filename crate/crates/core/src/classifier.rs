//! Final-time readout and the subject-level classifier.
//!
//! The readout row-concatenates the final posterior mean with the
//! particle-mean recurrent state and flattens it row-major; a two-layer
//! network maps it to class logits.

use crate::model::{AffineTensors, GaussianParams, RecurrentState};
use crate::scalar::Scalar;
use crate::tensor::{cross_entropy_with_logits, Tensor};
use serde::{Deserialize, Serialize};

/// Flattened subject-level readout `vec([mu_T, mean_k H_T^k])`.
pub fn readout<F: Scalar>(
    final_posterior: &GaussianParams<F>,
    final_states: &[&RecurrentState<F>],
) -> Tensor<F> {
    assert!(
        !final_states.is_empty(),
        "readout: empty particle list (contract error)"
    );
    let m = final_states.len();
    let mut h_mean = final_states[0].h.clone();
    for s in &final_states[1..] {
        h_mean = h_mean.add(&s.h);
    }
    if m > 1 {
        h_mean = h_mean.scale(F::of(1.0 / m as f64));
    }
    let joined = final_posterior.mu.concat_cols(&h_mean);
    let len = joined.len();
    joined.reshape(&[1, len])
}

/// Two affine layers with a tanh between, producing `[1, C]` logits.
pub fn classify<F: Scalar>(
    readout: &Tensor<F>,
    layer1: &AffineTensors<F>,
    layer2: &AffineTensors<F>,
) -> Tensor<F> {
    let hidden = readout.matmul(&layer1.w).add(&layer1.b).tanh();
    hidden.matmul(&layer2.w).add(&layer2.b)
}

/// Positive multi-class cross entropy `-sum_i c_i log softmax(y)_i`.
pub fn ce_loss<F: Scalar>(logits: &Tensor<F>, label_one_hot: &[F]) -> Tensor<F> {
    cross_entropy_with_logits(logits, label_one_hot)
}

/// A subject-level prediction from raw logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Argmax of the logits; ties break to the lower index.
    pub predicted_class: usize,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        assert!(!logits.is_empty(), "prediction needs at least one logit");
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|y| (y - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let probabilities: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        let mut predicted_class = 0;
        for (i, &y) in logits.iter().enumerate() {
            if y > logits[predicted_class] {
                predicted_class = i;
            }
        }
        Self {
            logits,
            probabilities,
            predicted_class,
        }
    }

    /// Probability mass on the positive class (index 1).
    pub fn prob_positive(&self) -> f64 {
        self.probabilities[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use approx::assert_relative_eq;

    #[test]
    fn readout_particle_mean_single() {
        let tape: Tape<f64> = Tape::new();
        let g = GaussianParams {
            mu: tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]),
            sigma: tape.constant(&[2, 2], vec![1.0; 4]),
        };
        let h = RecurrentState {
            h: tape.constant(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]),
        };
        let r = readout(&g, &[&h]);
        // Row-major flatten of [[1,2,5,6],[3,4,7,8]].
        assert_eq!(r.values(), vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        assert_eq!(r.shape(), vec![1, 8]);
    }

    #[test]
    fn readout_opposite_particles_cancel() {
        let tape: Tape<f64> = Tape::new();
        let g = GaussianParams {
            mu: tape.constant(&[2, 1], vec![0.5, -0.5]),
            sigma: tape.constant(&[2, 1], vec![1.0; 2]),
        };
        let h1 = RecurrentState {
            h: tape.constant(&[2, 1], vec![3.0, -2.0]),
        };
        let h2 = RecurrentState {
            h: tape.constant(&[2, 1], vec![-3.0, 2.0]),
        };
        let r = readout(&g, &[&h1, &h2]);
        assert_eq!(r.values(), vec![0.5, 0.0, -0.5, 0.0]);
    }

    #[test]
    #[should_panic(expected = "empty particle list")]
    fn readout_rejects_empty_particles() {
        let tape: Tape<f64> = Tape::new();
        let g = GaussianParams {
            mu: tape.constant(&[1, 1], vec![0.0]),
            sigma: tape.constant(&[1, 1], vec![1.0]),
        };
        let _ = readout(&g, &[]);
    }

    #[test]
    fn zero_classifier_gives_uniform_probabilities() {
        let tape: Tape<f64> = Tape::new();
        let r = tape.constant(&[1, 4], vec![0.3, -0.4, 0.9, 0.0]);
        let l1 = AffineTensors {
            w: tape.constant(&[4, 3], vec![0.0; 12]),
            b: tape.constant(&[1, 3], vec![0.0; 3]),
        };
        let l2 = AffineTensors {
            w: tape.constant(&[3, 2], vec![0.0; 6]),
            b: tape.constant(&[1, 2], vec![0.0; 2]),
        };
        let logits = classify(&r, &l1, &l2);
        assert_eq!(logits.values(), vec![0.0, 0.0]);
        let pred = Prediction::from_logits(logits.values());
        assert_eq!(pred.probabilities, vec![0.5, 0.5]);
        assert_eq!(pred.predicted_class, 0);
    }

    #[test]
    fn hand_softmax_two_zero() {
        let pred = Prediction::from_logits(vec![2.0, 0.0]);
        assert_relative_eq!(pred.probabilities[0], 0.8807970779778823, epsilon = 1e-10);
        assert_relative_eq!(pred.probabilities[1], 0.11920292202211755, epsilon = 1e-10);
        assert_eq!(pred.predicted_class, 0);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = Prediction::from_logits(vec![0.7, -1.1, 0.2]);
        let b = Prediction::from_logits(vec![0.7 + 13.5, -1.1 + 13.5, 0.2 + 13.5]);
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        assert_eq!(a.predicted_class, b.predicted_class);
    }

    #[test]
    fn ce_uniform_is_ln2_and_saturated_is_tiny() {
        let tape: Tape<f64> = Tape::new();
        let uniform = tape.constant(&[1, 2], vec![0.0, 0.0]);
        let loss = ce_loss(&uniform, &[0.0, 1.0]);
        assert_relative_eq!(loss.item(), std::f64::consts::LN_2, epsilon = 1e-12);

        let saturated = tape.constant(&[1, 2], vec![50.0, 0.0]);
        assert!(ce_loss(&saturated, &[1.0, 0.0]).item() < 1e-20);
    }

    #[test]
    fn ce_matches_naive_oracle_on_random_logits() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tape: Tape<f64> = Tape::new();
        for _ in 0..100 {
            let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let label = rng.gen_range(0..4usize);
            let t = tape.constant(&[1, 4], logits.clone());
            let mut one_hot = vec![0.0; 4];
            one_hot[label] = 1.0;
            let loss = ce_loss(&t, &one_hot).item();
            let denom: f64 = logits.iter().map(|y| y.exp()).sum();
            let naive = -(logits[label].exp() / denom).ln();
            assert_relative_eq!(loss, naive, epsilon = 1e-12);
        }
    }

    #[test]
    fn readout_gradient_reaches_embeddings() {
        let tape: Tape<f64> = Tape::new();
        let mu = tape.leaf(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]);
        let h = tape.leaf(&[2, 1], vec![0.5, 0.6]);
        let g = GaussianParams {
            mu: mu.clone(),
            sigma: tape.constant(&[2, 2], vec![1.0; 4]),
        };
        let state = RecurrentState { h: h.clone() };
        let r = readout(&g, &[&state]);
        let l1 = AffineTensors {
            w: tape.constant(&[6, 2], (0..12).map(|i| 0.1 * i as f64).collect()),
            b: tape.constant(&[1, 2], vec![0.0; 2]),
        };
        let l2 = AffineTensors {
            w: tape.constant(&[2, 2], vec![0.4, -0.3, 0.2, 0.1]),
            b: tape.constant(&[1, 2], vec![0.0; 2]),
        };
        let logits = classify(&r, &l1, &l2);
        let loss = ce_loss(&logits, &[1.0, 0.0]);
        loss.backward();
        assert!(mu.grad().unwrap().iter().any(|&g| g != 0.0));
        assert!(h.grad().unwrap().iter().any(|&g| g != 0.0));
    }
}
