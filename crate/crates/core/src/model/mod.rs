//! The probabilistic recurrent graph autoencoder: conditional Gaussian
//! prior, attention-GNN encoder, spatial-aware GRU, reparameterized
//! sampling, inner-product decoder, and the per-step reconstruction and
//! divergence losses.

mod attention;
mod rollout;

pub use attention::{attention_layer, AttentionTensors};
pub use rollout::{
    bce_loss, decode_adjacency, encode, feature_x, feature_z, kld_loss, prior_net, reparameterize,
    reparameterize_seeded, rollout, spatial_gru, Rollout,
};

use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
}

/// How edge features enter the attention message passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFeatureMode {
    /// No edge features; the W5 term is absent.
    Off,
    /// The pre-threshold correlation weight of each edge as a scalar feature.
    #[default]
    CorrelationScalar,
}

/// Which adjacency entries the reconstruction loss covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BceMode {
    /// All off-diagonal entries.
    #[default]
    Full,
    /// Only entries with an edge present.
    PositiveOnly,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub gru_dim: usize,
    pub encoder_hidden_dim: usize,
    pub feature_x_dim: usize,
    pub feature_z_dim: usize,
    pub classifier_hidden_dim: usize,
    pub num_classes: usize,
    pub particles: usize,
    pub edge_feature_mode: EdgeFeatureMode,
    pub bce_mode: BceMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            gru_dim: 16,
            encoder_hidden_dim: 32,
            feature_x_dim: 64,
            feature_z_dim: 8,
            classifier_hidden_dim: 32,
            num_classes: 2,
            particles: 1,
            edge_feature_mode: EdgeFeatureMode::default(),
            bce_mode: BceMode::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("latent_dim", self.latent_dim),
            ("gru_dim", self.gru_dim),
            ("encoder_hidden_dim", self.encoder_hidden_dim),
            ("feature_x_dim", self.feature_x_dim),
            ("feature_z_dim", self.feature_z_dim),
            ("classifier_hidden_dim", self.classifier_hidden_dim),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.particles == 0 {
            return Err(ModelError::BadConfig("particles must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of the flattened readout vector for `n` nodes.
    pub fn readout_len(&self, n_nodes: usize) -> usize {
        n_nodes * (self.latent_dim + self.gru_dim)
    }
}

/// Weights of one affine map, applied as `x * w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams<F> {
    pub w: Mat<F>,
    pub b: Mat<F>,
}

/// Weights of one attention message-passing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<F> {
    pub w1: Mat<F>,
    pub w2: Mat<F>,
    pub w3: Mat<F>,
    pub w4: Mat<F>,
    /// Edge-feature projection; present only with scalar edge features.
    pub w5: Option<Mat<F>>,
    pub bias: Mat<F>,
}

/// Every learnable weight of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub feature_x: AffineParams<F>,
    pub feature_z: AffineParams<F>,
    pub prior: AffineParams<F>,
    pub encoder1: AttentionParams<F>,
    pub encoder2: AttentionParams<F>,
    pub gru_xz: AttentionParams<F>,
    pub gru_hz: AttentionParams<F>,
    pub gru_xr: AttentionParams<F>,
    pub gru_hr: AttentionParams<F>,
    pub gru_xh: AttentionParams<F>,
    pub gru_hh: AttentionParams<F>,
    pub classifier1: AffineParams<F>,
    pub classifier2: AffineParams<F>,
    pub n_nodes: usize,
}

impl<F: Scalar> ModelParams<F> {
    /// Xavier-uniform initialization, deterministic in the seed. Biases
    /// start at zero.
    pub fn init(cfg: &ModelConfig, n_nodes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edge = cfg.edge_feature_mode == EdgeFeatureMode::CorrelationScalar;
        let affine = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize| AffineParams {
            w: xavier(rng, fan_in, fan_out),
            b: Mat::zeros(1, fan_out),
        };
        let attn = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize| AttentionParams {
            w1: xavier(rng, fan_in, fan_out),
            w2: xavier(rng, fan_in, fan_out),
            w3: xavier(rng, fan_in, fan_out),
            w4: xavier(rng, fan_in, fan_out),
            w5: if edge {
                Some(xavier(rng, 1, fan_out))
            } else {
                None
            },
            bias: Mat::zeros(1, fan_out),
        };
        let enc_in = cfg.feature_x_dim + cfg.gru_dim;
        let gru_x_in = cfg.feature_x_dim + cfg.feature_z_dim;
        Self {
            feature_x: affine(&mut rng, n_nodes, cfg.feature_x_dim),
            feature_z: affine(&mut rng, cfg.latent_dim, cfg.feature_z_dim),
            prior: affine(&mut rng, cfg.gru_dim, 2 * cfg.latent_dim),
            encoder1: attn(&mut rng, enc_in, cfg.encoder_hidden_dim),
            encoder2: attn(&mut rng, cfg.encoder_hidden_dim, 2 * cfg.latent_dim),
            gru_xz: attn(&mut rng, gru_x_in, cfg.gru_dim),
            gru_hz: attn(&mut rng, cfg.gru_dim, cfg.gru_dim),
            gru_xr: attn(&mut rng, gru_x_in, cfg.gru_dim),
            gru_hr: attn(&mut rng, cfg.gru_dim, cfg.gru_dim),
            gru_xh: attn(&mut rng, gru_x_in, cfg.gru_dim),
            gru_hh: attn(&mut rng, cfg.gru_dim, cfg.gru_dim),
            classifier1: affine(&mut rng, cfg.readout_len(n_nodes), cfg.classifier_hidden_dim),
            classifier2: affine(&mut rng, cfg.classifier_hidden_dim, cfg.num_classes),
            n_nodes,
        }
    }

    /// Named parameter matrices in canonical order.
    pub fn flat(&self) -> Vec<(String, &Mat<F>)> {
        let mut out = Vec::new();
        fn affine<'a, F>(
            prefix: &str,
            a: &'a AffineParams<F>,
            out: &mut Vec<(String, &'a Mat<F>)>,
        ) {
            out.push((format!("{prefix}.w"), &a.w));
            out.push((format!("{prefix}.b"), &a.b));
        }
        fn attn<'a, F>(
            prefix: &str,
            a: &'a AttentionParams<F>,
            out: &mut Vec<(String, &'a Mat<F>)>,
        ) {
            out.push((format!("{prefix}.w1"), &a.w1));
            out.push((format!("{prefix}.w2"), &a.w2));
            out.push((format!("{prefix}.w3"), &a.w3));
            out.push((format!("{prefix}.w4"), &a.w4));
            if let Some(w5) = &a.w5 {
                out.push((format!("{prefix}.w5"), w5));
            }
            out.push((format!("{prefix}.bias"), &a.bias));
        }
        affine("feature_x", &self.feature_x, &mut out);
        affine("feature_z", &self.feature_z, &mut out);
        affine("prior", &self.prior, &mut out);
        attn("encoder.0", &self.encoder1, &mut out);
        attn("encoder.1", &self.encoder2, &mut out);
        attn("gru.xz", &self.gru_xz, &mut out);
        attn("gru.hz", &self.gru_hz, &mut out);
        attn("gru.xr", &self.gru_xr, &mut out);
        attn("gru.hr", &self.gru_hr, &mut out);
        attn("gru.xh", &self.gru_xh, &mut out);
        attn("gru.hh", &self.gru_hh, &mut out);
        affine("classifier.0", &self.classifier1, &mut out);
        affine("classifier.1", &self.classifier2, &mut out);
        out
    }

    /// Mutable view of the parameter matrices, in the same canonical order.
    pub fn flat_mut(&mut self) -> Vec<(String, &mut Mat<F>)> {
        let mut out: Vec<(String, &mut Mat<F>)> = Vec::new();
        fn affine<'a, F>(
            prefix: &str,
            a: &'a mut AffineParams<F>,
            out: &mut Vec<(String, &'a mut Mat<F>)>,
        ) {
            out.push((format!("{prefix}.w"), &mut a.w));
            out.push((format!("{prefix}.b"), &mut a.b));
        }
        fn attn<'a, F>(
            prefix: &str,
            a: &'a mut AttentionParams<F>,
            out: &mut Vec<(String, &'a mut Mat<F>)>,
        ) {
            out.push((format!("{prefix}.w1"), &mut a.w1));
            out.push((format!("{prefix}.w2"), &mut a.w2));
            out.push((format!("{prefix}.w3"), &mut a.w3));
            out.push((format!("{prefix}.w4"), &mut a.w4));
            if let Some(w5) = &mut a.w5 {
                out.push((format!("{prefix}.w5"), w5));
            }
            out.push((format!("{prefix}.bias"), &mut a.bias));
        }
        affine("feature_x", &mut self.feature_x, &mut out);
        affine("feature_z", &mut self.feature_z, &mut out);
        affine("prior", &mut self.prior, &mut out);
        attn("encoder.0", &mut self.encoder1, &mut out);
        attn("encoder.1", &mut self.encoder2, &mut out);
        attn("gru.xz", &mut self.gru_xz, &mut out);
        attn("gru.hz", &mut self.gru_hz, &mut out);
        attn("gru.xr", &mut self.gru_xr, &mut out);
        attn("gru.hr", &mut self.gru_hr, &mut out);
        attn("gru.xh", &mut self.gru_xh, &mut out);
        attn("gru.hh", &mut self.gru_hh, &mut out);
        affine("classifier.0", &mut self.classifier1, &mut out);
        affine("classifier.1", &mut self.classifier2, &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.flat().iter().map(|(_, m)| m.as_slice().len()).sum()
    }
}

/// True for parameters of the classifier head (the tau group); everything
/// else belongs to the autoencoder side (theta, vartheta).
pub fn is_classifier_param(name: &str) -> bool {
    name.starts_with("classifier")
}

fn xavier<F: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut data = Vec::with_capacity(fan_in * fan_out);
    for _ in 0..fan_in * fan_out {
        data.push(F::of(rng.gen_range(-limit..limit)));
    }
    Mat::from_vec(fan_in, fan_out, data)
}

/// Affine weights bound to a tape.
pub struct AffineTensors<F: Scalar> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

/// The full parameter set bound to a tape for one forward/backward pass.
pub struct ModelTensors<F: Scalar> {
    pub feature_x: AffineTensors<F>,
    pub feature_z: AffineTensors<F>,
    pub prior: AffineTensors<F>,
    pub encoder1: AttentionTensors<F>,
    pub encoder2: AttentionTensors<F>,
    pub gru_xz: AttentionTensors<F>,
    pub gru_hz: AttentionTensors<F>,
    pub gru_xr: AttentionTensors<F>,
    pub gru_hr: AttentionTensors<F>,
    pub gru_xh: AttentionTensors<F>,
    pub gru_hh: AttentionTensors<F>,
    pub classifier1: AffineTensors<F>,
    pub classifier2: AffineTensors<F>,
}

impl<F: Scalar> ModelTensors<F> {
    /// Copies parameter values onto the tape; with `trainable` they are
    /// differentiable leaves, otherwise constants.
    pub fn bind(tape: &Tape<F>, params: &ModelParams<F>, trainable: bool) -> Self {
        let lift = |m: &Mat<F>| -> Tensor<F> {
            let shape = [m.rows(), m.cols()];
            if trainable {
                tape.leaf(&shape, m.as_slice().to_vec())
            } else {
                tape.constant(&shape, m.as_slice().to_vec())
            }
        };
        let affine = |a: &AffineParams<F>| AffineTensors {
            w: lift(&a.w),
            b: lift(&a.b),
        };
        let attn = |a: &AttentionParams<F>| AttentionTensors {
            w1: lift(&a.w1),
            w2: lift(&a.w2),
            w3: lift(&a.w3),
            w4: lift(&a.w4),
            w5: a.w5.as_ref().map(&lift),
            bias: lift(&a.bias),
        };
        Self {
            feature_x: affine(&params.feature_x),
            feature_z: affine(&params.feature_z),
            prior: affine(&params.prior),
            encoder1: attn(&params.encoder1),
            encoder2: attn(&params.encoder2),
            gru_xz: attn(&params.gru_xz),
            gru_hz: attn(&params.gru_hz),
            gru_xr: attn(&params.gru_xr),
            gru_hr: attn(&params.gru_hr),
            gru_xh: attn(&params.gru_xh),
            gru_hh: attn(&params.gru_hh),
            classifier1: affine(&params.classifier1),
            classifier2: affine(&params.classifier2),
        }
    }

    /// Tensor handles in the same canonical order as [`ModelParams::flat`].
    pub fn flat(&self) -> Vec<(String, Tensor<F>)> {
        let mut out: Vec<(String, Tensor<F>)> = Vec::new();
        let affine = |prefix: &str, a: &AffineTensors<F>, out: &mut Vec<(String, Tensor<F>)>| {
            out.push((format!("{prefix}.w"), a.w.clone()));
            out.push((format!("{prefix}.b"), a.b.clone()));
        };
        let attn = |prefix: &str, a: &AttentionTensors<F>, out: &mut Vec<(String, Tensor<F>)>| {
            out.push((format!("{prefix}.w1"), a.w1.clone()));
            out.push((format!("{prefix}.w2"), a.w2.clone()));
            out.push((format!("{prefix}.w3"), a.w3.clone()));
            out.push((format!("{prefix}.w4"), a.w4.clone()));
            if let Some(w5) = &a.w5 {
                out.push((format!("{prefix}.w5"), w5.clone()));
            }
            out.push((format!("{prefix}.bias"), a.bias.clone()));
        };
        affine("feature_x", &self.feature_x, &mut out);
        affine("feature_z", &self.feature_z, &mut out);
        affine("prior", &self.prior, &mut out);
        attn("encoder.0", &self.encoder1, &mut out);
        attn("encoder.1", &self.encoder2, &mut out);
        attn("gru.xz", &self.gru_xz, &mut out);
        attn("gru.hz", &self.gru_hz, &mut out);
        attn("gru.xr", &self.gru_xr, &mut out);
        attn("gru.hr", &self.gru_hr, &mut out);
        attn("gru.xh", &self.gru_xh, &mut out);
        attn("gru.hh", &self.gru_hh, &mut out);
        affine("classifier.0", &self.classifier1, &mut out);
        affine("classifier.1", &self.classifier2, &mut out);
        out
    }

    /// Gradients aligned with the canonical parameter order; `None` for
    /// parameters the loss never touched.
    pub fn grads(&self) -> Vec<(String, Option<Vec<F>>)> {
        self.flat()
            .into_iter()
            .map(|(name, t)| {
                let g = t.grad();
                (name, g)
            })
            .collect()
    }
}

/// Per-node Gaussian parameters (mean and strictly positive standard
/// deviation), bound to a tape.
pub struct GaussianParams<F: Scalar> {
    pub mu: Tensor<F>,
    pub sigma: Tensor<F>,
}

/// Memory-embedding recurrent state carried by the spatial GRU.
pub struct RecurrentState<F: Scalar> {
    pub h: Tensor<F>,
}

/// A sampled latent embedding matrix.
pub struct LatentState<F: Scalar> {
    pub z: Tensor<F>,
    pub particle: usize,
}

/// Loss components of one forward pass; `total = bce + kld + ce`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub kld: f64,
    pub ce: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(bce: f64, kld: f64, ce: f64) -> Self {
        Self {
            bce,
            kld,
            ce,
            total: bce + kld + ce,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bce.is_finite() && self.kld.is_finite() && self.ce.is_finite()
    }
}

/// Standard-normal draws for the reparameterization trick, fixed ahead of a
/// rollout so that a forward pass is a deterministic function of parameters.
pub struct RolloutNoise<F> {
    /// eps[t][k] is the N x latent_dim draw for step t, particle k.
    pub eps: Vec<Vec<Mat<F>>>,
}

impl<F: Scalar> RolloutNoise<F> {
    pub fn from_seed(seed: u64, steps: usize, particles: usize, n: usize, latent: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = (0..steps)
            .map(|_| {
                (0..particles)
                    .map(|_| {
                        Mat::from_fn(n, latent, |_, _| F::of(rng.sample::<f64, _>(StandardNormal)))
                    })
                    .collect()
            })
            .collect();
        Self { eps }
    }

    /// All-zero noise: the latent collapses to the posterior mean.
    pub fn zeros(steps: usize, particles: usize, n: usize, latent: usize) -> Self {
        Self {
            eps: (0..steps)
                .map(|_| (0..particles).map(|_| Mat::zeros(n, latent)).collect())
                .collect(),
        }
    }

    /// Applies a node permutation to every draw.
    pub fn permute_rows(&self, p: &[usize]) -> Self {
        Self {
            eps: self
                .eps
                .iter()
                .map(|ks| ks.iter().map(|m| m.permute_rows(p)).collect())
                .collect(),
        }
    }
}

/// Boolean neighbor mask from a 0/1 adjacency matrix.
pub fn adjacency_mask<F: Scalar>(adj: &Mat<F>) -> Vec<bool> {
    adj.as_slice().iter().map(|&x| x != F::zero()).collect()
}

/// One-hot label vector.
pub fn one_hot<F: Scalar>(label: usize, num_classes: usize) -> Vec<F> {
    assert!(label < num_classes, "label {label} out of range");
    let mut v = vec![F::zero(); num_classes];
    v[label] = F::one();
    v
}
