//! Forward pass of the recurrent autoencoder over a graph sequence.

use super::attention::attention_layer;
use super::{
    adjacency_mask, AffineTensors, BceMode, EdgeFeatureMode, GaussianParams, LatentState,
    ModelConfig, ModelTensors, RecurrentState, RolloutNoise,
};
use crate::dynconn::DynamicGraphSequence;
use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::tensor::{bce_with_logits, Tape, Tensor};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Measurement feature map `tanh(X w + b)`.
pub fn feature_x<F: Scalar>(x: &Tensor<F>, p: &AffineTensors<F>) -> Tensor<F> {
    x.matmul(&p.w).add(&p.b).tanh()
}

/// State feature map `tanh(Z w + b)`.
pub fn feature_z<F: Scalar>(z: &Tensor<F>, p: &AffineTensors<F>) -> Tensor<F> {
    z.matmul(&p.w).add(&p.b).tanh()
}

/// Conditional prior from the recurrent state: a per-node affine map with
/// identity on the mean half and softplus on the deviation half.
pub fn prior_net<F: Scalar>(
    h: &RecurrentState<F>,
    p: &AffineTensors<F>,
    latent_dim: usize,
) -> GaussianParams<F> {
    let out = h.h.matmul(&p.w).add(&p.b);
    GaussianParams {
        mu: out.slice_cols(0, latent_dim),
        sigma: out.slice_cols(latent_dim, 2 * latent_dim).softplus(),
    }
}

/// Approximate posterior: two attention layers over the concatenation of
/// measurement features and the recurrent state, split into mean and
/// softplus-positive deviation.
pub fn encode<F: Scalar>(
    x_t: &Tensor<F>,
    h_t: &RecurrentState<F>,
    mask: &[bool],
    edge_weights: Option<&Mat<F>>,
    mt: &ModelTensors<F>,
    cfg: &ModelConfig,
) -> GaussianParams<F> {
    let fx = feature_x(x_t, &mt.feature_x);
    encode_from_features(&fx, h_t, mask, edge_weights, mt, cfg)
}

pub(crate) fn encode_from_features<F: Scalar>(
    fx: &Tensor<F>,
    h_t: &RecurrentState<F>,
    mask: &[bool],
    edge_weights: Option<&Mat<F>>,
    mt: &ModelTensors<F>,
    cfg: &ModelConfig,
) -> GaussianParams<F> {
    let input = fx.concat_cols(&h_t.h);
    let hidden = attention_layer(&input, mask, edge_weights, &mt.encoder1);
    let out = attention_layer(&hidden, mask, edge_weights, &mt.encoder2);
    GaussianParams {
        mu: out.slice_cols(0, cfg.latent_dim),
        sigma: out
            .slice_cols(cfg.latent_dim, 2 * cfg.latent_dim)
            .softplus(),
    }
}

/// Spatial-aware GRU step. Gates and candidate are built from six attention
/// layers; the state mixes as `H_t = S (.) H_prev + (1 - S) (.) H_tilde`.
pub fn spatial_gru<F: Scalar>(
    x_in: &Tensor<F>,
    h_prev: &RecurrentState<F>,
    mask: &[bool],
    edge_weights: Option<&Mat<F>>,
    mt: &ModelTensors<F>,
) -> RecurrentState<F> {
    let s = attention_layer(x_in, mask, edge_weights, &mt.gru_xz)
        .add(&attention_layer(&h_prev.h, mask, edge_weights, &mt.gru_hz))
        .sigmoid();
    let r = attention_layer(x_in, mask, edge_weights, &mt.gru_xr)
        .add(&attention_layer(&h_prev.h, mask, edge_weights, &mt.gru_hr))
        .sigmoid();
    let gated = r.mul(&h_prev.h);
    let h_tilde = attention_layer(x_in, mask, edge_weights, &mt.gru_xh)
        .add(&attention_layer(&gated, mask, edge_weights, &mt.gru_hh))
        .tanh();
    let keep = s.mul(&h_prev.h);
    let update = s.neg().add_scalar(F::one()).mul(&h_tilde);
    RecurrentState {
        h: keep.add(&update),
    }
}

/// Reparameterized sample `z = mu + sigma (.) eps` with fixed noise.
pub fn reparameterize<F: Scalar>(
    g: &GaussianParams<F>,
    eps: &Mat<F>,
    particle: usize,
) -> LatentState<F> {
    let tape = g.mu.tape();
    let e = tape.constant(&[eps.rows(), eps.cols()], eps.as_slice().to_vec());
    LatentState {
        z: g.mu.add(&g.sigma.mul(&e)),
        particle,
    }
}

/// Reparameterized sample with noise drawn from a seeded generator.
pub fn reparameterize_seeded<F: Scalar>(g: &GaussianParams<F>, noise_seed: u64) -> LatentState<F> {
    let shape = g.mu.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let eps = Mat::from_fn(shape[0], shape[1], |_, _| {
        F::of(rng.sample::<f64, _>(StandardNormal))
    });
    reparameterize(g, &eps, 0)
}

/// Edge-probability reconstruction: sigmoid of the Gram matrix of the
/// row-concatenated `[z, h]`. Symmetric by construction.
pub fn decode_adjacency<F: Scalar>(z: &LatentState<F>, h: &RecurrentState<F>) -> Tensor<F> {
    let zh = z.z.concat_cols(&h.h);
    zh.matmul_nt(&zh).sigmoid()
}

/// Reconstruction loss of one step's adjacency against the decoded edge
/// probabilities, computed in stabilized logit form. `Full` covers every
/// off-diagonal entry, `PositiveOnly` restricts to present edges.
pub fn bce_loss<F: Scalar>(
    a_true: &Mat<F>,
    z: &LatentState<F>,
    h: &RecurrentState<F>,
    mode: BceMode,
) -> Tensor<F> {
    let n = a_true.rows();
    assert!(a_true.is_symmetric(), "bce_loss: adjacency must be symmetric");
    let zh = z.z.concat_cols(&h.h);
    let logits = zh.matmul_nt(&zh);
    let mut targets = Vec::with_capacity(n * n);
    let mut mask = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let a = a_true.at(i, j);
            targets.push(a);
            let keep = i != j
                && match mode {
                    BceMode::Full => true,
                    BceMode::PositiveOnly => a != F::zero(),
                };
            mask.push(keep);
        }
    }
    bce_with_logits(&logits, &targets, &mask)
}

/// Closed-form KL divergence between diagonal Gaussians,
/// `0.5 sum [ r - log r + (mu_e - mu_p)^2 / s_p^2 - 1 ]` with
/// `r = s_e^2 / s_p^2`. Exactly zero when the distributions coincide.
pub fn kld_loss<F: Scalar>(post: &GaussianParams<F>, prior: &GaussianParams<F>) -> Tensor<F> {
    let count = post.mu.len();
    let ratio = post.sigma.div(&prior.sigma);
    let r = ratio.mul(&ratio);
    let log_r = r.log();
    let diff = post.mu.sub(&prior.mu);
    let quad = diff.mul(&diff).div(&prior.sigma.mul(&prior.sigma));
    r.sub(&log_r)
        .add(&quad)
        .sum()
        .add_scalar(-F::of(count as f64))
        .scale(F::of(0.5))
}

/// Everything a rollout produces: per-step distributions, sampled latents,
/// recurrent-state trajectories per particle, and the summed losses.
pub struct Rollout<F: Scalar> {
    /// Conditional prior at each step (particle-averaged when M > 1).
    pub priors: Vec<GaussianParams<F>>,
    /// Approximate posterior at each step (particle-averaged when M > 1).
    pub posteriors: Vec<GaussianParams<F>>,
    /// latents[t][k]: sampled embedding at step t for particle k.
    pub latents: Vec<Vec<LatentState<F>>>,
    /// states[k][t]: recurrent state trajectory H_0..H_T for particle k.
    pub states: Vec<Vec<RecurrentState<F>>>,
    /// Summed reconstruction loss over steps, particle-averaged.
    pub bce: Tensor<F>,
    /// Summed divergence over steps, particle-averaged.
    pub kld: Tensor<F>,
}

impl<F: Scalar> Rollout<F> {
    /// Final-step recurrent states, one per particle.
    pub fn final_states(&self) -> Vec<&RecurrentState<F>> {
        self.states.iter().map(|traj| traj.last().unwrap()).collect()
    }

    /// Final-step posterior.
    pub fn final_posterior(&self) -> &GaussianParams<F> {
        self.posteriors.last().unwrap()
    }

    /// Posterior-mean embeddings per step as plain matrices.
    pub fn posterior_means(&self) -> Vec<Mat<F>> {
        self.posteriors
            .iter()
            .map(|g| {
                let shape = g.mu.shape();
                Mat::from_vec(shape[0], shape[1], g.mu.values())
            })
            .collect()
    }
}

/// Runs the model over a full graph sequence.
///
/// For each step t: prior from H_t, posterior from (X_t, H_t, A_t), latent
/// sampled per particle, reconstruction and divergence accumulated, then
/// H_{t+1} from the spatial GRU on step-t inputs.
pub fn rollout<F: Scalar>(
    tape: &Tape<F>,
    seq: &DynamicGraphSequence<F>,
    mt: &ModelTensors<F>,
    cfg: &ModelConfig,
    noise: &RolloutNoise<F>,
) -> Rollout<F> {
    let n = seq.n_nodes();
    let t_max = seq.t_max();
    let m = cfg.particles;
    assert!(
        noise.eps.len() > t_max && noise.eps[0].len() >= m,
        "rollout: noise holds {} steps x {} particles, need {} x {m}",
        noise.eps.len(),
        noise.eps.first().map_or(0, Vec::len),
        t_max + 1
    );
    let inv_m = F::of(1.0 / m as f64);

    let mut particle_states: Vec<Vec<RecurrentState<F>>> = (0..m)
        .map(|_| {
            vec![RecurrentState {
                h: tape.constant(&[n, cfg.gru_dim], vec![F::zero(); n * cfg.gru_dim]),
            }]
        })
        .collect();
    let mut priors = Vec::with_capacity(t_max + 1);
    let mut posteriors = Vec::with_capacity(t_max + 1);
    let mut latents: Vec<Vec<LatentState<F>>> = Vec::with_capacity(t_max + 1);
    let mut bce_total: Option<Tensor<F>> = None;
    let mut kld_total: Option<Tensor<F>> = None;

    for t in 0..=t_max {
        let mask = adjacency_mask(&seq.adjacency[t]);
        let edge = match cfg.edge_feature_mode {
            EdgeFeatureMode::CorrelationScalar => Some(&seq.weights[t]),
            EdgeFeatureMode::Off => None,
        };
        let x_t = tape.constant(&[n, n], seq.features[t].as_slice().to_vec());
        let fx = feature_x(&x_t, &mt.feature_x);

        let mut step_priors = Vec::with_capacity(m);
        let mut step_posts = Vec::with_capacity(m);
        let mut step_latents = Vec::with_capacity(m);
        let mut step_bce: Option<Tensor<F>> = None;
        let mut step_kld: Option<Tensor<F>> = None;
        for k in 0..m {
            let h_k = &particle_states[k][t];
            let prior = prior_net(h_k, &mt.prior, cfg.latent_dim);
            let post = encode_from_features(&fx, h_k, &mask, edge, mt, cfg);
            let z = reparameterize(&post, &noise.eps[t][k], k);
            let b = bce_loss(&seq.adjacency[t], &z, h_k, cfg.bce_mode);
            let d = kld_loss(&post, &prior);
            step_bce = Some(match step_bce {
                Some(acc) => acc.add(&b),
                None => b,
            });
            step_kld = Some(match step_kld {
                Some(acc) => acc.add(&d),
                None => d,
            });
            step_priors.push(prior);
            step_posts.push(post);
            step_latents.push(z);
        }
        let mut step_bce = step_bce.unwrap();
        let mut step_kld = step_kld.unwrap();
        if m > 1 {
            step_bce = step_bce.scale(inv_m);
            step_kld = step_kld.scale(inv_m);
        }
        bce_total = Some(match bce_total {
            Some(acc) => acc.add(&step_bce),
            None => step_bce,
        });
        kld_total = Some(match kld_total {
            Some(acc) => acc.add(&step_kld),
            None => step_kld,
        });

        if t < t_max {
            for k in 0..m {
                let fz = feature_z(&step_latents[k].z, &mt.feature_z);
                let x_in = fx.concat_cols(&fz);
                let h_k = &particle_states[k][t];
                let next = spatial_gru(&x_in, h_k, &mask, edge, mt);
                particle_states[k].push(next);
            }
        }

        priors.push(average_gaussians(step_priors, inv_m));
        posteriors.push(average_gaussians(step_posts, inv_m));
        latents.push(step_latents);
    }

    Rollout {
        priors,
        posteriors,
        latents,
        states: std::mem::take(&mut particle_states),
        bce: bce_total.unwrap(),
        kld: kld_total.unwrap(),
    }
}

fn average_gaussians<F: Scalar>(mut gs: Vec<GaussianParams<F>>, inv_m: F) -> GaussianParams<F> {
    if gs.len() == 1 {
        return gs.pop().unwrap();
    }
    let mut mu = gs[0].mu.clone();
    let mut sigma = gs[0].sigma.clone();
    for g in &gs[1..] {
        mu = mu.add(&g.mu);
        sigma = sigma.add(&g.sigma);
    }
    GaussianParams {
        mu: mu.scale(inv_m),
        sigma: sigma.scale(inv_m),
    }
}
