//! Joint end-to-end optimization of the autoencoder and classifier.
//!
//! The classifier parameters always descend the total loss. The autoencoder
//! parameters descend reconstruction + divergence; their cross-entropy path
//! is routed through a gradient-scale layer, so with `adversarial_lambda = 0`
//! they also descend cross entropy (plain joint training) while any positive
//! lambda reverses that path and makes them ascend it.

use crate::classifier::{ce_loss, classify, readout, Prediction};
use crate::dynconn::DynamicGraphSequence;
use crate::model::{
    is_classifier_param, one_hot, rollout, LossBreakdown, ModelConfig, ModelParams, ModelTensors,
    RolloutNoise,
};
use crate::tensor::Tape;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {param} (training aborted)")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss on subject {subject}")]
    NonFiniteLoss { subject: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("subjects disagree on node count: {0} vs {1}")]
    NodeCountMismatch(usize, usize),
    #[error("invalid train config: {0}")]
    BadConfig(String),
}

/// Adam moment hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_weight: f64,
    /// The learning rate anneals linearly to this fraction of its initial
    /// value by the final epoch.
    pub anneal_to_fraction: f64,
    /// Strength of the adversarial reversal on the classifier-loss path
    /// into the autoencoder. Zero disables the reversal entirely: the
    /// cross-entropy gradient then flows into the autoencoder unmodified.
    pub adversarial_lambda: f64,
    /// Ablation switch: instead of reversing only the cross-entropy path,
    /// the autoencoder ascends the full loss.
    pub reverse_full_loss: bool,
    /// Mini-batch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Checkpoint cadence in epochs, consumed by the pipeline front end.
    pub checkpoint_every: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 400,
            l2_weight: 0.01,
            anneal_to_fraction: 0.1,
            adversarial_lambda: 1.0,
            reverse_full_loss: false,
            batch_size: None,
            seed: 0,
            checkpoint_every: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::BadConfig("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if self.adversarial_lambda < 0.0 {
            return Err(TrainError::BadConfig(
                "adversarial_lambda must be >= 0".into(),
            ));
        }
        if !(self.anneal_to_fraction > 0.0 && self.anneal_to_fraction <= 1.0) {
            return Err(TrainError::BadConfig(
                "anneal_to_fraction must be in (0, 1]".into(),
            ));
        }
        if self.l2_weight < 0.0 {
            return Err(TrainError::BadConfig("l2_weight must be >= 0".into()));
        }
        Ok(())
    }

    /// Linearly annealed learning rate for a given epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (1.0 - (1.0 - self.anneal_to_fraction) * frac)
    }
}

/// Backward multiplier on the cross-entropy path into the autoencoder.
fn ce_path_scale(cfg: &TrainConfig) -> f64 {
    if cfg.reverse_full_loss || cfg.adversarial_lambda == 0.0 {
        1.0
    } else {
        -cfg.adversarial_lambda
    }
}

/// Per-parameter Adam first/second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams<f64>) -> Self {
        let sizes: Vec<usize> = params
            .flat()
            .iter()
            .map(|(_, m)| m.as_slice().len())
            .collect();
        Self {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step: 0,
        }
    }
}

/// One subject's gradient contributions and loss components.
struct SubjectPass {
    grads: Vec<Option<Vec<f64>>>,
    loss: LossBreakdown,
}

fn subject_backward(
    seq: &DynamicGraphSequence<f64>,
    params: &ModelParams<f64>,
    mcfg: &ModelConfig,
    ce_scale: f64,
    noise_seed: u64,
) -> Result<SubjectPass, TrainError> {
    let tape = Tape::new();
    let mt = ModelTensors::bind(&tape, params, true);
    let noise = RolloutNoise::from_seed(
        noise_seed,
        seq.t_max() + 1,
        mcfg.particles,
        seq.n_nodes(),
        mcfg.latent_dim,
    );
    let out = rollout(&tape, seq, &mt, mcfg, &noise);
    let r = readout(out.final_posterior(), &out.final_states()).grad_scale(ce_scale);
    let logits = classify(&r, &mt.classifier1, &mt.classifier2);
    let ce = ce_loss(&logits, &one_hot(seq.label, mcfg.num_classes));
    let loss = LossBreakdown::new(out.bce.item(), out.kld.item(), ce.item());
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            subject: seq.subject_id.clone(),
        });
    }
    let total = out.bce.add(&out.kld).add(&ce);
    total.backward();
    Ok(SubjectPass {
        grads: mt.grads().into_iter().map(|(_, g)| g).collect(),
        loss,
    })
}

/// Forward-only joint loss of one subject, with sampling noise drawn from
/// `seed`. `total = bce + kld + ce`; the l2 penalty is not part of it.
pub fn joint_loss(
    seq: &DynamicGraphSequence<f64>,
    params: &ModelParams<f64>,
    mcfg: &ModelConfig,
    seed: u64,
) -> LossBreakdown {
    let tape = Tape::new();
    let mt = ModelTensors::bind(&tape, params, false);
    let noise = RolloutNoise::from_seed(
        seed,
        seq.t_max() + 1,
        mcfg.particles,
        seq.n_nodes(),
        mcfg.latent_dim,
    );
    let out = rollout(&tape, seq, &mt, mcfg, &noise);
    let r = readout(out.final_posterior(), &out.final_states());
    let logits = classify(&r, &mt.classifier1, &mt.classifier2);
    let ce = ce_loss(&logits, &one_hot(seq.label, mcfg.num_classes));
    LossBreakdown::new(out.bce.item(), out.kld.item(), ce.item())
}

/// Deterministic prediction for one subject: zero sampling noise, so the
/// latent path runs at the posterior mean.
pub fn predict(
    seq: &DynamicGraphSequence<f64>,
    params: &ModelParams<f64>,
    mcfg: &ModelConfig,
) -> Prediction {
    embed_subject(seq, params, mcfg).prediction
}

/// Deterministic embeddings of one subject: per-step posterior means, the
/// flattened readout, and the classifier output.
pub struct SubjectEmbedding {
    pub posterior_means: Vec<crate::mat::Mat<f64>>,
    pub readout: Vec<f64>,
    pub prediction: Prediction,
}

pub fn embed_subject(
    seq: &DynamicGraphSequence<f64>,
    params: &ModelParams<f64>,
    mcfg: &ModelConfig,
) -> SubjectEmbedding {
    let tape = Tape::new();
    let mt = ModelTensors::bind(&tape, params, false);
    let noise = RolloutNoise::zeros(
        seq.t_max() + 1,
        mcfg.particles,
        seq.n_nodes(),
        mcfg.latent_dim,
    );
    let out = rollout(&tape, seq, &mt, mcfg, &noise);
    let r = readout(out.final_posterior(), &out.final_states());
    let logits = classify(&r, &mt.classifier1, &mt.classifier2);
    SubjectEmbedding {
        posterior_means: out.posterior_means(),
        readout: r.values(),
        prediction: Prediction::from_logits(logits.values()),
    }
}

/// One optimizer step on a batch: the classifier descends the total loss
/// while the autoencoder descends BCE + KLD with its cross-entropy path
/// scaled by the adversarial setting. Returns the batch-mean loss.
pub fn adversarial_step(
    batch: &[&DynamicGraphSequence<f64>],
    params: &mut ModelParams<f64>,
    opt: &mut OptimizerState,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    lr: f64,
    noise_seeds: &[u64],
) -> Result<LossBreakdown, TrainError> {
    assert_eq!(batch.len(), noise_seeds.len());
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let ce_scale = ce_path_scale(tcfg);
    let passes: Vec<Result<SubjectPass, TrainError>> = batch
        .par_iter()
        .zip(noise_seeds.par_iter())
        .map(|(seq, &seed)| subject_backward(seq, params, mcfg, ce_scale, seed))
        .collect();

    let names: Vec<String> = params.flat().into_iter().map(|(n, _)| n).collect();
    let sizes: Vec<usize> = params
        .flat()
        .iter()
        .map(|(_, m)| m.as_slice().len())
        .collect();
    let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut mean = LossBreakdown::new(0.0, 0.0, 0.0);
    let inv_b = 1.0 / batch.len() as f64;
    for pass in passes {
        let pass = pass?;
        for (acc, g) in grads.iter_mut().zip(&pass.grads) {
            if let Some(g) = g {
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a += gi * inv_b;
                }
            }
        }
        mean.bce += pass.loss.bce * inv_b;
        mean.kld += pass.loss.kld * inv_b;
        mean.ce += pass.loss.ce * inv_b;
    }
    mean.total = mean.bce + mean.kld + mean.ce;

    if tcfg.reverse_full_loss {
        for (name, g) in names.iter().zip(grads.iter_mut()) {
            if !is_classifier_param(name) {
                for gi in g.iter_mut() {
                    *gi = -*gi;
                }
            }
        }
    }
    for (name, g) in names.iter().zip(&grads) {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: name.clone(),
            });
        }
    }

    adam_update(params, opt, &grads, tcfg, lr);
    Ok(mean)
}

fn adam_update(
    params: &mut ModelParams<f64>,
    opt: &mut OptimizerState,
    grads: &[Vec<f64>],
    tcfg: &TrainConfig,
    lr: f64,
) {
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2, eps) = (tcfg.adam.beta1, tcfg.adam.beta2, tcfg.adam.epsilon);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (idx, (_, p)) in params.flat_mut().into_iter().enumerate() {
        let (m, v) = (&mut opt.m[idx], &mut opt.v[idx]);
        for (k, x) in p.as_mut_slice().iter_mut().enumerate() {
            let g = grads[idx][k] + tcfg.l2_weight * *x;
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub bce: f64,
    pub kld: f64,
    pub ce: f64,
    pub total: f64,
    pub l2: f64,
}

/// Stateful training loop, resumable from a checkpointed epoch.
pub struct Trainer {
    pub params: ModelParams<f64>,
    pub opt: OptimizerState,
    pub epoch: usize,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
}

impl Trainer {
    pub fn new(mcfg: &ModelConfig, tcfg: &TrainConfig, n_nodes: usize) -> Result<Self, TrainError> {
        tcfg.validate()?;
        mcfg.validate()
            .map_err(|e| TrainError::BadConfig(e.to_string()))?;
        let params = ModelParams::init(mcfg, n_nodes, tcfg.seed);
        let opt = OptimizerState::new(&params);
        Ok(Self {
            params,
            opt,
            epoch: 0,
            mcfg: mcfg.clone(),
            tcfg: tcfg.clone(),
        })
    }

    pub fn resume(
        mcfg: &ModelConfig,
        tcfg: &TrainConfig,
        params: ModelParams<f64>,
        opt: OptimizerState,
        epoch: usize,
    ) -> Result<Self, TrainError> {
        tcfg.validate()?;
        Ok(Self {
            params,
            opt,
            epoch,
            mcfg: mcfg.clone(),
            tcfg: tcfg.clone(),
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.tcfg.epochs
    }

    /// Runs one epoch (one step full-batch, or one step per mini-batch) and
    /// returns its log record.
    pub fn epoch_step(
        &mut self,
        dataset: &[DynamicGraphSequence<f64>],
    ) -> Result<EpochRecord, TrainError> {
        if dataset.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let n = dataset[0].n_nodes();
        for seq in dataset {
            if seq.n_nodes() != n {
                return Err(TrainError::NodeCountMismatch(n, seq.n_nodes()));
            }
        }
        let lr = self.tcfg.lr_at(self.epoch);
        let order = self.epoch_order(dataset.len());
        let chunk = self.tcfg.batch_size.unwrap_or(dataset.len()).max(1);
        let mut sums = (0.0, 0.0, 0.0);
        let mut counted = 0usize;
        for batch_idx in order.chunks(chunk) {
            let batch: Vec<&DynamicGraphSequence<f64>> =
                batch_idx.iter().map(|&i| &dataset[i]).collect();
            let seeds: Vec<u64> = batch_idx
                .iter()
                .map(|&i| mix3(self.tcfg.seed, self.epoch as u64, i as u64))
                .collect();
            let mean = adversarial_step(
                &batch,
                &mut self.params,
                &mut self.opt,
                &self.mcfg,
                &self.tcfg,
                lr,
                &seeds,
            )?;
            sums.0 += mean.bce * batch.len() as f64;
            sums.1 += mean.kld * batch.len() as f64;
            sums.2 += mean.ce * batch.len() as f64;
            counted += batch.len();
        }
        let inv = 1.0 / counted as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            bce: sums.0 * inv,
            kld: sums.1 * inv,
            ce: sums.2 * inv,
            total: (sums.0 + sums.1 + sums.2) * inv,
            l2: self.l2_penalty(),
        };
        self.epoch += 1;
        Ok(record)
    }

    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.tcfg.batch_size.is_some() {
            use rand::prelude::*;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(mix3(self.tcfg.seed, 0xB47C4, self.epoch as u64));
            order.shuffle(&mut rng);
        }
        order
    }

    fn l2_penalty(&self) -> f64 {
        let sq: f64 = self
            .params
            .flat()
            .iter()
            .map(|(_, m)| m.as_slice().iter().map(|x| x * x).sum::<f64>())
            .sum();
        0.5 * self.tcfg.l2_weight * sq
    }
}

/// Trains from scratch for the configured number of epochs.
pub fn train(
    dataset: &[DynamicGraphSequence<f64>],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ModelParams<f64>, Vec<EpochRecord>), TrainError> {
    train_with_hook(dataset, mcfg, tcfg, |_, _| {})
}

/// Trains with a per-epoch observer (used for logging and checkpoints).
pub fn train_with_hook(
    dataset: &[DynamicGraphSequence<f64>],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelParams<f64>),
) -> Result<(ModelParams<f64>, Vec<EpochRecord>), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut trainer = Trainer::new(mcfg, tcfg, dataset[0].n_nodes())?;
    let mut log = Vec::with_capacity(tcfg.epochs);
    while !trainer.finished() {
        let record = trainer.epoch_step(dataset)?;
        on_epoch(&record, &trainer.params);
        log.push(record);
    }
    Ok((trainer.params, log))
}

/// Deterministic seed mixing (splitmix64 over the combined words).
pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(b)
        .rotate_left(27)
        .wrapping_mul(0xBF58476D1CE4E5B9)
        .wrapping_add(c);
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58476D1CE4E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
