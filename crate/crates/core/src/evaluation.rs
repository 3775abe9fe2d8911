//! Nested stratified cross validation and classification metrics.

use crate::dynconn::DynamicGraphSequence;
use crate::model::ModelConfig;
use crate::trainer::{mix3, predict, train, TrainConfig, TrainError};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {class} has {count} subjects, fewer than {folds} folds")]
    ClassTooSmall {
        class: usize,
        count: usize,
        folds: usize,
    },
    #[error("AUC undefined: ground truth contains a single class")]
    SingleClassTruth,
    #[error("no predictions to score")]
    Empty,
    #[error("fold plan does not match dataset size ({plan} vs {data})")]
    PlanMismatch { plan: usize, data: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Cross-validation shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSpec {
    pub k_outer: usize,
    pub k_inner: usize,
    pub seed: u64,
}

impl Default for CvSpec {
    fn default() -> Self {
        Self {
            k_outer: 5,
            k_inner: 4,
            seed: 0,
        }
    }
}

/// One inner train/validation split of an outer-fold training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerFold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// One outer fold: a held-out test set, its training complement, and the
/// inner splits carved from that complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterFold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub inner: Vec<InnerFold>,
}

/// The full nested plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub outer: Vec<OuterFold>,
    pub seed: u64,
}

/// Builds a deterministic nested stratified plan: subjects of each class are
/// shuffled once and dealt round-robin over the outer folds, and each outer
/// training set is split the same way into inner folds.
pub fn stratified_nested_split(
    labels: &[usize],
    k_outer: usize,
    k_inner: usize,
    seed: u64,
) -> Result<FoldPlan, EvalError> {
    let test_folds = stratified_folds(labels, &(0..labels.len()).collect::<Vec<_>>(), k_outer, seed)?;
    let mut outer = Vec::with_capacity(k_outer);
    for (f, test) in test_folds.iter().enumerate() {
        let train: Vec<usize> = (0..labels.len())
            .filter(|i| !test.contains(i))
            .collect();
        let val_folds = stratified_folds(labels, &train, k_inner, mix3(seed, 0x1AA, f as u64))?;
        let inner = val_folds
            .into_iter()
            .map(|val| InnerFold {
                train: train.iter().copied().filter(|i| !val.contains(i)).collect(),
                val,
            })
            .collect();
        outer.push(OuterFold {
            train,
            test: test.clone(),
            inner,
        });
    }
    Ok(FoldPlan { outer, seed })
}

fn stratified_folds(
    labels: &[usize],
    pool: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    let max_label = pool.iter().map(|&i| labels[i]).max().unwrap_or(0);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); max_label + 1];
    for &i in pool {
        per_class[labels[i]].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (class, mut members) in per_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(EvalError::ClassTooSmall {
                class,
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            folds[pos % k].push(idx);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// The five evaluation metrics of one scored set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: f64,
    /// Set when no positive predictions existed and precision degenerated
    /// to zero.
    pub degenerate_precision: bool,
}

/// Per-fold metrics with their mean and (sample) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_fold: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
}

/// One scored subject: positive-class probability, predicted and true label.
pub type ScoredPrediction = (f64, usize, usize);

/// Standard metrics with positive class = 1. AUC is the rank statistic with
/// midrank tie handling, equal to the trapezoidal area under the ROC curve.
pub fn compute_metrics(predictions: &[ScoredPrediction]) -> Result<Metrics, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for &(_, pred, truth) in predictions {
        match (pred == 1, truth == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let n_pos = tp + fne;
    let n_neg = fp + tn;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassTruth);
    }
    let accuracy = (tp + tn) as f64 / predictions.len() as f64;
    let recall = tp as f64 / n_pos as f64;
    let degenerate_precision = tp + fp == 0;
    let precision = if degenerate_precision {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let auc = rank_auc(predictions);
    Ok(Metrics {
        accuracy,
        recall,
        precision,
        f1,
        auc,
        degenerate_precision,
    })
}

fn rank_auc(predictions: &[ScoredPrediction]) -> f64 {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[a]
            .0
            .partial_cmp(&predictions[b].0)
            .expect("non-finite score")
    });
    // Midranks over score ties.
    let mut ranks = vec![0.0f64; predictions.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && predictions[order[j + 1]].0 == predictions[order[i]].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let n_pos = predictions.iter().filter(|p| p.2 == 1).count();
    let n_neg = predictions.len() - n_pos;
    let rank_sum: f64 = predictions
        .iter()
        .zip(&ranks)
        .filter(|(p, _)| p.2 == 1)
        .map(|(_, r)| r)
        .sum();
    (rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64)
}

fn aggregate(per_fold: Vec<Metrics>) -> MetricsReport {
    let k = per_fold.len() as f64;
    let pick = |f: fn(&Metrics) -> f64| -> (f64, f64) {
        let mean = per_fold.iter().map(&f).sum::<f64>() / k;
        let var = if per_fold.len() > 1 {
            per_fold.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let (acc, acc_s) = pick(|m| m.accuracy);
    let (rec, rec_s) = pick(|m| m.recall);
    let (pre, pre_s) = pick(|m| m.precision);
    let (f1, f1_s) = pick(|m| m.f1);
    let (auc, auc_s) = pick(|m| m.auc);
    let degenerate = per_fold.iter().any(|m| m.degenerate_precision);
    MetricsReport {
        per_fold,
        mean: Metrics {
            accuracy: acc,
            recall: rec,
            precision: pre,
            f1,
            auc,
            degenerate_precision: degenerate,
        },
        std: Metrics {
            accuracy: acc_s,
            recall: rec_s,
            precision: pre_s,
            f1: f1_s,
            auc: auc_s,
            degenerate_precision: false,
        },
    }
}

/// What the inner folds select; `None` trains each outer fold with the
/// configured epoch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum InnerSelection {
    #[default]
    None,
    /// Pick the epoch count with the best mean inner validation accuracy.
    Epochs {
        candidates: Vec<usize>,
    },
}

/// One subject's scored prediction within a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub fold: usize,
    pub logits: Vec<f64>,
    pub prob_positive: f64,
    pub predicted: usize,
    pub truth: usize,
}

type FoldRun = (Metrics, Vec<SubjectPrediction>, usize);

/// Full cross-validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub report: MetricsReport,
    pub predictions: Vec<SubjectPrediction>,
    /// Epochs actually trained per outer fold (differs from the config only
    /// under inner selection).
    pub epochs_used: Vec<usize>,
}

/// Trains one model per outer fold on its training subjects and scores the
/// untouched test subjects once. Outer folds run independently.
pub fn run_cv(
    dataset: &[DynamicGraphSequence<f64>],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    plan: &FoldPlan,
    selection: &InnerSelection,
) -> Result<CvOutcome, EvalError> {
    let covered: usize = plan.outer.iter().map(|f| f.test.len()).sum();
    if covered != dataset.len() {
        return Err(EvalError::PlanMismatch {
            plan: covered,
            data: dataset.len(),
        });
    }
    let fold_runs: Vec<Result<FoldRun, EvalError>> = plan
        .outer
        .par_iter()
        .enumerate()
        .map(|(f, fold)| run_fold(dataset, mcfg, tcfg, fold, f, selection))
        .collect();
    let mut per_fold = Vec::new();
    let mut predictions = Vec::new();
    let mut epochs_used = Vec::new();
    for run in fold_runs {
        let (metrics, mut preds, epochs) = run?;
        per_fold.push(metrics);
        predictions.append(&mut preds);
        epochs_used.push(epochs);
    }
    Ok(CvOutcome {
        report: aggregate(per_fold),
        predictions,
        epochs_used,
    })
}

fn run_fold(
    dataset: &[DynamicGraphSequence<f64>],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    fold: &OuterFold,
    fold_idx: usize,
    selection: &InnerSelection,
) -> Result<FoldRun, EvalError> {
    for i in &fold.test {
        debug_assert!(!fold.train.contains(i), "test subject in training set");
    }
    let fold_seed = mix3(tcfg.seed, 0xF01D, fold_idx as u64);
    let epochs = match selection {
        InnerSelection::None => tcfg.epochs,
        InnerSelection::Epochs { candidates } => {
            select_epochs(dataset, mcfg, tcfg, fold, candidates, fold_seed)?
        }
    };
    let train_set: Vec<DynamicGraphSequence<f64>> =
        fold.train.iter().map(|&i| dataset[i].clone()).collect();
    let fold_tcfg = TrainConfig {
        epochs,
        seed: fold_seed,
        ..tcfg.clone()
    };
    let (params, _) = train(&train_set, mcfg, &fold_tcfg)?;
    let mut preds = Vec::with_capacity(fold.test.len());
    for &i in &fold.test {
        let p = predict(&dataset[i], &params, mcfg);
        preds.push(SubjectPrediction {
            subject_id: dataset[i].subject_id.clone(),
            fold: fold_idx,
            logits: p.logits.clone(),
            prob_positive: p.prob_positive(),
            predicted: p.predicted_class,
            truth: dataset[i].label,
        });
    }
    let scored: Vec<ScoredPrediction> = preds
        .iter()
        .map(|p| (p.prob_positive, p.predicted, p.truth))
        .collect();
    Ok((compute_metrics(&scored)?, preds, epochs))
}

fn select_epochs(
    dataset: &[DynamicGraphSequence<f64>],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    fold: &OuterFold,
    candidates: &[usize],
    fold_seed: u64,
) -> Result<usize, EvalError> {
    let mut best = (candidates[0], f64::NEG_INFINITY);
    for &epochs in candidates {
        let mut accs = Vec::new();
        for inner in &fold.inner {
            let train_set: Vec<DynamicGraphSequence<f64>> =
                inner.train.iter().map(|&i| dataset[i].clone()).collect();
            let inner_tcfg = TrainConfig {
                epochs,
                seed: fold_seed,
                ..tcfg.clone()
            };
            let (params, _) = train(&train_set, mcfg, &inner_tcfg)?;
            let correct = inner
                .val
                .iter()
                .filter(|&&i| predict(&dataset[i], &params, mcfg).predicted_class == dataset[i].label)
                .count();
            accs.push(correct as f64 / inner.val.len() as f64);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        if mean > best.1 {
            best = (epochs, mean);
        }
    }
    Ok(best.0)
}
