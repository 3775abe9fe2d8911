//! Cross-validation pipeline behavior on synthetic data: inner-fold epoch
//! selection and the shuffled-label null check.

mod common;

use dsvb_core::evaluation::{run_cv, stratified_nested_split, InnerSelection};
use dsvb_core::model::{EdgeFeatureMode, ModelConfig};
use dsvb_core::synthgen::{generate, sticky_chain, SynthSpec};
use dsvb_core::trainer::TrainConfig;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        latent_dim: 3,
        gru_dim: 2,
        encoder_hidden_dim: 4,
        feature_x_dim: 4,
        feature_z_dim: 2,
        classifier_hidden_dim: 4,
        edge_feature_mode: EdgeFeatureMode::Off,
        ..ModelConfig::default()
    }
}

#[test]
fn inner_selection_picks_an_epoch_candidate() {
    let spec = SynthSpec {
        n_nodes: 10,
        n_subjects_per_class: 10,
        t_max: 2,
        k_states: 2,
        transitions: vec![sticky_chain(2, 0.8); 2],
        seed: 5,
        ..SynthSpec::default()
    };
    let (dataset, _) = generate(&spec).unwrap();
    let labels: Vec<usize> = dataset.iter().map(|s| s.label).collect();
    let plan = stratified_nested_split(&labels, 5, 4, 5).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let candidates = vec![2usize, 5];
    let outcome = run_cv(
        &dataset,
        &tiny_model(),
        &tcfg,
        &plan,
        &InnerSelection::Epochs {
            candidates: candidates.clone(),
        },
    )
    .unwrap();
    assert_eq!(outcome.epochs_used.len(), 5);
    for chosen in &outcome.epochs_used {
        assert!(
            candidates.contains(chosen),
            "selected epoch count {chosen} not among candidates"
        );
    }
}

#[test]
fn shuffled_labels_give_chance_level_accuracy() {
    let spec = SynthSpec {
        seed: 11,
        ..SynthSpec::default()
    };
    let (mut dataset, _) = generate(&spec).unwrap();
    // Destroy the label/structure relationship, keeping the class balance.
    let mut labels: Vec<usize> = dataset.iter().map(|s| s.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    labels.shuffle(&mut rng);
    for (seq, label) in dataset.iter_mut().zip(&labels) {
        seq.label = *label;
    }
    let plan = stratified_nested_split(&labels, 5, 4, 11).unwrap();
    let mcfg = ModelConfig {
        latent_dim: 4,
        gru_dim: 4,
        encoder_hidden_dim: 8,
        feature_x_dim: 8,
        feature_z_dim: 2,
        classifier_hidden_dim: 8,
        edge_feature_mode: EdgeFeatureMode::Off,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 50,
        seed: 11,
        ..TrainConfig::default()
    };
    let outcome = run_cv(&dataset, &mcfg, &tcfg, &plan, &InnerSelection::None).unwrap();
    let acc = outcome.report.mean.accuracy;
    assert!(
        (0.3..=0.7).contains(&acc),
        "null-model accuracy {acc:.4} outside the chance band"
    );
}
