//! The pipeline commands behind the CLI.

use crate::config::PipelineConfig;
use dsvb_core::dynconn::{build_sequence, edge_budget, DynamicGraphSequence, DynconnError};
use dsvb_core::evaluation::{run_cv, stratified_nested_split, EvalError};
use dsvb_core::io;
use dsvb_core::mat::Mat;
use dsvb_core::state_analysis::{
    embedding_dfc, kmeans_states, transition_matrix, transition_rate_distribution,
    StateAssignment,
};
use dsvb_core::synthgen;
use dsvb_core::trainer::{embed_subject, EpochRecord, Trainer, TrainError};
use std::path::{Path, PathBuf};

/// Command failure with the exit-code contract: input/config errors exit 2,
/// numerical failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DynconnError> for CliError {
    fn from(e: DynconnError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteLoss { .. } => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn check_labels(
    sequences: &[DynamicGraphSequence<f64>],
    num_classes: usize,
) -> Result<(), CliError> {
    for seq in sequences {
        if seq.label >= num_classes {
            return Err(CliError::Input(format!(
                "subject {}: label {} out of range for {} classes",
                seq.subject_id, seq.label, num_classes
            )));
        }
    }
    Ok(())
}

pub fn cmd_build_graphs(
    manifest: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<(), CliError> {
    let dataset = io::load_dataset(manifest)?;
    if dataset.is_empty() {
        return Err(CliError::Input("manifest lists no subjects".into()));
    }
    let mut sequences = Vec::with_capacity(dataset.len());
    for series in &dataset {
        let seq = build_sequence(series, &config.window)?;
        sequences.push(seq);
    }
    check_labels(&sequences, config.model.num_classes)?;
    let n = sequences[0].n_nodes();
    for seq in &sequences {
        if seq.n_nodes() != n {
            return Err(CliError::Input(format!(
                "subject {} has {} ROIs, expected {n}",
                seq.subject_id,
                seq.n_nodes()
            )));
        }
    }
    let budget = edge_budget(n * (n - 1) / 2, config.window.keep_fraction);
    for seq in &sequences {
        println!(
            "subject {}: {} graphs (T = {}), {} edges each",
            seq.subject_id,
            seq.t_max() + 1,
            seq.t_max(),
            budget
        );
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    io::write_cache(out, &sequences, Some(&config.window))?;
    println!("wrote {} sequences to {}", sequences.len(), out.display());
    Ok(())
}

pub fn cmd_train(
    cache: &Path,
    config: &PipelineConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let (_, sequences) = io::read_cache(cache)?;
    if sequences.is_empty() {
        return Err(CliError::Input("cache holds no sequences".into()));
    }
    check_labels(&sequences, config.model.num_classes)?;
    ensure_dir(out)?;
    let n = sequences[0].n_nodes();
    let mut trainer = match resume {
        Some(ckpt_path) => {
            let ckpt = io::read_checkpoint(ckpt_path)?;
            if ckpt.header.n_nodes != n {
                return Err(CliError::Input(format!(
                    "checkpoint was trained on {} nodes, cache has {n}",
                    ckpt.header.n_nodes
                )));
            }
            if ckpt.header.model != config.model {
                return Err(CliError::Input(
                    "checkpoint model config differs from the current config".into(),
                ));
            }
            Trainer::resume(
                &config.model,
                &config.train,
                ckpt.params,
                ckpt.opt,
                ckpt.header.epoch,
            )?
        }
        None => Trainer::new(&config.model, &config.train, n)?,
    };
    let mut log: Vec<EpochRecord> = Vec::new();
    while !trainer.finished() {
        let record = trainer.epoch_step(&sequences)?;
        if let Some(every) = config.train.checkpoint_every {
            let done = trainer.epoch;
            if every > 0 && done % every == 0 && !trainer.finished() {
                let path = out.join(format!("checkpoint_epoch_{done}.ckpt"));
                io::write_checkpoint(
                    &path,
                    &config.model,
                    &config.train,
                    &trainer.params,
                    &trainer.opt,
                    done,
                )?;
            }
        }
        log.push(record);
    }
    io::write_jsonl_log(&out.join("train_log.jsonl"), &log)?;
    io::write_checkpoint(
        &out.join("checkpoint.ckpt"),
        &config.model,
        &config.train,
        &trainer.params,
        &trainer.opt,
        trainer.epoch,
    )?;
    if let Some(last) = log.last() {
        println!(
            "trained to epoch {}: bce {:.4} kld {:.4} ce {:.4} total {:.4}",
            last.epoch, last.bce, last.kld, last.ce, last.total
        );
    }
    println!("wrote {}", out.join("checkpoint.ckpt").display());
    Ok(())
}

pub fn cmd_evaluate(cache: &Path, config: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let (_, sequences) = io::read_cache(cache)?;
    check_labels(&sequences, config.model.num_classes)?;
    let labels: Vec<usize> = sequences.iter().map(|s| s.label).collect();
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(CliError::Input(
            "evaluation needs both classes in the dataset".into(),
        ));
    }
    ensure_dir(out)?;
    let plan = stratified_nested_split(&labels, config.cv.k_outer, config.cv.k_inner, config.cv.seed)?;
    let outcome = run_cv(
        &sequences,
        &config.model,
        &config.train,
        &plan,
        &config.inner_selection,
    )?;
    io::write_report_json(&out.join("report.json"), &outcome.report)?;
    for fold in 0..config.cv.k_outer {
        let preds: Vec<_> = outcome
            .predictions
            .iter()
            .filter(|p| p.fold == fold)
            .cloned()
            .collect();
        io::write_predictions_csv(&out.join(format!("predictions_fold_{fold}.csv")), &preds)?;
    }
    let m = &outcome.report.mean;
    let s = &outcome.report.std;
    println!(
        "cv mean accuracy {:.4} +/- {:.4}, recall {:.4}, precision {:.4}, f1 {:.4}, auc {:.4}",
        m.accuracy, s.accuracy, m.recall, m.precision, m.f1, m.auc
    );
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

pub fn cmd_analyze(
    cache: &Path,
    checkpoint: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<(), CliError> {
    let (_, sequences) = io::read_cache(cache)?;
    let ckpt = io::read_checkpoint(checkpoint)?;
    if sequences.is_empty() {
        return Err(CliError::Input("cache holds no sequences".into()));
    }
    let n = sequences[0].n_nodes();
    if ckpt.header.n_nodes != n {
        return Err(CliError::Input(format!(
            "checkpoint expects {} nodes, cache has {n}",
            ckpt.header.n_nodes
        )));
    }
    ensure_dir(out)?;
    let mcfg = &ckpt.header.model;

    // Embedding-based dynamic connectivity per subject.
    let mut dfc_inputs: Vec<(String, Vec<Mat<f64>>)> = Vec::with_capacity(sequences.len());
    let mut readouts: Vec<(String, usize, Vec<f64>)> = Vec::with_capacity(sequences.len());
    for seq in &sequences {
        let embedding = embed_subject(seq, &ckpt.params, mcfg);
        let (dfc, _) = embedding_dfc(&embedding.posterior_means);
        dfc_inputs.push((seq.subject_id.clone(), dfc));
        readouts.push((seq.subject_id.clone(), seq.label, embedding.readout));
    }

    let km = kmeans_states(
        &dfc_inputs,
        config.analysis.k_states,
        config.analysis.restarts,
        config.seed,
    )
    .map_err(|e| CliError::Input(e.to_string()))?;

    for (k, centroid) in km.centroids.iter().enumerate() {
        io::write_centroid_csv(&out.join(format!("centroid_{k}.csv")), centroid, n)?;
        if config.analysis.svg {
            let full = centroid_matrix(centroid, n);
            std::fs::write(
                out.join(format!("centroid_{k}.svg")),
                io::svg_heatmap(&full, 8),
            )
            .map_err(|e| CliError::Input(format!("centroid_{k}.svg: {e}")))?;
        }
    }
    io::write_assignments_csv(&out.join("assignments.csv"), &km.assignments)?;

    // Group-wise transition statistics (groups = class labels).
    let mut groups: Vec<(String, Vec<StateAssignment>)> = Vec::new();
    for class in 0..config.model.num_classes {
        let members: Vec<StateAssignment> = km
            .assignments
            .iter()
            .zip(&sequences)
            .filter(|(_, seq)| seq.label == class)
            .map(|(a, _)| a.clone())
            .collect();
        if !members.is_empty() {
            groups.push((format!("class_{class}"), members));
        }
    }
    let mut transition_rows = Vec::new();
    for (name, members) in &groups {
        let t = transition_matrix(members, config.analysis.k_states)
            .map_err(|e| CliError::Input(e.to_string()))?;
        if config.analysis.svg {
            std::fs::write(
                out.join(format!("transitions_{name}.svg")),
                io::svg_heatmap(&t.p, 24),
            )
            .map_err(|e| CliError::Input(format!("transitions_{name}.svg: {e}")))?;
        }
        let rates = transition_rate_distribution(members)
            .map_err(|e| CliError::Input(e.to_string()))?;
        io::write_histogram_csv(&out.join(format!("rate_histogram_{name}.csv")), &rates)?;
        transition_rows.push((name.clone(), t));
    }
    io::write_transitions_json(&out.join("transitions.json"), &transition_rows)?;
    io::write_readouts_csv(&out.join("readouts.csv"), &readouts)?;
    println!(
        "analyzed {} subjects into {} states; wrote {}",
        sequences.len(),
        config.analysis.k_states,
        out.display()
    );
    Ok(())
}

fn centroid_matrix(centroid: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut full = vec![vec![0.0; n]; n];
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
    full
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Sequences,
    Timeseries,
}

pub fn cmd_synth(config: &PipelineConfig, out: &Path, mode: SynthMode) -> Result<(), CliError> {
    ensure_dir(out)?;
    match mode {
        SynthMode::Sequences => {
            let (sequences, truth) = synthgen::generate(&config.synth)
                .map_err(|e| CliError::Input(e.to_string()))?;
            io::write_cache(&out.join("cache.dsvb"), &sequences, None)?;
            io::write_report_json(&out.join("truth_states.json"), &truth)?;
            println!(
                "wrote {} synthetic sequences to {}",
                sequences.len(),
                out.join("cache.dsvb").display()
            );
        }
        SynthMode::Timeseries => {
            let (series, truth) = synthgen::emit_timeseries(&config.synth, &config.window)
                .map_err(|e| CliError::Input(e.to_string()))?;
            let subjects_dir = out.join("subjects");
            ensure_dir(&subjects_dir)?;
            let mut entries = Vec::with_capacity(series.len());
            for s in &series {
                let rel = PathBuf::from("subjects").join(format!("{}.csv", s.subject_id));
                io::write_roi_csv(&out.join(&rel), &s.data)?;
                entries.push(io::ManifestEntry {
                    subject_id: s.subject_id.clone(),
                    path: rel,
                    label: s.label,
                });
            }
            let manifest = io::Manifest { subjects: entries };
            io::write_report_json(&out.join("manifest.json"), &manifest)?;
            io::write_report_json(&out.join("truth_states.json"), &truth)?;
            println!(
                "wrote {} synthetic time series under {}",
                series.len(),
                out.display()
            );
        }
    }
    Ok(())
}
