//! End-to-end tests of the `dsvb` binary: command wiring, file artifacts,
//! exit codes, and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dsvb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsvb"))
}

fn run(args: &[&str]) -> Output {
    dsvb().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_synth_overrides() -> Vec<String> {
    [
        "synth.n_nodes=10",
        "synth.n_subjects_per_class=5",
        "synth.t_max=2",
        "synth.k_states=2",
        "synth.transitions=[[[0.8,0.2],[0.3,0.7]],[[0.6,0.4],[0.5,0.5]]]",
        "model.latent_dim=3",
        "model.gru_dim=2",
        "model.encoder_hidden_dim=4",
        "model.feature_x_dim=4",
        "model.feature_z_dim=2",
        "model.classifier_hidden_dim=4",
        "train.epochs=2",
        "train.learning_rate=0.001",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn with_overrides(mut base: Vec<&str>, overrides: &[String]) -> Vec<String> {
    let mut args: Vec<String> = base.drain(..).map(String::from).collect();
    for o in overrides {
        args.push("--override".into());
        args.push(o.clone());
    }
    args
}

fn synth_cache(dir: &Path, seed: &str) -> PathBuf {
    let args = with_overrides(
        vec![
            "synth",
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            seed,
        ],
        &small_synth_overrides(),
    );
    let out = dsvb().args(&args).output().unwrap();
    assert_ok(&out);
    dir.join("cache.dsvb")
}

#[test]
fn synth_sequences_are_deterministic_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_cache(&dir.path().join("a"), "5");
    let b = synth_cache(&dir.path().join("b"), "5");
    let c = synth_cache(&dir.path().join("c"), "6");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    assert!(dir.path().join("a/truth_states.json").exists());
}

#[test]
fn build_graphs_runs_on_synthetic_timeseries_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let ts = dir.path().join("ts");
    let args = with_overrides(
        vec![
            "synth",
            "--mode",
            "timeseries",
            "--out",
            ts.to_str().unwrap(),
            "--seed",
            "3",
        ],
        &small_synth_overrides(),
    );
    assert_ok(&dsvb().args(&args).output().unwrap());
    let manifest = ts.join("manifest.json");
    assert!(manifest.exists());

    let cache1 = dir.path().join("g1.dsvb");
    let cache2 = dir.path().join("g2.dsvb");
    for cache in [&cache1, &cache2] {
        let out = run(&[
            "build-graphs",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            cache.to_str().unwrap(),
        ]);
        assert_ok(&out);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("edges each"), "per-subject report: {stdout}");
    }
    assert_eq!(
        std::fs::read(&cache1).unwrap(),
        std::fs::read(&cache2).unwrap(),
        "rebuild from unchanged inputs must be byte-identical"
    );
}

#[test]
fn build_graphs_diagnoses_truncated_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "1,2,3,4\n5,6\n").unwrap();
    std::fs::write(
        dir.path().join("manifest.json"),
        r#"{"subjects":[{"subject_id":"bad","path":"bad.csv","label":0}]}"#,
    )
    .unwrap();
    let out = run(&[
        "build-graphs",
        "--manifest",
        dir.path().join("manifest.json").to_str().unwrap(),
        "--out",
        dir.path().join("cache.dsvb").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.csv"), "names the file: {stderr}");
    assert!(stderr.contains("row 2"), "names the row: {stderr}");
}

#[test]
fn train_smoke_logs_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cache = synth_cache(&dir.path().join("data"), "7");
    let run_dir = dir.path().join("run");
    let mut overrides = small_synth_overrides();
    overrides.push("train.checkpoint_every=1".into());
    let args = with_overrides(
        vec![
            "train",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
            "--seed",
            "7",
        ],
        &overrides,
    );
    assert_ok(&dsvb().args(&args).output().unwrap());
    assert!(
        run_dir.join("checkpoint_epoch_1.ckpt").exists(),
        "periodic checkpoint written"
    );
    let log = std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2, "one record per epoch");
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 0);
    for key in ["lr", "bce", "kld", "ce", "total"] {
        assert!(first.get(key).is_some(), "log record has {key}");
    }

    // Resume continues the epoch counter.
    let mut overrides = small_synth_overrides();
    for o in &mut overrides {
        if o.starts_with("train.epochs=") {
            *o = "train.epochs=4".into();
        }
    }
    let resume_dir = dir.path().join("resumed");
    let args = with_overrides(
        vec![
            "train",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            resume_dir.to_str().unwrap(),
            "--resume",
            run_dir.join("checkpoint.ckpt").to_str().unwrap(),
            "--seed",
            "7",
        ],
        &overrides,
    );
    assert_ok(&dsvb().args(&args).output().unwrap());
    let log = std::fs::read_to_string(resume_dir.join("train_log.jsonl")).unwrap();
    let epochs: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, vec![2, 3], "epoch counter continues after resume");
}

#[test]
fn train_checkpoints_are_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cache = synth_cache(&dir.path().join("data"), "9");
    let mut checkpoints = Vec::new();
    for name in ["r1", "r2"] {
        let run_dir = dir.path().join(name);
        let args = with_overrides(
            vec![
                "train",
                "--cache",
                cache.to_str().unwrap(),
                "--out",
                run_dir.to_str().unwrap(),
                "--seed",
                "31",
            ],
            &small_synth_overrides(),
        );
        assert_ok(&dsvb().args(&args).output().unwrap());
        checkpoints.push(std::fs::read(run_dir.join("checkpoint.ckpt")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
}

#[test]
fn evaluate_writes_report_with_five_folds() {
    let dir = tempfile::tempdir().unwrap();
    let cache = synth_cache(&dir.path().join("data"), "13");
    let out_dir = dir.path().join("eval");
    let args = with_overrides(
        vec![
            "evaluate",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "13",
            "--threads",
            "1",
        ],
        &small_synth_overrides(),
    );
    assert_ok(&dsvb().args(&args).output().unwrap());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["per_fold"].as_array().unwrap().len(), 5);
    assert!(report["mean"]["accuracy"].as_f64().unwrap() >= 0.0);
    for fold in 0..5 {
        assert!(out_dir.join(format!("predictions_fold_{fold}.csv")).exists());
    }
}

#[test]
fn evaluate_rejects_single_class_dataset() {
    let dir = tempfile::tempdir().unwrap();
    // Build a tiny single-class manifest through the graph builder.
    let mut rows = String::new();
    for i in 0..4 {
        let row: Vec<String> = (0..25)
            .map(|t| format!("{}", ((i + 2 * t) as f64 * 0.7).sin() + 0.1 * i as f64))
            .collect();
        rows.push_str(&row.join(","));
        rows.push('\n');
    }
    std::fs::write(dir.path().join("s.csv"), rows).unwrap();
    std::fs::write(
        dir.path().join("manifest.json"),
        r#"{"subjects":[{"subject_id":"s","path":"s.csv","label":0}]}"#,
    )
    .unwrap();
    let cache = dir.path().join("cache.dsvb");
    assert_ok(&run(&[
        "build-graphs",
        "--manifest",
        dir.path().join("manifest.json").to_str().unwrap(),
        "--out",
        cache.to_str().unwrap(),
    ]));
    let out = run(&[
        "evaluate",
        "--cache",
        cache.to_str().unwrap(),
        "--out",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_emits_state_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cache = synth_cache(&dir.path().join("data"), "17");
    let run_dir = dir.path().join("run");
    let args = with_overrides(
        vec![
            "train",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
            "--seed",
            "17",
        ],
        &small_synth_overrides(),
    );
    assert_ok(&dsvb().args(&args).output().unwrap());

    let out_dir = dir.path().join("analysis");
    let args = with_overrides(
        vec![
            "analyze",
            "--cache",
            cache.to_str().unwrap(),
            "--checkpoint",
            run_dir.join("checkpoint.ckpt").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "17",
        ],
        &small_synth_overrides(),
    );
    assert_ok(&dsvb().args(&args).output().unwrap());

    // K = 3 default: three centroid files.
    for k in 0..3 {
        assert!(out_dir.join(format!("centroid_{k}.csv")).exists());
        assert!(out_dir.join(format!("centroid_{k}.svg")).exists());
    }
    assert!(out_dir.join("assignments.csv").exists());
    assert!(out_dir.join("readouts.csv").exists());
    let transitions: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("transitions.json")).unwrap())
            .unwrap();
    for class in ["class_0", "class_1"] {
        let rows = transitions[class]["p"].as_array().unwrap();
        assert_eq!(rows.len(), 3);
        for row in rows {
            let sum: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sums to {sum}");
        }
    }
}

#[test]
fn analyze_rejects_node_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cache10 = synth_cache(&dir.path().join("data10"), "19");
    let run_dir = dir.path().join("run");
    let args = with_overrides(
        vec![
            "train",
            "--cache",
            cache10.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ],
        &small_synth_overrides(),
    );
    assert_ok(&dsvb().args(&args).output().unwrap());

    // A cache with a different node count.
    let mut overrides = small_synth_overrides();
    for o in &mut overrides {
        if o.starts_with("synth.n_nodes=") {
            *o = "synth.n_nodes=12".into();
        }
    }
    let dir12 = dir.path().join("data12");
    let args = with_overrides(
        vec!["synth", "--out", dir12.to_str().unwrap()],
        &overrides,
    );
    assert_ok(&dsvb().args(&args).output().unwrap());

    let out = run(&[
        "analyze",
        "--cache",
        dir12.join("cache.dsvb").to_str().unwrap(),
        "--checkpoint",
        run_dir.join("checkpoint.ckpt").to_str().unwrap(),
        "--out",
        dir.path().join("analysis").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodes"));
}

#[test]
fn analyze_recovers_planted_states() {
    // A dataset whose edges are dominated by the planted state blocks; the
    // trained model's embedding correlations must recover those states.
    let dir = tempfile::tempdir().unwrap();
    let overrides: Vec<String> = [
        "synth.n_subjects_per_class=10",
        "synth.class_weight=0.05",
        "synth.keep_fraction=0.12",
        "model.latent_dim=16",
        "model.gru_dim=8",
        "model.encoder_hidden_dim=16",
        "model.feature_x_dim=16",
        "model.feature_z_dim=4",
        "model.classifier_hidden_dim=8",
        "model.edge_feature_mode=\"off\"",
        "train.epochs=150",
        "train.learning_rate=0.003",
        "train.batch_size=5",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let data_dir = dir.path().join("data");
    let args = with_overrides(
        vec!["synth", "--out", data_dir.to_str().unwrap(), "--seed", "31"],
        &overrides,
    );
    assert_ok(&dsvb().args(&args).output().unwrap());
    let cache = data_dir.join("cache.dsvb");

    let run_dir = dir.path().join("run");
    let args = with_overrides(
        vec![
            "train",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
            "--seed",
            "31",
        ],
        &overrides,
    );
    assert_ok(&dsvb().args(&args).output().unwrap());

    let out_dir = dir.path().join("analysis");
    let args = with_overrides(
        vec![
            "analyze",
            "--cache",
            cache.to_str().unwrap(),
            "--checkpoint",
            run_dir.join("checkpoint.ckpt").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "31",
        ],
        &overrides,
    );
    assert_ok(&dsvb().args(&args).output().unwrap());

    // Planted truth, keyed by subject id.
    let truth: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(data_dir.join("truth_states.json")).unwrap())
            .unwrap();
    let mut planted: std::collections::HashMap<String, Vec<usize>> = truth
        .into_iter()
        .map(|t| {
            (
                t["subject_id"].as_str().unwrap().to_string(),
                t["states"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|v| v.as_u64().unwrap() as usize)
                    .collect(),
            )
        })
        .collect();

    let assignments = std::fs::read_to_string(out_dir.join("assignments.csv")).unwrap();
    let mut recovered_flat = Vec::new();
    let mut planted_flat = Vec::new();
    for line in assignments.lines().skip(1) {
        let mut cells = line.split(',');
        let id = cells.next().unwrap().to_string();
        let states: Vec<usize> = cells.map(|c| c.parse().unwrap()).collect();
        let truth_states = planted.remove(&id).expect("truth for subject");
        assert_eq!(states.len(), truth_states.len());
        recovered_flat.extend(states);
        planted_flat.extend(truth_states);
    }
    assert!(planted.is_empty(), "every subject analyzed");
    let ari = dsvb_core::state_analysis::adjusted_rand_index(&recovered_flat, &planted_flat);
    assert!(ari >= 0.9, "planted-state recovery ARI {ari:.4} < 0.9");
}

#[test]
fn diverged_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cache = synth_cache(&dir.path().join("data"), "23");
    let mut overrides = small_synth_overrides();
    for o in &mut overrides {
        if o.starts_with("train.learning_rate=") {
            *o = "train.learning_rate=1e200".into();
        }
    }
    let args = with_overrides(
        vec![
            "train",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
        ],
        &overrides,
    );
    let out = dsvb().args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "numerical failure exits 3");
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"trian": {"epochs": 3}}"#).unwrap();
    let out = run(&[
        "synth",
        "--out",
        dir.path().join("s").to_str().unwrap(),
        "--config",
        dir.path().join("cfg.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
}
