use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prokan::cli::{CrossvalReport, GradcheckSummary, Manifest, TrainSummary, MANIFEST_FILE};
use prokan::data::{generate_synthetic_cases, DenseCase, SynthParams};
use prokan::metrics::MetricReport;
use prokan::{dice, BinaryMask, Error, KanBlock, KanLayer, KnotVector, ProKanNetwork};

const SMALL_DATA: &[&str] = &["--set", "n_cases=4", "--set", "dims=[10,10,10]"];
const QUICK_TRAIN: &[&str] = &["--set", "max_epochs=6", "--set", "samples_per_class=16", "--set", "hidden_width=4"];

fn prokan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prokan"))
        .args(args)
        .current_dir(dir)
        .env_remove("PROKAN_SEED")
        .output()
        .expect("spawn prokan")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", out];
    args.extend_from_slice(extra);
    ok(&prokan(&args, dir));
}

fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Vec<T> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_writes_pairs_and_manifest_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = ["--set", "n_cases=5", "--set", "dims=[10,10,10]"];
    synth(tmp.path(), "a", &extra);
    synth(tmp.path(), "b", &extra);
    let names = |d: &str| {
        let mut v: Vec<String> = fs::read_dir(tmp.path().join(d))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    let files = names("a");
    assert_eq!(files.len(), 11);
    assert_eq!(files, names("b"));
    for f in &files {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f} differs between reruns"
        );
    }
    let m: Manifest = read_json(tmp.path().join("a").join(MANIFEST_FILE));
    assert_eq!(m.cases.len(), 5);
    assert_eq!(m.cases[0].case_id, "case_000");
}

#[test]
fn synth_into_unwritable_location_reports_path() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("blocker"), b"x").unwrap();
    let out = prokan(&["synth", "--out", "blocker/sub"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("blocker"), "{err}");
}

#[test]
fn seed_env_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_prokan"))
        .args(["synth", "--out", "d", "--set", "seed=1", "--set", "n_cases=2", "--set", "dims=[10,10,10]"])
        .current_dir(tmp.path())
        .env("PROKAN_SEED", "99")
        .output()
        .unwrap();
    ok(&out);
    let m: Manifest = read_json(tmp.path().join("d").join(MANIFEST_FILE));
    assert_eq!(m.seed, 99);
}

#[test]
fn config_errors_exit_one_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    for bad in [
        vec!["synth", "--out", "x", "--set", "no_such_key=1"],
        vec!["synth", "--out", "x", "--set", "momentum=1.5"],
        vec!["synth", "--out", "x", "--set", "t_plateau=1"],
        vec!["frobnicate"],
    ] {
        let out = prokan(&bad, tmp.path());
        assert_eq!(out.status.code(), Some(1), "{bad:?}");
    }
    assert!(!tmp.path().join("x").exists());

    fs::write(tmp.path().join("c.toml"), "hidden_width = 0\n").unwrap();
    let out = prokan(&["gradcheck", "--config", "c.toml", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn train_single_epoch_logs_one_record() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", SMALL_DATA);
    let mut args = vec!["train", "--data", "data", "--out", "run", "--set", "max_epochs=1"];
    args.extend_from_slice(&QUICK_TRAIN[2..]);
    ok(&prokan(&args, tmp.path()));
    let records: Vec<serde_json::Value> = jsonl(tmp.path().join("run/epochs.jsonl"));
    assert_eq!(records.len(), 1);
    for key in ["epoch", "train_loss", "val_loss", "val_accuracy", "val_dice", "block_count", "G", "k", "eta", "lambda"] {
        assert!(records[0].get(key).is_some(), "missing {key}");
    }
    for f in ["checkpoint_final.json", "checkpoint_best.json", "events.jsonl", "train_summary.json"] {
        assert!(tmp.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn train_without_manifest_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = prokan(&["train", "--data", "empty", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(MANIFEST_FILE));
}

#[test]
fn eval_on_training_cases_reproduces_logged_train_dice() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", SMALL_DATA);
    let mut args = vec!["train", "--data", "data", "--out", "run"];
    args.extend_from_slice(QUICK_TRAIN);
    ok(&prokan(&args, tmp.path()));
    let summary: TrainSummary = read_json(tmp.path().join("run/train_summary.json"));

    let out = prokan(
        &["eval", "--checkpoint", "run/checkpoint_final.json", "--data", "data", "--out", "ev"],
        tmp.path(),
    );
    ok(&out);
    let reports: Vec<MetricReport> = jsonl(tmp.path().join("ev/eval_report.jsonl"));
    assert_eq!(reports.len(), 4);
    let train: Vec<&MetricReport> = reports
        .iter()
        .filter(|r| summary.train_case_ids.contains(&r.case_id))
        .collect();
    let dices: Vec<f64> = train.iter().filter_map(|r| r.dice).collect();
    let mean = dices.iter().sum::<f64>() / dices.len() as f64;
    assert!((mean - summary.final_train_dice).abs() < 1e-9, "{mean} vs {}", summary.final_train_dice);
    let acc = train.iter().map(|r| r.accuracy).sum::<f64>() / train.len() as f64;
    assert!((acc - summary.final_train_accuracy).abs() < 1e-9);
}

#[test]
fn corrupted_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", SMALL_DATA);
    fs::write(tmp.path().join("bad.json"), "{\"format_version\": 7}").unwrap();
    fs::write(tmp.path().join("garbage.json"), "not json").unwrap();
    for ck in ["bad.json", "garbage.json", "missing.json"] {
        let out = prokan(&["eval", "--checkpoint", ck, "--data", "data"], tmp.path());
        assert_eq!(out.status.code(), Some(2), "{ck}");
    }
}

#[test]
fn crossval_two_folds_on_four_cases() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", SMALL_DATA);
    let mut args = vec!["crossval", "--data", "data", "--folds", "2", "--out", "cv"];
    args.extend_from_slice(QUICK_TRAIN);
    let out = prokan(&args, tmp.path());
    ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("mean") && table.contains("std"));

    let r: CrossvalReport = read_json(tmp.path().join("cv/crossval_report.json"));
    assert_eq!(r.folds.len(), 2);
    let mut ids: Vec<&String> = r.folds.iter().flat_map(|f| &f.val_case_ids).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 4);
    let mean_acc = r.folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / 2.0;
    assert!((mean_acc - r.mean.accuracy).abs() < 1e-12);

    let out = prokan(&["crossval", "--data", "data", "--folds", "5", "--out", "cv5"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_reports_every_cell_and_catches_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = prokan(&["gradcheck", "--out", "gc"], tmp.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst relative error"));
    let s: GradcheckSummary = read_json(tmp.path().join("gc/gradcheck_report.json"));
    assert_eq!(s.rows.len(), 18);
    assert!(s.passed && s.worst_relative_error < 1e-4);

    let out = prokan(&["gradcheck", "--out", "gc2", "--inject-fault"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let s: GradcheckSummary = read_json(tmp.path().join("gc2/gradcheck_report.json"));
    assert!(s.rows.iter().all(|r| !r.report.passed));
}

fn zero_network(input_dim: usize) -> ProKanNetwork {
    let kv = KnotVector::uniform(-1.0, 1.0, 3, 2).unwrap();
    let l0 = KanLayer::zeros(input_dim, 2, kv.clone()).unwrap();
    let l1 = KanLayer::zeros(2, 2, kv.clone()).unwrap();
    let block = KanBlock::new(vec![l0, l1], false).unwrap();
    let head = KanLayer::zeros(2, 1, kv).unwrap();
    ProKanNetwork::from_parts(input_dim, 2, vec![block], head).unwrap()
}

#[test]
fn constant_zero_network_predicts_nothing() {
    let params = SynthParams {
        n_cases: 1,
        dims: [10, 10, 10],
        ..Default::default()
    };
    let case = &generate_synthetic_cases(3, &params).unwrap()[0];
    let pred = DenseCase::new(case, 1).predict(&zero_network(27)).unwrap();
    assert_eq!(pred.count(), 0);
    assert_eq!(dice(&pred, &case.mask).unwrap(), 0.0);
    let empty = BinaryMask::empty([10, 10, 10]).unwrap();
    assert!(matches!(dice(&pred, &empty), Err(Error::BothEmpty)));
}
