//! End-to-end command-line tests: every subcommand run as a subprocess
//! against a small generated corpus, exercising outputs, overrides,
//! determinism, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rtintent")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary must execute")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        "data.seed = 11\n\
         gen.num_transcripts = 100\n\
         model.embed_dim = 24\n\
         model.hidden_dim = 24\n\
         train.epochs = 3\n\
         train.seed = 21\n\
         eval.seed = 31\n\
         data.min_count = 1\n\
         data.split_train = 0.7\n\
         data.split_validation = 0.15\n\
         data.split_test = 0.15\n",
    )
    .unwrap();
    path
}

fn setup_corpus_and_checkpoint(dir: &Path) {
    write_config(dir);
    assert_ok(&run_in(dir, &["gen", "-c", "run.cfg"]));
    assert_ok(&run_in(dir, &["train", "-c", "run.cfg", "--variant", "multitask"]));
}

#[test]
fn gen_writes_the_configured_number_of_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_ok(&run_in(dir.path(), &["gen", "-c", "run.cfg", "--out", "c.jsonl"]));
    let lines = std::fs::read_to_string(dir.path().join("c.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 100);
    assert!(dir.path().join("stats.csv").exists());
}

#[test]
fn gen_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_ok(&run_in(dir.path(), &["gen", "-c", "run.cfg", "--seed", "7", "--out", "a.jsonl"]));
    assert_ok(&run_in(dir.path(), &["gen", "-c", "run.cfg", "--seed", "7", "--out", "b.jsonl"]));
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a, b, "same seed must produce byte-identical corpora");
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen", "-c", "nope.cfg"]);
    assert_eq!(out.status.code(), Some(2), "unreadable config path is a data error");

    let out = run_in(dir.path(), &["definitely-not-a-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in(dir.path(), &["gen", "--set", "no_such.key=1"]);
    assert_eq!(out.status.code(), Some(1), "unknown config keys are usage errors");
}

#[test]
fn invalid_variant_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_ok(&run_in(dir.path(), &["gen", "-c", "run.cfg"]));
    let out = run_in(dir.path(), &["train", "-c", "run.cfg", "--variant", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for name in ["offline", "multitask", "multitask_lookahead", "multitask_context", "intent_only"] {
        assert!(stderr.contains(name), "expected '{name}' in: {stderr}");
    }
}

#[test]
fn train_writes_checkpoint_and_per_epoch_log() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus_and_checkpoint(dir.path());
    assert!(dir.path().join("model.ckpt").exists());
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,split,metric,value"));
    let rows: Vec<&str> = lines.collect();
    // 3 epochs, one train-loss row and one validation-metric row each.
    assert_eq!(rows.iter().filter(|r| r.contains(",train,loss,")).count(), 3);
    assert_eq!(rows.iter().filter(|r| r.contains(",val,intent_pb_f1,")).count(), 3);
}

#[test]
fn train_checkpoint_is_flagged_with_variant() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_ok(&run_in(dir.path(), &["gen", "-c", "run.cfg"]));
    assert_ok(&run_in(
        dir.path(),
        &["train", "-c", "run.cfg", "--variant", "intent_only", "--out", "io.ckpt"],
    ));
    let out = run_in(dir.path(), &["eval", "-c", "run.cfg", "--checkpoint", "io.ckpt", "--out", "e.json"]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "intent_only");
    assert!(report.get("intent_prf").is_some(), "intent-only eval reports intent_prf");
}

#[test]
fn eval_reports_the_offline_suite_schema_and_threshold_override() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus_and_checkpoint(dir.path());
    assert_ok(&run_in(dir.path(), &["eval", "-c", "run.cfg", "--out", "eval.json"]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    for key in ["ib_prf", "intent_at_ob", "intent_at_pb"] {
        let prf = &report[key];
        for field in ["precision", "recall", "f1"] {
            assert!(prf[field].is_number(), "missing {key}.{field}");
        }
    }
    assert_eq!(report["threshold"], 0.5);

    assert_ok(&run_in(dir.path(), &["eval", "-c", "run.cfg", "--threshold", "0.7", "--out", "eval7.json"]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval7.json")).unwrap()).unwrap();
    assert_eq!(report["threshold"], 0.7);
}

#[test]
fn class_list_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus_and_checkpoint(dir.path());
    let out = run_in(
        dir.path(),
        &["eval", "-c", "run.cfg", "--set", "data.classes=a,b,c", "--out", "e.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn replay_emits_decisions_report_histogram_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus_and_checkpoint(dir.path());
    assert_ok(&run_in(dir.path(), &["replay", "-c", "run.cfg", "--out", "d1.jsonl", "--report", "r1.json", "--histogram", "h1.csv"]));
    assert_ok(&run_in(dir.path(), &["replay", "-c", "run.cfg", "--out", "d2.jsonl", "--report", "r2.json", "--histogram", "h2.csv"]));
    let d1 = std::fs::read(dir.path().join("d1.jsonl")).unwrap();
    let d2 = std::fs::read(dir.path().join("d2.jsonl")).unwrap();
    assert_eq!(d1, d2, "replay must be deterministic across runs");
    assert_eq!(
        std::fs::read(dir.path().join("r1.json")).unwrap(),
        std::fs::read(dir.path().join("r2.json")).unwrap()
    );

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r1.json")).unwrap()).unwrap();
    for key in ["acc", "acc_rt", "acc_rp", "mtd", "mpd", "n_missed"] {
        assert!(report["report"][key].is_number(), "missing report.{key}");
    }
    let hist = std::fs::read_to_string(dir.path().join("h1.csv")).unwrap();
    assert!(hist.starts_with("turn_diff,count"));

    // One decision record per test transcript (15% of 100).
    let lines = String::from_utf8(d1).unwrap();
    assert_eq!(lines.lines().count(), 15);
}

#[test]
fn replay_strict_flag_is_plumbed_through() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus_and_checkpoint(dir.path());
    assert_ok(&run_in(dir.path(), &["replay", "-c", "run.cfg", "--strict-algorithm1", "--report", "rs.json"]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rs.json")).unwrap()).unwrap();
    assert_eq!(report["strict_algorithm1"], true);
}

#[test]
fn tune_threshold_reports_a_19_point_grid() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus_and_checkpoint(dir.path());
    assert_ok(&run_in(dir.path(), &["tune-threshold", "-c", "run.cfg", "--out", "tune.json"]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tune.json")).unwrap()).unwrap();
    assert_eq!(report["grid"].as_array().unwrap().len(), 19);
    let best = report["best_threshold"].as_f64().unwrap();
    assert!((0.05..=0.95).contains(&best));
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gradcheck"]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative gradient error"));

    let out = run_in(dir.path(), &["gradcheck", "--fault-inject"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detected"));
}

#[test]
fn training_is_reproducible_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_ok(&run_in(dir.path(), &["gen", "-c", "run.cfg"]));
    assert_ok(&run_in(dir.path(), &["train", "-c", "run.cfg", "--out", "m1.ckpt", "--log", "l1.csv"]));
    assert_ok(&run_in(dir.path(), &["train", "-c", "run.cfg", "--out", "m2.ckpt", "--log", "l2.csv"]));
    assert_eq!(
        std::fs::read(dir.path().join("m1.ckpt")).unwrap(),
        std::fs::read(dir.path().join("m2.ckpt")).unwrap(),
        "same config and seeds must produce byte-identical checkpoints"
    );
    assert_eq!(
        std::fs::read(dir.path().join("l1.csv")).unwrap(),
        std::fs::read(dir.path().join("l2.csv")).unwrap()
    );
}
