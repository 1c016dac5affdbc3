//! Drives the `grpolab` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn grpolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grpolab"))
        .args(args)
        .env_remove("GRPOLAB_CONFIG")
        .env_remove("GRPOLAB_DATASET")
        .env_remove("GRPOLAB_OUT_DIR")
        .env_remove("GRPOLAB_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) -> String {
    let path = dir.join("data.jsonl");
    let p = path.to_str().unwrap().to_string();
    let o = grpolab(&["synth", "--out", &p, "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

#[test]
fn help_lists_every_subcommand() {
    let o = grpolab(&["--help"]);
    assert!(o.status.success());
    for sub in ["train", "eval", "score", "keyframes", "gradcheck", "synth"] {
        assert!(stdout(&o).contains(sub), "missing {sub}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = grpolab(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            "dataset = \"{}\"\nout_dir = \"{}\"\n",
            dir.path().join("missing.jsonl").display(),
            out.display()
        ),
    )
    .unwrap();
    let o = grpolab(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing.jsonl"));
    assert!(!out.exists());
}

#[test]
fn no_dataset_at_all_is_a_usage_error() {
    let o = grpolab(&["train", "--out-dir", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_train_invocations_produce_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = grpolab(&["train", "--dataset", &data, "--out-dir", out.to_str().unwrap(), "--steps", "40", "--seed", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["metrics.jsonl", "metrics.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("metrics.jsonl")).unwrap().lines().count(), 40);
}

#[test]
fn config_from_environment_with_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("env-run");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("training_steps = 7\nvariant = \"dr_grpo\"\ndataset = \"{data}\"\n")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_grpolab"))
        .arg("train")
        .env("GRPOLAB_CONFIG", &cfg)
        .env("GRPOLAB_OUT_DIR", &out)
        .env("GRPOLAB_SEED", "99")
        .env_remove("GRPOLAB_DATASET")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 99"));
    assert!(resolved.contains("variant = \"dr_grpo\""));
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 7);
}

#[test]
fn eval_modes_report_the_same_question_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("run");
    let o = grpolab(&["train", "--dataset", &data, "--out-dir", out.to_str().unwrap(), "--steps", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = out.join("checkpoint.bin");
    let mut counts = Vec::new();
    for mode in ["reasoning", "direct"] {
        let o = grpolab(&["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", &data, "--mode", mode]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        assert_eq!(report["mode"], mode);
        counts.push(report["n_questions"].as_u64().unwrap());
    }
    assert_eq!(counts, vec![256, 256]);
}

#[test]
fn eval_rejects_a_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let ck = dir.path().join("bad.bin");
    fs::write(&ck, b"not a checkpoint").unwrap();
    let o = grpolab(&["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", &data]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint"));
}

#[test]
fn score_writes_one_line_per_completion() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let output = dir.path().join("out.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"question_id":"a","completion_text":"<think>x</think><answer>A</answer>","task_kind":"mcqa","gold_answer":"A","expects_frames":false}"#,
            "\n",
            r#"{"question_id":"b","completion_text":"<answer>put cup</answer>","task_kind":"open","gold_answer":"put the cup down","expects_frames":false}"#,
            "\n"
        ),
    )
    .unwrap();
    let o = grpolab(&["score", "--in", input.to_str().unwrap(), "--out", output.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["total"], 2.0);
    assert_eq!(lines[1]["format"], 0.0);
}

#[test]
fn score_reports_the_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("completions.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"question_id":"a","completion_text":"","task_kind":"mcqa","gold_answer":"A","expects_frames":false}"#,
            "\n",
            r#"{"question_id":"b","completion_text":""}"#,
            "\n"
        ),
    )
    .unwrap();
    let o = grpolab(&["score", "--in", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("completions.jsonl:2:"), "{}", stderr(&o));
}

#[test]
fn keyframe_cache_feeds_a_keyframe_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cache = dir.path().join("kf.jsonl");
    let o = grpolab(&["keyframes", "--dataset", &data, "--mode", "top_k:1", "--scorer", "cosine", "--out", cache.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&cache).unwrap().lines().count(), 256);

    let cfg = dir.path().join("kf.toml");
    let out = dir.path().join("kf-run");
    fs::write(
        &cfg,
        format!(
            "training_steps = 10\ntemplate_kind = \"detailed_keyframes\"\nkeyframe_mode = \"top_k:1\"\nkeyframe_cache = \"{}\"\ndataset = \"{data}\"\nout_dir = \"{}\"\n",
            cache.display(),
            out.display()
        ),
    )
    .unwrap();
    let o = grpolab(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let m: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(m["mean_keyframe_reward"].is_number());
}

#[test]
fn gradcheck_prints_the_error_and_succeeds() {
    let o = grpolab(&["gradcheck", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("max relative error"));
}
