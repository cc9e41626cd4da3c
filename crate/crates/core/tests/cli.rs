mod common;

use std::path::Path;

use common::{ok, run, stderr, stdout, write_fixture};

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn last_holdout(log: &str) -> f64 {
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    last["holdout_hit1"].as_f64().unwrap()
}

#[test]
fn build_train_eval_chat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 2, "");
    let out = ok(&cfg, &["build-graph"], None);
    assert!(out.contains("vertices 20 (entities 10, sentences 10)"), "{out}");

    ok(&cfg, &["train-select"], None);
    let log = read(&dir.path().join("out/reports/train_select.jsonl"));
    assert_eq!(log.lines().count(), 30);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "mean_reward", "holdout_hit1", "baseline"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }

    let eval = ok(&cfg, &["eval"], None);
    let report: serde_json::Value = serde_json::from_str(&read(&dir.path().join("out/reports/eval.jsonl"))).unwrap();
    assert_eq!(report["hit1"].as_f64().unwrap(), last_holdout(&log), "{eval}");

    let chat = ok(
        &cfg,
        &["chat"],
        Some("what do people think of toy story\n\n/quit\nnever read\n"),
    );
    let lines: Vec<&str> = chat.lines().collect();
    assert_eq!(lines.len(), 2, "{chat}");
    assert_eq!(lines[0], "a landmark of computer animation");
    assert!(lines[1].starts_with("path: Toy Story —has_comment→ A landmark of computer animation."));
    assert_eq!(lines[1].matches('→').count(), 2);
}

#[test]
fn chat_reports_bad_messages_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 1, "[chat]\nmax_message_tokens = 4\n");
    ok(&cfg, &["build-graph"], None);
    ok(&cfg, &["train-select"], None);
    let o = run(&cfg, &["chat", "--horizon", "3"], Some("one two three four five\n... \ntoy story\n"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("5 tokens, the limit is 4"), "{}", stderr(&o));
    assert!(stderr(&o).contains("no tokens"), "{}", stderr(&o));
    let out = stdout(&o);
    let path = out.lines().find(|l| l.starts_with("path: ")).unwrap();
    assert_eq!(path.matches('→').count(), 3, "--horizon overrides the config");
}

#[test]
fn build_graph_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 2, "");
    ok(&cfg, &["build-graph"], None);
    let first = std::fs::read(dir.path().join("out/graph.jsonl")).unwrap();
    ok(&cfg, &["build-graph"], None);
    assert_eq!(first, std::fs::read(dir.path().join("out/graph.jsonl")).unwrap());
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 2, "");
    std::fs::remove_file(dir.path().join("docs.jsonl")).unwrap();
    let o = run(&cfg, &["build-graph"], None);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: ") && err.contains("paths.documents") && err.contains("docs.jsonl"), "{err}");

    let o = run(&cfg, &["chat"], Some("hi\n"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("graph.jsonl"), "{}", stderr(&o));
}

#[test]
fn invalid_settings_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 2, "");
    let o = run(&cfg, &["build-graph", "--horizon", "0"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("env.horizon"), "{}", stderr(&o));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[policy]\ndim = 0\n").unwrap();
    let o = run(&bad, &["eval"], None);
    assert!(stderr(&o).contains("policy.dim"), "{}", stderr(&o));

    std::fs::write(&bad, "[trainer]\nlearnig_rate = 0.1\n").unwrap();
    let o = run(&bad, &["eval"], None);
    assert!(stderr(&o).contains("learnig_rate"), "{}", stderr(&o));

    let o = run(&dir.path().join("absent.toml"), &["eval"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.toml"), "{}", stderr(&o));
}

#[test]
fn bad_record_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 2, "");
    ok(&cfg, &["build-graph"], None);
    let sel = dir.path().join("selection.jsonl");
    let mut text = read(&sel);
    text.push_str("{\"message\": \"hello\", \"target\": \"Nowhere\"}\n");
    std::fs::write(&sel, text).unwrap();
    let o = run(&cfg, &["train-select"], None);
    assert!(stderr(&o).contains("record 25") && stderr(&o).contains("Nowhere"), "{}", stderr(&o));
}

#[test]
fn fixed_seed_gives_identical_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for (dir, seed) in [(&a, "5"), (&b, "5")] {
        let cfg = write_fixture(dir.path(), 2, "");
        ok(&cfg, &["build-graph"], None);
        ok(&cfg, &["train-select", "--seed", seed], None);
        logs.push((
            read(&dir.path().join("out/reports/train_select.jsonl")),
            std::fs::read(dir.path().join("out/policy.ckpt")).unwrap(),
        ));
    }
    assert_eq!(logs[0], logs[1]);

    let cfg = write_fixture(a.path(), 2, "");
    ok(&cfg, &["train-select", "--seed", "6"], None);
    assert_ne!(std::fs::read(a.path().join("out/policy.ckpt")).unwrap(), logs[0].1);
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 2, "");
    let o = std::process::Command::new(common::BIN)
        .arg("build-graph")
        .env("AKG_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/graph.jsonl").exists());
}

#[test]
fn neural_generator_in_chat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 2, "");
    ok(&cfg, &["build-graph"], None);
    ok(&cfg, &["train-select"], None);
    let out = ok(&cfg, &["train-gen"], None);
    assert!(out.contains("holdout exact match"), "{out}");
    let log = read(&dir.path().join("out/reports/train_gen.jsonl"));
    assert_eq!(log.lines().count(), 11);

    let neural = write_fixture(dir.path(), 2, "[chat]\ngenerator = \"neural\"\n");
    let reply = ok(&neural, &["chat"], Some("what do people think of toy story\n"));
    let lines: Vec<&str> = reply.lines().collect();
    assert_eq!(lines.len(), 2, "{reply}");
    assert_eq!(lines[1].matches('→').count(), 2);
}

#[test]
fn ablation_and_reduction_reports() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "[eval]\nfractions = [1.0, 0.5]\nseeds = [0, 1]\n\n[reader_task]\nhubs = 3\nper_hub = 4\nseen_per_hub = 2\nseed = 0\n";
    let cfg = write_fixture(dir.path(), 1, extra);
    let out = ok(&cfg, &["ablate"], None);
    assert_eq!(out.lines().count(), 10, "{out}");
    let report = read(&dir.path().join("out/reports/ablation.jsonl"));
    assert_eq!(report.lines().count(), 20);
    let first: serde_json::Value = serde_json::from_str(report.lines().next().unwrap()).unwrap();
    assert_eq!(first["variant"], "full");
    assert_eq!(first["per_seed"].as_array().unwrap().len(), 2);

    let out = ok(&cfg, &["reduce"], None);
    assert!(out.starts_with("random-policy floor"), "{out}");
    let curve = read(&dir.path().join("out/reports/reduction.jsonl"));
    assert_eq!(curve.lines().count(), 4);
}
