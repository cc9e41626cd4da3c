//! Files and helpers shared by the command-line tests.

#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use kgselect::testing::twenty_vertex_triples;

pub const BIN: &str = env!("CARGO_BIN_EXE_kgselect");

/// Selection examples whose targets are the first comment sentence of each
/// anchor.
pub fn selection_lines() -> Vec<String> {
    let (_, docs) = twenty_vertex_triples();
    let templates = ["what do people think of {}", "any comments on {}", "tell me something about {}"];
    let mut out = Vec::new();
    for t in templates {
        for d in &docs {
            let first = d.body.split(". ").next().unwrap_or(&d.body).trim_end_matches('.');
            out.push(
                serde_json::json!({
                    "message": t.replace("{}", &d.anchor),
                    "target": format!("{first}."),
                })
                .to_string(),
            );
        }
    }
    out
}

/// Copy corpus for the generator: the response is the knowledge sentence.
pub fn generation_lines() -> Vec<String> {
    let (_, docs) = twenty_vertex_triples();
    docs.iter()
        .flat_map(|d| {
            ["tell me about", "thoughts on"].map(|p| {
                serde_json::json!({
                    "message": format!("{p} {}", d.anchor),
                    "knowledge": d.body,
                    "response": d.body,
                })
                .to_string()
            })
        })
        .collect()
}

fn write_lines(path: &Path, lines: &[String]) {
    let mut f = std::fs::File::create(path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
}

/// Writes the twenty-vertex fixture and a config into `dir`, returning the
/// config path. `extra` is appended to the config.
pub fn write_fixture(dir: &Path, horizon: usize, extra: &str) -> PathBuf {
    let (triples, docs) = twenty_vertex_triples();
    write_lines(
        &dir.join("triples.jsonl"),
        &triples.iter().map(|t| serde_json::to_string(t).unwrap()).collect::<Vec<_>>(),
    );
    write_lines(
        &dir.join("docs.jsonl"),
        &docs.iter().map(|d| serde_json::to_string(d).unwrap()).collect::<Vec<_>>(),
    );
    write_lines(&dir.join("selection.jsonl"), &selection_lines());
    write_lines(&dir.join("generation.jsonl"), &generation_lines());
    let cfg = format!(
        r#"[paths]
triples = "triples.jsonl"
documents = "docs.jsonl"
graph = "out/graph.jsonl"
policy_checkpoint = "out/policy.ckpt"
generator_checkpoint = "out/generator.ckpt"
selection_data = "selection.jsonl"
generation_data = "generation.jsonl"
reports = "out/reports"

[policy]
dim = 8
hidden = 16
beam_width = 4

[env]
horizon = {horizon}

[trainer]
learning_rate = 0.01
epochs = 30
rollouts_per_example = 8
batch_size = 8

[generator]
dim = 16
hidden = 32
learning_rate = 0.01
epochs = 10
{extra}
"#
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

pub fn run(config: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("--config")
        .arg(config)
        .args(args)
        .env_remove("AKG_CONFIG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().expect("binary runs");
    {
        let mut input = child.stdin.take().unwrap();
        if let Some(s) = stdin {
            // The command may exit before reading its input.
            let _ = input.write_all(s.as_bytes());
        }
    }
    child.wait_with_output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs and panics with stderr on failure.
pub fn ok(config: &Path, args: &[&str], stdin: Option<&str>) -> String {
    let o = run(config, args, stdin);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}
