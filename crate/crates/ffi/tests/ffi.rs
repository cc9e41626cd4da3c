use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use kgselect::graph::{build_graph, save_graph};
use kgselect::policy::{Policy, PolicyConfig};
use kgselect::testing::twenty_vertex_triples;
use kgselect::vocab::Vocab;
use kgselect_ffi::*;

/// Writes a graph, an untrained policy and a config into `dir`.
fn fixture(dir: &Path, extra: &str) -> PathBuf {
    let (triples, docs) = twenty_vertex_triples();
    let graph = build_graph(&triples, &docs, "has_comment").unwrap();
    save_graph(&graph, dir.join("graph.jsonl")).unwrap();
    let vocab = Vocab::build(graph.vertices().iter().map(|v| &v.tokens));
    let cfg = PolicyConfig {
        dim: 4,
        hidden: 8,
        ..PolicyConfig::default()
    };
    Policy::new(&graph, vocab, cfg, 1).unwrap().save(&dir.join("policy.ckpt")).unwrap();
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        format!(
            "[paths]\ngraph = \"graph.jsonl\"\npolicy_checkpoint = \"policy.ckpt\"\n\n[policy]\ndim = 4\nhidden = 8\n\n[env]\nhorizon = 2\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = kgs_last_error();
    assert!(!p.is_null(), "no error recorded");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn open(config: &Path) -> *mut KgsEngine {
    let mut engine = ptr::null_mut();
    let path = c(config.to_str().unwrap());
    let status = unsafe { kgs_engine_open(path.as_ptr(), &mut engine) };
    assert_eq!(status, KgsStatus::Ok, "{}", last_error());
    assert!(kgs_last_error().is_null());
    engine
}

fn respond(engine: *const KgsEngine, message: &[u8]) -> (KgsStatus, Option<serde_json::Value>) {
    let msg = CString::new(message).unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { kgs_engine_respond(engine, msg.as_ptr(), &mut out) };
    if out.is_null() {
        return (status, None);
    }
    let json = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { kgs_string_free(out) };
    (status, Some(serde_json::from_str(&json).unwrap()))
}

#[test]
fn open_respond_free() {
    let dir = tempfile::tempdir().unwrap();
    let engine = open(&fixture(dir.path(), ""));
    let mut n = 0u64;
    assert_eq!(unsafe { kgs_engine_vertex_count(engine, &mut n) }, KgsStatus::Ok);
    assert_eq!(n, 20);

    let (status, body) = respond(engine, b"what do people think of toy story");
    assert_eq!(status, KgsStatus::Ok);
    let body = body.unwrap();
    assert_eq!(body["path"].as_array().unwrap().len(), 2);
    assert!(!body["response"].as_str().unwrap().is_empty());
    let (_, again) = respond(engine, b"what do people think of toy story");
    assert_eq!(again.unwrap(), body);
    unsafe { kgs_engine_free(engine) };
}

#[test]
fn message_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let engine = open(&fixture(dir.path(), "\n[chat]\nmax_message_tokens = 3\n"));
    assert_eq!(respond(engine, b" ... ").0, KgsStatus::EmptyMessage);
    assert!(last_error().contains("no tokens"));
    assert_eq!(respond(engine, b"a b c d").0, KgsStatus::MessageTooLong);
    assert!(last_error().contains("4 tokens"));
    assert_eq!(respond(engine, b"\xff\xfe").0, KgsStatus::InvalidUtf8);
    assert_eq!(respond(engine, b"toy story").0, KgsStatus::Ok);
    assert!(kgs_last_error().is_null(), "success clears the error");
    unsafe { kgs_engine_free(engine) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut out: *mut c_char = ptr::null_mut();
    let msg = c("hi");
    assert_eq!(unsafe { kgs_engine_respond(ptr::null(), msg.as_ptr(), &mut out) }, KgsStatus::NullPointer);
    assert!(last_error().contains("engine"));
    assert_eq!(unsafe { kgs_engine_open(ptr::null(), ptr::null_mut()) }, KgsStatus::NullPointer);
    let mut engine = ptr::null_mut();
    assert_eq!(unsafe { kgs_engine_open(ptr::null(), &mut engine) }, KgsStatus::NullPointer);
    assert!(last_error().contains("config_path"));
    let mut n = 0;
    assert_eq!(unsafe { kgs_engine_vertex_count(ptr::null(), &mut n) }, KgsStatus::NullPointer);
    unsafe {
        kgs_engine_free(ptr::null_mut());
        kgs_string_free(ptr::null_mut());
    }
}

#[test]
fn open_failures_name_the_cause() {
    let dir = tempfile::tempdir().unwrap();
    let mut engine = ptr::null_mut();
    let missing = c(dir.path().join("absent.toml").to_str().unwrap());
    assert_eq!(unsafe { kgs_engine_open(missing.as_ptr(), &mut engine) }, KgsStatus::Config);
    assert!(last_error().contains("absent.toml"));
    assert!(engine.is_null());

    let cfg = fixture(dir.path(), "");
    std::fs::remove_file(dir.path().join("policy.ckpt")).unwrap();
    let path = c(cfg.to_str().unwrap());
    assert_eq!(unsafe { kgs_engine_open(path.as_ptr(), &mut engine) }, KgsStatus::Config);
    assert!(last_error().contains("paths.policy_checkpoint"), "{}", last_error());

    std::fs::write(dir.path().join("policy.ckpt"), "not a checkpoint").unwrap();
    assert_eq!(unsafe { kgs_engine_open(path.as_ptr(), &mut engine) }, KgsStatus::Load);
    assert!(engine.is_null());
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(kgs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn names(text: &str, prefix: &str) -> BTreeSet<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| w.starts_with(prefix))
        .map(str::to_string)
        .collect()
}

#[test]
fn header_matches_exports() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/kgselect.h")).unwrap();
    let source = std::fs::read_to_string(root.join("src/lib.rs")).unwrap();
    let exported: BTreeSet<String> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap().to_string())
        .collect();
    assert_eq!(names(&header, "kgs_"), exported);

    let codes = [
        ("KGS_OK", KgsStatus::Ok),
        ("KGS_NULL_POINTER", KgsStatus::NullPointer),
        ("KGS_INVALID_UTF8", KgsStatus::InvalidUtf8),
        ("KGS_CONFIG", KgsStatus::Config),
        ("KGS_LOAD", KgsStatus::Load),
        ("KGS_EMPTY_MESSAGE", KgsStatus::EmptyMessage),
        ("KGS_MESSAGE_TOO_LONG", KgsStatus::MessageTooLong),
        ("KGS_INTERNAL", KgsStatus::Internal),
        ("KGS_PANIC", KgsStatus::Panic),
    ];
    assert_eq!(names(&header, "KGS_").len(), codes.len());
    for (name, code) in codes {
        assert!(header.contains(&format!("{name} = {},", code as i32)), "{name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(root.join("include/kgselect.h"))
        .status()
    else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(status.success());
}

#[test]
fn c_program_links_against_the_static_library() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let lib = [deps, deps.parent().unwrap()]
        .iter()
        .map(|d| d.join("libkgselect_ffi.a"))
        .find(|p| p.exists());
    let Some(lib) = lib else {
        eprintln!("no static library, skipping");
        return;
    };
    if std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("demo");
    let status = std::process::Command::new("cc")
        .arg(root.join("tests/demo.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());

    let cfg = fixture(dir.path(), "");
    let out = std::process::Command::new(&bin).arg(&cfg).arg("toy story").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let body: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let engine = open(&cfg);
    let (_, direct) = respond(engine, b"toy story");
    unsafe { kgs_engine_free(engine) };
    assert_eq!(Some(body), direct);

    let out = std::process::Command::new(&bin).arg(&cfg).arg("   ").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("5 message has no tokens"));
}
