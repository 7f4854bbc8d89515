// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use circuitlab::counterfactual::{generate_pairs, CorruptionType, PairRecord};
use circuitlab::logic::GenConfig;
use circuitlab::promptgen::{read_dataset, read_jsonl, synth_dataset, SynthConfig};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_circuitlab")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_kind(out: &Output) -> String {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn synth_matches_the_library_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    let o = run(&["synth", "--k", "2", "--n", "20", "--seed", "4", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_dataset(&out).unwrap(), synth_dataset(&SynthConfig::new(2, 20, 4)).unwrap());
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
}

#[test]
fn corrupt_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.jsonl");
    let o = run(&["corrupt", "--type", "c3", "--n", "5", "--k", "1", "--seed", "2", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got: Vec<PairRecord> = read_jsonl(&out).unwrap();
    assert_eq!(got, generate_pairs(5, 1, CorruptionType::C3, 2, &GenConfig::default()).unwrap().pairs);
}

#[test]
fn exit_codes_separate_usage_data_and_backend_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = dir.path().join("o.json");

    let o = run(&["aie", "--pairs", path(&missing), "--mode", "sideways", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["aie", "--pairs", path(&missing), "--mode", "preceding-token", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_kind(&o), "data");

    let pairs = dir.path().join("p.jsonl");
    assert!(run(&["corrupt", "--type", "c1", "--n", "1", "--k", "0", "--out", path(&pairs)]).status.success());
    // nothing listens on port 9 of loopback
    let o = run(&["aie", "--endpoint", "http://127.0.0.1:9", "--pairs", path(&pairs), "--mode", "preceding-token", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_kind(&o), "backend");
}
