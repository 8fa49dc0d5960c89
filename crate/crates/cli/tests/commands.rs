use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn relwitness(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relwitness"))
        .env("RELWITNESS_DATA", data)
        .args(args)
        .output()
        .unwrap()
}

fn error_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error record");
    serde_json::from_str(line).expect("error record is JSON")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const SMALL: &[&str] = &[
    "--scenes",
    "2",
    "--seed",
    "7",
    "--set",
    "scene.furniture=[2, 2]",
    "--set",
    "scene.small_objects=[2, 3]",
    "--set",
    "scene.frames=4",
];

fn with_small<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

#[test]
fn unknown_flags_exit_with_a_usage_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = relwitness(dir.path(), &["synth", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["code"], "usage");
}

#[test]
fn missing_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = relwitness(dir.path(), &["witness"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"]["code"], "missing_input");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = relwitness(dir.path(), &["config", "--set", "trainer.learning_rat=0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["code"], "config");
    assert!(rec["error"]["message"].as_str().unwrap().contains("learning_rat"));
}

#[test]
fn config_file_and_flags_layer_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    std::fs::write(&file, "scenes = 3\nseed = 1\n[trainer]\nlearning_rate = 0.05\n").unwrap();
    let out = relwitness(
        dir.path(),
        &["config", "--config", file.to_str().unwrap(), "--seed", "4"],
    );
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["config"]["scenes"], 3);
    assert_eq!(v["config"]["seed"], 4);
    assert_eq!(v["config"]["trainer"]["learning_rate"], 0.05);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn synth_twice_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = relwitness(d.path(), &with_small("synth", &[]));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let list = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d.join("scenes"))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let files = list(a.path());
    assert_eq!(files.len(), 3);
    assert_eq!(files, list(b.path()));
}

#[test]
fn triage_counts_partition_the_witness_dump() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["synth", "propose"] {
        assert!(relwitness(dir.path(), &with_small(cmd, &[])).status.success());
    }
    let out = relwitness(dir.path(), &with_small("witness", &["--threads", "2"]));
    let records = stdout_json(&out)["result"]["records"].as_u64().unwrap();
    let out = relwitness(dir.path(), &with_small("triage", &[]));
    let r = &stdout_json(&out)["result"];
    let sum: u64 = ["miss_positive", "reliable_negative", "uncertain"]
        .iter()
        .map(|k| r[k].as_u64().unwrap())
        .sum();
    assert_eq!(sum, records);

    let out = relwitness(dir.path(), &["triage"]);
    assert_eq!(error_record(&out)["error"]["code"], "hash_mismatch");
    let out = relwitness(dir.path(), &["triage", "--force"]);
    assert!(out.status.success());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = relwitness(dir.path(), &["gradcheck"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert!(v["max_relative_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(v["terms"].as_array().unwrap().len(), 9);
}
