use std::path::Path;
use std::process::{Command, Output};

fn cscl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cscl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn cscl")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path) {
    let out = cscl(&[
        "gen-synth",
        "--out",
        s(dir),
        "--n-cases",
        "6",
        "--n-patches",
        "8",
        "--dim-embed",
        "16",
        "--downstream-cases",
        "24",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_synth_then_validate() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    let manifest = tmp.path().join("manifest.json");
    let out = cscl(&["validate", "--manifest", s(&manifest)]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["cases"], 6);
    assert_eq!(summary["cases_with_ihc"], 6);
    assert_eq!(summary["dim"], 16);

    let ds = tmp.path().join("downstream/manifest.json");
    assert_eq!(
        cscl(&["validate", "--manifest", s(&ds), "--allow-he-only"])
            .status
            .code(),
        Some(0)
    );
    let out = cscl(&[
        "train-stage1",
        "--manifest",
        s(&ds),
        "--out",
        s(&tmp.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stage2_without_adapter_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    let out = cscl(&[
        "train-stage2",
        "--manifest",
        s(&tmp.path().join("manifest.json")),
        "--out",
        s(&tmp.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--adapter"));
}

#[test]
fn unknown_flag_exits_two() {
    assert_eq!(
        cscl(&["gen-synth", "--out", "x", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(cscl(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn held_lock_fails_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join(".cscl.lock"), "1").unwrap();
    let out = cscl(&["gen-synth", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn corrupt_bag_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    let bag = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .chain(
            std::fs::read_dir(tmp.path().join("bags"))
                .into_iter()
                .flatten()
                .map(|e| e.unwrap().path()),
        )
        .find(|p| p.extension().is_some_and(|e| e == "cseb"))
        .expect("a bag file");
    std::fs::write(&bag, b"NOPE").unwrap();
    let out = cscl(&[
        "validate",
        "--manifest",
        s(&tmp.path().join("manifest.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn short_pipeline_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    let manifest = d.join("manifest.json");
    let train = |stage: &str, extra: &[&str]| {
        let mut args = vec![
            stage,
            "--manifest",
            s(&manifest),
            "--out",
            s(d),
            "--preset",
            "synthetic",
            "--epochs",
            "2",
            "--warmup-epochs",
            "1",
        ];
        args.extend_from_slice(extra);
        let out = cscl(&args);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    train("train-stage1", &[]);
    let adapter = d.join("adapter.csck");
    train("train-stage2", &["--adapter", s(&adapter)]);
    let fusion = d.join("fusion.csck");
    let log = std::fs::read_to_string(d.join("stage1_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 2);

    let emb = d.join("emb");
    let out = cscl(&[
        "embed",
        "--manifest",
        s(&d.join("downstream/manifest.json")),
        "--adapter",
        s(&adapter),
        "--mil",
        s(&fusion),
        "--out",
        s(&emb),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = cscl(&[
        "eval-kshot",
        "--embeddings",
        s(&emb.join("embeddings.json")),
        "--k",
        "2",
        "--seeds",
        "0,1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["values"].as_array().unwrap().len(), 2);
    let out = cscl(&[
        "retrieval",
        "--manifest",
        s(&manifest),
        "--adapter",
        s(&adapter),
        "--fusion",
        s(&fusion),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
