//! Runs the command-line pipeline in a temporary directory.

fn run(args: &[&str]) {
    let mut argv = vec!["cscl"];
    argv.extend_from_slice(args);
    let code = cscl::cli::run(argv, &mut std::io::stdout());
    assert_eq!(code, 0, "{args:?} failed");
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let p = |name: &str| dir.path().join(name).display().to_string();
    let (data, run_dir, emb) = (p("data"), p("run"), p("emb"));
    let manifest = format!("{data}/manifest.json");
    let adapter = format!("{run_dir}/adapter.csck");
    let fusion = format!("{run_dir}/fusion.csck");

    run(&["gen-synth", "--out", &data, "--downstream-cases", "100"]);
    run(&[
        "train-stage1",
        "--manifest",
        &manifest,
        "--out",
        &run_dir,
        "--preset",
        "synthetic",
    ]);
    run(&[
        "train-stage2",
        "--manifest",
        &manifest,
        "--out",
        &run_dir,
        "--preset",
        "synthetic",
        "--adapter",
        &adapter,
    ]);
    run(&[
        "embed",
        "--manifest",
        &format!("{data}/downstream/manifest.json"),
        "--adapter",
        &adapter,
        "--mil",
        &fusion,
        "--out",
        &emb,
    ]);
    run(&[
        "eval-kshot",
        "--embeddings",
        &format!("{emb}/embeddings.json"),
        "--k",
        "10",
    ]);
    run(&[
        "eval-survival",
        "--embeddings",
        &format!("{emb}/embeddings.json"),
    ]);
}
