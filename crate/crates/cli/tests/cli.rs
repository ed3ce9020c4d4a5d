use std::path::Path;
use std::process::{Command, Output};

fn mxencdec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mxencdec"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MXENCDEC_OUTPUT_ROOT")
        .output()
        .unwrap()
}

#[rustfmt::skip]
const TINY: &[&str] = &[
    "--set", "steps=4",
    "--set", "batch_size=4",
    "--set", "model_dim=8",
    "--set", "ffn_dim=16",
    "--set", "num_layers=1",
    "--set", "corpus_sizes=60,30",
    "--set", "concept_size=10",
    "--set", "eval_sentences=4",
    "--set", "cluster_sentences=3",
    "--set", "decode=greedy",
];

fn run(preset: &str, out: &Path, cwd: &Path) -> Output {
    let mut args = vec!["run", "--preset", preset, "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    mxencdec(&args, cwd)
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run("xencdec-a", &a, dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"method\""));
    assert!(run("mle", &b, dir.path()).status.success());

    let (ra, rb) = (a.join("report.json"), b.join("report.json"));
    let table = mxencdec(
        &["compare", ra.to_str().unwrap(), rb.to_str().unwrap()],
        dir.path(),
    );
    assert!(table.status.success());
    let text = String::from_utf8_lossy(&table.stdout);
    assert!(
        text.contains("xencdec-a vs mle") && text.contains("WR"),
        "{text}"
    );
    let json = mxencdec(
        &[
            "compare",
            "--json",
            ra.to_str().unwrap(),
            rb.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&json.stdout).contains("\"winning_ratio\""));

    let ckpt = a.join("model.ckpt");
    let mut args = vec![
        "sweep-noise",
        "--preset",
        "xencdec-a",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let sweep = mxencdec(&args, dir.path());
    assert!(
        sweep.status.success(),
        "{}",
        String::from_utf8_lossy(&sweep.stderr)
    );
    assert!(String::from_utf8_lossy(&sweep.stdout).starts_with("fraction\tgroup\tbleu"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "preset = mle\nsteps = many\n").unwrap();
    let out = mxencdec(
        &["train", "--config", cfg.to_str().unwrap(), "--out", "o"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = mxencdec(&["run", "--preset", "mle", "--set", "steps"], dir.path());
    assert!(!out.status.success());
    let out = mxencdec(&["compare", "missing.json", "missing.json"], dir.path());
    assert!(!out.status.success());
}
