use mxencdec::experiment::{
    compare_reports, preset, read_report, run_experiment, ExperimentConfig,
};

fn tiny(method: &str) -> ExperimentConfig {
    let mut c = preset(method).unwrap();
    c.train.steps = 6;
    c.train.batch_size = 6;
    c.model.model_dim = 8;
    c.model.num_heads = 2;
    c.model.ffn_dim = 16;
    c.corpus_sizes = vec![120, 60];
    c.concept_size = 12;
    c.eval_sentences = 6;
    c.cluster_sentences = 4;
    c.noise_fractions = vec![0.0, 0.2];
    c
}

#[test]
fn run_writes_artifacts_and_self_comparison_is_neutral() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny("xencdec-s-hard");
    c.output_dir = Some(dir.path().to_path_buf());
    let report = run_experiment(&c).unwrap();
    for f in [
        "config.txt",
        "metrics.jsonl",
        "model.ckpt",
        "report.json",
        "representations.tsv",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let back = read_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, report);
    let saved = ExperimentConfig::load(&dir.path().join("config.txt")).unwrap();
    assert_eq!(saved.to_map(), c.to_map());

    let cmp = compare_reports(&report, &report).unwrap();
    assert_eq!(cmp.winning_ratio, 0.0);
    assert!(cmp.direction_delta.values().all(|&d| d == 0.0));
    assert!(cmp.group_delta.values().all(|&d| d == 0.0));
    assert_eq!(cmp.zero_shot_delta.len(), report.zero_shot.len());
}

#[test]
fn config_errors_are_reported() {
    assert!(ExperimentConfig::parse("preset = mle\nsteps = 10\nsteps = 20\n").is_err());
    assert!(ExperimentConfig::parse("steps = 10\npreset = mle\n").is_err());
    assert!(ExperimentConfig::parse("preset = mle\nno_such_key = 1\n").is_err());
    assert!(ExperimentConfig::parse("preset = nope\n").is_err());
    let err = ExperimentConfig::parse("preset = mle\n\nsteps = ten\n").unwrap_err();
    assert!(err.to_string().contains('3'), "{err}");

    let mut c = preset("mle").unwrap();
    c.set("scenario", "many_to_one").unwrap();
    c.set("zero_shot", "l1-l2").unwrap();
    assert!(c.validate().is_err());
    let mut c = preset("mle").unwrap();
    c.set("max_sentence_len", "40").unwrap();
    assert!(c.validate().is_err());
}
