//! Experiment orchestration: flat `key = value` configs, method presets,
//! end-to-end runs and report comparison.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crossover::MaskSampling;
use crate::data::Direction;
use crate::error::{Error, Result};
use crate::evaluation::{
    clustering_metrics, direction_sets, evaluate_directions, group_averages,
    multiway_representations, robustness_sweep, winning_ratio, write_representations, DecodeConfig,
    ExperimentReport, ResourceGroup, Strategy,
};
use crate::model::{save_checkpoint, ModelConfig, Seq2Seq};
use crate::synthdata::{
    default_language_specs, generate_corpus, generate_multiway_eval, Corpus, MultiwaySet, Scenario,
    SyntheticWorld,
};
use crate::training::{train, Objective, TrainConfig, TrainSinks, TrainSummary};

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Free-form label copied into the report.
    pub method: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub data_seed: u64,
    /// Corpus size per non-English language, in language order.
    pub corpus_sizes: Vec<usize>,
    pub concept_size: usize,
    pub sentence_len: (usize, usize),
    /// `vocab_size` and `num_languages` are filled in from the language setup.
    pub model: ModelConfig,
    /// `seed` is overridden by the experiment seed.
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub eval_sentences: usize,
    /// `None` picks the default held-out pairs under many-to-many.
    pub zero_shot: Option<Vec<Direction>>,
    pub noise_fractions: Vec<f64>,
    pub cluster_sentences: usize,
    pub eval_seed: u64,
    pub baseline_report: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads for evaluation; 0 uses all cores.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let specs = default_language_specs();
        ExperimentConfig {
            method: "mle".into(),
            scenario: Scenario::ManyToMany,
            seed: 1,
            data_seed: 1,
            corpus_sizes: specs.iter().skip(1).map(|s| s.corpus_size).collect(),
            concept_size: 200,
            sentence_len: (4, 12),
            model: ModelConfig::desk_scale(0, 0),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            eval_sentences: 100,
            zero_shot: None,
            noise_fractions: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            cluster_sentences: 100,
            eval_seed: 7,
            baseline_report: None,
            output_dir: None,
            threads: 0,
        }
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "mle",
    "mixup",
    "xencdec-a",
    "xencdec-a-hard",
    "xencdec-s",
    "xencdec-s-hard",
    "xencdec-a-tau0",
    "xencdec-s-hard-tau0",
    "toy-m2m-mle",
    "toy-m2m-xencdec-s-hard",
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig {
        method: name.to_string(),
        ..ExperimentConfig::default()
    };
    let t = &mut c.train;
    match name {
        "mle" | "toy-m2m-mle" => t.objective = Objective::Mle,
        "mixup" => t.objective = Objective::Mixup,
        "xencdec-a" => t.objective = Objective::XEncDecAttention,
        "xencdec-a-hard" => {
            t.objective = Objective::XEncDecAttention;
            t.hard = true;
        }
        "xencdec-s" => t.objective = Objective::XEncDecSimplified,
        "xencdec-s-hard" | "toy-m2m-xencdec-s-hard" => {
            t.objective = Objective::XEncDecSimplified;
            t.hard = true;
        }
        "xencdec-a-tau0" => {
            t.objective = Objective::XEncDecAttention;
            t.sampler.tau = 0.0;
        }
        "xencdec-s-hard-tau0" => {
            t.objective = Objective::XEncDecSimplified;
            t.hard = true;
            t.sampler.tau = 0.0;
        }
        _ => {
            return Err(Error::invalid(
                "preset",
                format!("unknown preset {name:?}; known: {}", PRESETS.join(", ")),
            ))
        }
    }
    Ok(c)
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad list item {s:?}")))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (v != "none" && !v.is_empty()).then(|| PathBuf::from(v))
}

impl ExperimentConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid("config value", format!("{key} = {v}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::invalid("config value", format!("{key} = {v}"))),
            }
        }
        let v = value.trim();
        let t = &mut self.train;
        let m = &mut self.model;
        match key {
            "preset" => {
                let base = preset(v)?;
                *self = ExperimentConfig {
                    output_dir: self.output_dir.take(),
                    ..base
                };
            }
            "method" => self.method = v.to_string(),
            "scenario" => self.scenario = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "data_seed" => self.data_seed = num(key, v)?,
            "corpus_sizes" => {
                self.corpus_sizes = parse_list(v)
                    .map_err(|e| Error::invalid("config value", format!("{key}: {e}")))?
            }
            "concept_size" => self.concept_size = num(key, v)?,
            "min_sentence_len" => self.sentence_len.0 = num(key, v)?,
            "max_sentence_len" => self.sentence_len.1 = num(key, v)?,
            "num_layers" => m.num_layers = num(key, v)?,
            "model_dim" => m.model_dim = num(key, v)?,
            "num_heads" => m.num_heads = num(key, v)?,
            "ffn_dim" => m.ffn_dim = num(key, v)?,
            "max_len" => m.max_len = num(key, v)?,
            "label_smoothing" => m.label_smoothing = num(key, v)?,
            "tag_mode" => m.tag_mode = v.parse()?,
            "attention_layer" => {
                m.attention_layer = if v == "last" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "objective" => t.objective = v.parse()?,
            "hard" => t.hard = flag(key, v)?,
            "p" => t.sampler.p = num(key, v)?,
            "tau" => t.sampler.tau = num(key, v)?,
            "data_temperature" => t.sampler.data_temperature = num(key, v)?,
            "beta_start" => t.beta.start = num(key, v)?,
            "beta_end" => t.beta.end = num(key, v)?,
            "beta_warm_fraction" => t.beta.warm_fraction = num(key, v)?,
            "steps" => t.steps = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "warmup" => t.warmup = num(key, v)?,
            "adam_beta1" => t.adam_beta1 = num(key, v)?,
            "adam_beta2" => t.adam_beta2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "clip_norm" => t.clip_norm = num(key, v)?,
            "mixup_alpha" => t.mixup_alpha = num(key, v)?,
            "mask_sampling" => t.mask_sampling = v.parse::<MaskSampling>()?,
            "independent_pairing_batch" => t.independent_pairing_batch = flag(key, v)?,
            "forced_ratio" => {
                t.forced_ratio = if v == "none" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "log_every" => t.log_every = num(key, v)?,
            "decode" => self.decode.strategy = v.parse::<Strategy>()?,
            "beam_size" => self.decode.beam_size = num(key, v)?,
            "length_penalty" => self.decode.length_penalty = num(key, v)?,
            "max_decode_len" => self.decode.max_len = num(key, v)?,
            "eval_sentences" => self.eval_sentences = num(key, v)?,
            "zero_shot" => {
                self.zero_shot = if v == "auto" {
                    None
                } else {
                    Some(
                        v.split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty() && *s != "none")
                            .map(Direction::parse)
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "noise_fractions" => {
                self.noise_fractions = parse_list(v)
                    .map_err(|e| Error::invalid("config value", format!("{key}: {e}")))?
            }
            "cluster_sentences" => self.cluster_sentences = num(key, v)?,
            "eval_seed" => self.eval_seed = num(key, v)?,
            "baseline_report" => self.baseline_report = opt_path(v),
            "output_dir" => self.output_dir = opt_path(v),
            "threads" => self.threads = num(key, v)?,
            _ => return Err(Error::invalid("config key", format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a flat config: one `key = value` per line, `#` comments.
    /// A `preset` line resets every key to that preset and must come first.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let loc = format!("line {}", n + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(&loc, format!("expected `key = value`, found {line:?}"))
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::parse(&loc, format!("duplicate key {k:?}")));
            }
            if k == "preset" && seen.len() > 1 {
                return Err(Error::parse(&loc, "`preset` must be the first key"));
            }
            c.set(k, v).map_err(|e| Error::parse(&loc, e))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Every result-affecting key in text form. `output_dir`,
    /// `baseline_report` and `threads` are left out since they cannot
    /// change the trained model or its scores.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let m = &self.model;
        let d = &self.decode;
        let zero_shot = match &self.zero_shot {
            None => "auto".to_string(),
            Some(z) if z.is_empty() => "none".to_string(),
            Some(z) => join(z),
        };
        let entries: Vec<(&str, String)> = vec![
            ("method", self.method.clone()),
            ("scenario", self.scenario.to_string()),
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("corpus_sizes", join(&self.corpus_sizes)),
            ("concept_size", self.concept_size.to_string()),
            ("min_sentence_len", self.sentence_len.0.to_string()),
            ("max_sentence_len", self.sentence_len.1.to_string()),
            ("num_layers", m.num_layers.to_string()),
            ("model_dim", m.model_dim.to_string()),
            ("num_heads", m.num_heads.to_string()),
            ("ffn_dim", m.ffn_dim.to_string()),
            ("max_len", m.max_len.to_string()),
            ("label_smoothing", m.label_smoothing.to_string()),
            ("tag_mode", m.tag_mode.to_string()),
            (
                "attention_layer",
                m.attention_layer.map_or("last".into(), |l| l.to_string()),
            ),
            ("objective", t.objective.to_string()),
            ("hard", t.hard.to_string()),
            ("p", t.sampler.p.to_string()),
            ("tau", t.sampler.tau.to_string()),
            ("data_temperature", t.sampler.data_temperature.to_string()),
            ("beta_start", t.beta.start.to_string()),
            ("beta_end", t.beta.end.to_string()),
            ("beta_warm_fraction", t.beta.warm_fraction.to_string()),
            ("steps", t.steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("warmup", t.warmup.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("mixup_alpha", t.mixup_alpha.to_string()),
            ("mask_sampling", t.mask_sampling.to_string()),
            (
                "independent_pairing_batch",
                t.independent_pairing_batch.to_string(),
            ),
            (
                "forced_ratio",
                t.forced_ratio.map_or("none".into(), |r| r.to_string()),
            ),
            ("log_every", t.log_every.to_string()),
            ("decode", d.strategy.to_string()),
            ("beam_size", d.beam_size.to_string()),
            ("length_penalty", d.length_penalty.to_string()),
            ("max_decode_len", d.max_len.to_string()),
            ("eval_sentences", self.eval_sentences.to_string()),
            ("zero_shot", zero_shot),
            ("noise_fractions", join(&self.noise_fractions)),
            ("cluster_sentences", self.cluster_sentences.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
        ];
        entries
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// The config as parseable text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Zero-shot directions after resolving `auto`.
    pub fn zero_shot_directions(&self) -> Vec<Direction> {
        match (&self.zero_shot, self.scenario) {
            (Some(z), _) => z.clone(),
            (None, Scenario::ManyToMany) => ["l1-l2", "l2-l3"]
                .iter()
                .filter_map(|d| Direction::parse(d).ok())
                .filter(|d| {
                    d.src.0 <= self.corpus_sizes.len() && d.tgt.0 <= self.corpus_sizes.len()
                })
                .collect(),
            (None, _) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rules = default_language_specs().len() - 1;
        if self.corpus_sizes.is_empty() || self.corpus_sizes.len() > rules {
            return Err(Error::invalid(
                "corpus_sizes",
                format!(
                    "need 1 to {rules} non-English languages, found {}",
                    self.corpus_sizes.len()
                ),
            ));
        }
        let (lo, hi) = self.sentence_len;
        if lo == 0 || lo > hi {
            return Err(Error::invalid("sentence length", format!("{lo}..{hi}")));
        }
        // Room for the tag and EOS.
        if hi + 1 > self.model.max_len {
            return Err(Error::invalid(
                "max_sentence_len",
                format!("{hi} does not fit max_len {}", self.model.max_len),
            ));
        }
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.decode.validate()?;
        if self.eval_sentences == 0 {
            return Err(Error::invalid("eval_sentences", 0));
        }
        if self.cluster_sentences == 1 {
            return Err(Error::invalid(
                "cluster_sentences",
                "need 0 (off) or at least 2",
            ));
        }
        let zs = self.zero_shot_directions();
        if !zs.is_empty() && self.scenario != Scenario::ManyToMany {
            return Err(Error::invalid(
                "zero_shot",
                "zero-shot directions need the many_to_many scenario",
            ));
        }
        for d in &zs {
            if !d.is_zero_shot()
                || d.src == d.tgt
                || d.src.0 > self.corpus_sizes.len()
                || d.tgt.0 > self.corpus_sizes.len()
            {
                return Err(Error::invalid(
                    "zero_shot",
                    format!("{d} is not a non-English pair of this setup"),
                ));
            }
        }
        if self.noise_fractions.first() != Some(&0.0)
            || self.noise_fractions.windows(2).any(|w| !(w[0] < w[1]))
            || self
                .noise_fractions
                .iter()
                .any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(Error::invalid(
                "noise_fractions",
                "must start at 0, increase and stay within [0, 1]",
            ));
        }
        Ok(())
    }

    pub fn world(&self) -> Result<SyntheticWorld> {
        let mut specs = default_language_specs();
        specs.truncate(self.corpus_sizes.len() + 1);
        for (s, &n) in specs.iter_mut().skip(1).zip(&self.corpus_sizes) {
            s.corpus_size = n;
        }
        SyntheticWorld::new(&specs, self.concept_size, self.model.tag_mode)
    }

    pub fn model_config(&self) -> ModelConfig {
        let languages = self.corpus_sizes.len() + 1;
        ModelConfig {
            vocab_size: crate::data::Vocab::new(languages, self.concept_size).size(),
            num_languages: languages,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// Data shared by training and evaluation.
pub struct ExperimentData {
    pub world: SyntheticWorld,
    pub corpus: Corpus,
    pub eval: MultiwaySet,
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    let world = config.world()?;
    let corpus = generate_corpus(
        &world,
        config.scenario,
        config.sentence_len,
        config.data_seed,
    )?;
    let n = config.eval_sentences.max(config.cluster_sentences);
    let eval = generate_multiway_eval(&world, n, config.sentence_len, config.data_seed)?;
    Ok(ExperimentData {
        world,
        corpus,
        eval,
    })
}

pub fn train_model(
    config: &ExperimentConfig,
    data: &ExperimentData,
    metrics: Option<&mut dyn Write>,
) -> Result<(Seq2Seq, TrainSummary)> {
    let mut model = Seq2Seq::new(config.model_config(), config.seed)?;
    let sinks = TrainSinks {
        metrics,
        diagnostics_dir: config.output_dir.clone(),
    };
    let summary = train(&mut model, &data.corpus, &config.train_config(), sinks)?;
    Ok((model, summary))
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid("threads", e))?;
    Ok(pool.install(f))
}

/// Scores a trained model: clean BLEU, zero-shot BLEU, robustness and
/// clustering. `final_train_loss` is left at 0 for the caller to fill.
pub fn evaluate_model(
    model: &Seq2Seq,
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<ExperimentReport> {
    with_threads(config.threads, || evaluate_inner(model, config, data))?
}

fn evaluate_inner(
    model: &Seq2Seq,
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<ExperimentReport> {
    let world = &data.world;
    let trained = world.training_directions(config.scenario);
    let zero_shot = config.zero_shot_directions();
    let n = config.eval_sentences;
    let clean_sets = direction_sets(world, &data.eval, &trained, n)?;
    let zs_sets = direction_sets(world, &data.eval, &zero_shot, n)?;
    let to_strings = |m: BTreeMap<Direction, f64>| -> BTreeMap<String, f64> {
        m.into_iter().map(|(d, b)| (d.to_string(), b)).collect()
    };
    let bleu = to_strings(evaluate_directions(model, &clean_sets, &config.decode)?);
    let zs = to_strings(evaluate_directions(model, &zs_sets, &config.decode)?);
    let stats = data.corpus.stats()?;
    let direction_groups: BTreeMap<String, ResourceGroup> = trained
        .iter()
        .map(|&d| Ok((d.to_string(), ResourceGroup::of_size(stats.size(d)?))))
        .collect::<Result<_>>()?;
    let group_bleu = group_averages(&bleu, &direction_groups)?;

    let mut sweep_sets = clean_sets;
    sweep_sets.extend(zs_sets);
    let dict = world.dictionary();
    let robustness = robustness_sweep(
        model,
        &sweep_sets,
        &config.noise_fractions,
        &dict,
        &config.decode,
        config.eval_seed,
    )?;

    let clustering = if config.cluster_sentences >= 2 {
        let (keys, reps) =
            multiway_representations(model, world, &data.eval, config.cluster_sentences)?;
        let labels: Vec<u64> = keys.iter().map(|k| k.1).collect();
        Some(clustering_metrics(&reps, &labels)?)
    } else {
        None
    };
    let winning_ratio = match &config.baseline_report {
        Some(p) => Some(winning_ratio(&bleu, &read_report(p)?.bleu)?),
        None => None,
    };
    Ok(ExperimentReport {
        config: config.to_map(),
        scenario: config.scenario.to_string(),
        method: config.method.clone(),
        seed: config.seed,
        bleu,
        direction_groups,
        group_bleu,
        zero_shot: zs,
        winning_ratio,
        robustness,
        clustering,
        final_train_loss: 0.0,
    })
}

/// Trains, evaluates and, when `output_dir` is set, writes `report.json`,
/// `metrics.jsonl`, `model.ckpt`, `representations.tsv` and `config.txt`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let data = prepare_data(config)?;
    let mut metrics_file = match &config.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.txt"), config.to_text())?;
            Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
        }
        None => None,
    };
    let (model, summary) = train_model(
        config,
        &data,
        metrics_file.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = metrics_file {
        w.flush()?;
    }
    let mut report = evaluate_model(&model, config, &data)?;
    report.final_train_loss = summary.final_loss;
    if let Some(dir) = &config.output_dir {
        save_checkpoint(&dir.join("model.ckpt"), &model)?;
        write_report(&dir.join("report.json"), &report)?;
        if config.cluster_sentences >= 2 {
            let (keys, reps) = multiway_representations(
                &model,
                &data.world,
                &data.eval,
                config.cluster_sentences,
            )?;
            let mut w = BufWriter::new(File::create(dir.join("representations.tsv"))?);
            write_representations(&mut w, &keys, &reps)?;
            w.flush()?;
        }
    }
    Ok(report)
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn write_report(path: &Path, report: &ExperimentReport) -> Result<()> {
    fs::write(path, report_json(report)? + "\n")?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// `a − b` per direction and group, with `a`'s winning ratio over `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub direction_delta: BTreeMap<String, f64>,
    pub group_delta: BTreeMap<String, f64>,
    pub winning_ratio: f64,
    pub zero_shot_delta: BTreeMap<String, f64>,
    pub zero_shot_avg_delta: Option<f64>,
}

pub fn compare_reports(a: &ExperimentReport, b: &ExperimentReport) -> Result<Comparison> {
    if a.scenario != b.scenario {
        return Err(Error::invalid(
            "compare",
            format!("scenarios differ: {} vs {}", a.scenario, b.scenario),
        ));
    }
    let wr = winning_ratio(&a.bleu, &b.bleu)?;
    if !a.zero_shot.keys().eq(b.zero_shot.keys()) {
        return Err(Error::invalid("compare", "zero-shot direction sets differ"));
    }
    let delta = |x: &BTreeMap<String, f64>, y: &BTreeMap<String, f64>| -> BTreeMap<String, f64> {
        x.iter()
            .filter_map(|(k, v)| y.get(k).map(|w| (k.clone(), v - w)))
            .collect()
    };
    let zero_shot_delta = delta(&a.zero_shot, &b.zero_shot);
    let zero_shot_avg_delta = (!zero_shot_delta.is_empty())
        .then(|| zero_shot_delta.values().sum::<f64>() / zero_shot_delta.len() as f64);
    Ok(Comparison {
        method_a: a.method.clone(),
        method_b: b.method.clone(),
        direction_delta: delta(&a.bleu, &b.bleu),
        group_delta: delta(&a.group_bleu, &b.group_bleu),
        winning_ratio: wr,
        zero_shot_delta,
        zero_shot_avg_delta,
    })
}

impl Comparison {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table: per-direction deltas, then `Low Med High Avg WR`.
    pub fn to_table(&self) -> String {
        let mut s = format!("{} vs {}\n", self.method_a, self.method_b);
        for (d, v) in &self.direction_delta {
            s.push_str(&format!("{d:>8} {v:+8.2}\n"));
        }
        for (d, v) in &self.zero_shot_delta {
            s.push_str(&format!("{d:>8} {v:+8.2}  (zero-shot)\n"));
        }
        s.push_str(&format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "Low", "Med", "High", "Avg", "WR"
        ));
        let g = |k: &str| {
            self.group_delta
                .get(k)
                .map_or("-".to_string(), |v| format!("{v:+.2}"))
        };
        s.push_str(&format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8.2}\n",
            g("Low"),
            g("Med"),
            g("High"),
            g("Avg"),
            self.winning_ratio
        ));
        if let Some(z) = self.zero_shot_avg_delta {
            s.push_str(&format!("zero-shot avg {z:+.2}\n"));
        }
        s
    }
}
