use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mxencdec::evaluation::{
    direction_sets, multiway_representations, robustness_sweep, write_representations,
};
use mxencdec::experiment::{
    compare_reports, evaluate_model, prepare_data, preset, read_report, run_experiment,
    train_model, write_report, ExperimentConfig,
};
use mxencdec::model::{load_checkpoint, save_checkpoint, Seq2Seq};

/// Desk-scale multilingual crossover encoder-decoder lab.
#[derive(Parser)]
#[command(name = "mxencdec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset (applied before the file and --set).
    #[arg(long)]
    preset: Option<String>,
    /// Override one key, e.g. `--set steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory. Relative paths resolve under $MXENCDEC_OUTPUT_ROOT when set.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus, dictionary and resolved config.
    GenerateData(ConfigArgs),
    /// Train a model and write checkpoint and metrics log.
    Train(ConfigArgs),
    /// Evaluate a checkpoint and write a report.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate end to end, writing every artifact.
    Run(ConfigArgs),
    /// Compare two reports (A against baseline B).
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// BLEU under code-switching noise for each fraction and direction group.
    SweepNoise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Export mean-pooled encoder representations of the multiway set.
    ExportRepresentations {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os("MXENCDEC_OUTPUT_ROOT").map(PathBuf::from)
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut text = String::new();
        if let Some(p) = &self.preset {
            preset(p)?;
            text.push_str(&format!("preset = {p}\n"));
        }
        if let Some(path) = &self.config {
            let file =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            if self.preset.is_some() && file.lines().any(|l| l.trim_start().starts_with("preset")) {
                bail!(
                    "--preset conflicts with the preset line in {}",
                    path.display()
                );
            }
            text.push_str(&file);
        }
        let mut c = ExperimentConfig::parse(&text).with_context(|| "parsing config")?;
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
            c.set(k.trim(), v).with_context(|| format!("--set {o}"))?;
        }
        if let Some(out) = &self.out {
            c.output_dir = Some(match output_root() {
                Some(root) if out.is_relative() => root.join(out),
                _ => out.clone(),
            });
        }
        c.validate()?;
        Ok(c)
    }

    fn out_dir(c: &ExperimentConfig) -> Result<PathBuf> {
        let dir = c.output_dir.clone().with_context(|| "--out is required")?;
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

fn load_model(c: &ExperimentConfig, path: &PathBuf) -> Result<Seq2Seq> {
    let model = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let want = c.model_config();
    let got = model.config();
    if got.vocab_size != want.vocab_size
        || got.num_languages != want.num_languages
        || got.tag_mode != want.tag_mode
    {
        bail!(
            "checkpoint does not match the data config (vocab {} vs {}, languages {} vs {}, tag mode {} vs {})",
            got.vocab_size,
            want.vocab_size,
            got.num_languages,
            want.num_languages,
            got.tag_mode,
            want.tag_mode
        );
    }
    Ok(model)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(args) => {
            let c = args.resolve()?;
            let dir = ConfigArgs::out_dir(&c)?;
            let data = prepare_data(&c)?;
            fs::write(dir.join("config.txt"), c.to_text())?;
            let mut w = BufWriter::new(File::create(dir.join("corpus.tsv"))?);
            data.corpus.write_tsv(&mut w)?;
            w.flush()?;
            let mut w = BufWriter::new(File::create(dir.join("dictionary.tsv"))?);
            data.world.dictionary().write_tsv(&mut w)?;
            w.flush()?;
            eprintln!(
                "wrote {} examples to {}",
                data.corpus.num_examples(),
                dir.display()
            );
        }
        Command::Train(args) => {
            let c = args.resolve()?;
            let dir = ConfigArgs::out_dir(&c)?;
            let data = prepare_data(&c)?;
            fs::write(dir.join("config.txt"), c.to_text())?;
            let mut metrics = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
            let (model, summary) = train_model(&c, &data, Some(&mut metrics))?;
            metrics.flush()?;
            save_checkpoint(&dir.join("model.ckpt"), &model)?;
            eprintln!(
                "trained {} steps, final loss {:.4}",
                summary.steps, summary.final_loss
            );
        }
        Command::Evaluate { cfg, checkpoint } => {
            let c = cfg.resolve()?;
            let model = load_model(&c, &checkpoint)?;
            let data = prepare_data(&c)?;
            let report = evaluate_model(&model, &c, &data)?;
            match &c.output_dir {
                Some(_) => write_report(&ConfigArgs::out_dir(&c)?.join("report.json"), &report)?,
                None => println!("{}", mxencdec::experiment::report_json(&report)?),
            }
        }
        Command::Run(args) => {
            let c = args.resolve()?;
            ConfigArgs::out_dir(&c)?;
            let report = run_experiment(&c)?;
            println!("{}", mxencdec::experiment::report_json(&report)?);
        }
        Command::Compare {
            report_a,
            report_b,
            json,
        } => {
            let cmp = compare_reports(&read_report(&report_a)?, &read_report(&report_b)?)?;
            if json {
                println!("{}", cmp.to_json()?);
            } else {
                print!("{}", cmp.to_table());
            }
        }
        Command::SweepNoise { cfg, checkpoint } => {
            let c = cfg.resolve()?;
            let model = load_model(&c, &checkpoint)?;
            let data = prepare_data(&c)?;
            let mut dirs = data.world.training_directions(c.scenario);
            dirs.extend(c.zero_shot_directions());
            let sets = direction_sets(&data.world, &data.eval, &dirs, c.eval_sentences)?;
            let curve = robustness_sweep(
                &model,
                &sets,
                &c.noise_fractions,
                &data.world.dictionary(),
                &c.decode,
                c.eval_seed,
            )?;
            println!("fraction\tgroup\tbleu");
            for p in curve {
                println!("{}\t{}\t{:.4}", p.fraction, p.group, p.bleu);
            }
        }
        Command::ExportRepresentations { cfg, checkpoint } => {
            let c = cfg.resolve()?;
            let model = load_model(&c, &checkpoint)?;
            let data = prepare_data(&c)?;
            let dir = ConfigArgs::out_dir(&c)?;
            let n = c.cluster_sentences.max(1);
            let (keys, reps) = multiway_representations(&model, &data.world, &data.eval, n)?;
            let mut w = BufWriter::new(File::create(dir.join("representations.tsv"))?);
            write_representations(&mut w, &keys, &reps)?;
            w.flush()?;
            eprintln!(
                "wrote {} rows to {}",
                keys.len(),
                dir.join("representations.tsv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
