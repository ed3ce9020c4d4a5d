//! Objectives, optimiser and the training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::crossover::{
    build_crossover_batch, build_mixup_batch, sample_masks, smoothed_labels, CrossoverBatch,
    CrossoverConfig, MaskSampling, ParentSignals, TargetMode,
};
use crate::data::{ParallelBatch, ParallelExample};
use crate::error::{Error, Result};
use crate::model::{Bound, ForwardOutput, Seq2Seq};
use crate::sampling::{
    sample_pair_ratio, shuffle_for_pairing, stream_rng, streams, CorpusSampler, LangPairStats,
    SamplerConfig,
};
use crate::synthdata::Corpus;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Mle,
    Mixup,
    XEncDecAttention,
    XEncDecSimplified,
}

impl Objective {
    pub fn is_crossover(self) -> bool {
        matches!(
            self,
            Objective::XEncDecAttention | Objective::XEncDecSimplified
        )
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Objective::Mle),
            "mixup" => Ok(Objective::Mixup),
            "xencdec_attention" | "xencdec_a" => Ok(Objective::XEncDecAttention),
            "xencdec_simplified" | "xencdec_s" => Ok(Objective::XEncDecSimplified),
            _ => Err(Error::invalid("objective", s)),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Mle => "mle",
            Objective::Mixup => "mixup",
            Objective::XEncDecAttention => "xencdec_attention",
            Objective::XEncDecSimplified => "xencdec_simplified",
        })
    }
}

/// Linear ramp of the co-refinement weight from `start` to `end` over the
/// first `warm_fraction` of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub warm_fraction: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule {
            start: 0.0,
            end: 0.7,
            warm_fraction: 0.1,
        }
    }
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        BetaSchedule {
            start: beta,
            end: beta,
            warm_fraction: 0.0,
        }
    }

    pub fn anneal_steps(&self, total_steps: usize) -> usize {
        (self.warm_fraction * total_steps as f64).round() as usize
    }

    pub fn value(&self, step: usize, total_steps: usize) -> f64 {
        let warm = self.anneal_steps(total_steps);
        if step >= warm {
            self.end
        } else {
            self.start + (self.end - self.start) * step as f64 / warm as f64
        }
    }
}

/// Linear warm-up to `peak` at step `warmup`, then inverse-square-root decay.
pub fn learning_rate(peak: f64, warmup: usize, step: usize) -> f64 {
    let s = (step + 1) as f64;
    let w = warmup.max(1) as f64;
    peak * (s / w).min((w / s).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Quantise decoder-input weights across different target languages.
    pub hard: bool,
    pub sampler: SamplerConfig,
    pub beta: BetaSchedule,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub mixup_alpha: f64,
    pub mask_sampling: MaskSampling,
    /// Draw the crossover batch independently of the clean batch.
    pub independent_pairing_batch: bool,
    /// Replace the sampled shuffle ratio by a constant.
    pub forced_ratio: Option<f64>,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Mle,
            hard: false,
            sampler: SamplerConfig::default(),
            beta: BetaSchedule::default(),
            steps: 3000,
            batch_size: 32,
            lr: 3e-3,
            warmup: 400,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            clip_norm: 1.0,
            mixup_alpha: 0.2,
            mask_sampling: MaskSampling::Bernoulli,
            independent_pairing_batch: false,
            forced_ratio: None,
            log_every: 100,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        for (what, b) in [("beta start", self.beta.start), ("beta end", self.beta.end)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::invalid(what, b));
            }
        }
        if !(0.0..=1.0).contains(&self.beta.warm_fraction) {
            return Err(Error::invalid(
                "beta warm fraction",
                self.beta.warm_fraction,
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", 0));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr", self.lr));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::invalid("mixup_alpha", self.mixup_alpha));
        }
        if let Some(r) = self.forced_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid("forced_ratio", r));
            }
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every", 0));
        }
        Ok(())
    }
}

/// Loss values of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_m: f64,
    /// Crossover (or mixup) loss; 0 for plain MLE.
    pub l_x: f64,
    pub total: f64,
    /// Mean clean loss per direction in the batch.
    pub per_pair_m: BTreeMap<String, f64>,
    /// Mean virtual-example loss per direction of the first parent.
    pub per_pair_x: BTreeMap<String, f64>,
}

fn per_direction(rows: &[f64], row_dirs: impl Iterator<Item = String>) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (kl, d) in rows.iter().zip(row_dirs) {
        let e = acc.entry(d).or_default();
        e.0 += kl;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(d, (s, n))| (d, s / n as f64))
        .collect()
}

fn active_directions<'a>(
    dirs: &'a [crate::data::Direction],
    mask: &'a [bool],
    len: usize,
) -> impl Iterator<Item = String> + 'a {
    mask.iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(move |(r, _)| dirs[r / len].to_string())
}

/// Clean loss: mean over real target positions of `KL(v(y_j) ‖ P_j)`.
pub fn mle_objective(
    model: &Seq2Seq,
    g: &mut Graph,
    b: &Bound,
    batch: &ParallelBatch,
) -> Result<(Var, ForwardOutput, BTreeMap<String, f64>)> {
    let out = model.forward(g, b, batch)?;
    let labels = smoothed_labels(
        &batch.target,
        model.config().vocab_size,
        model.config().label_smoothing,
    );
    let active: Vec<bool> = batch.tgt_pad.iter().map(|p| !p).collect();
    let (loss, rows) = g.kl_mean_rows(out.log_probs, labels, &active)?;
    let per = per_direction(
        &rows,
        active_directions(&batch.directions, &active, batch.tgt_len),
    );
    Ok((loss, out, per))
}

/// Virtual-example loss: mean over unmasked positions of `KL(v(ỹ_j) ‖ P_j)`.
pub fn crossover_objective(
    model: &Seq2Seq,
    g: &mut Graph,
    b: &Bound,
    cb: &CrossoverBatch,
) -> Result<(Var, BTreeMap<String, f64>)> {
    let out = cb.forward(model, g, b)?;
    let (loss, rows) = g.kl_mean_rows(out.log_probs, cb.labels.clone(), &cb.loss_mask)?;
    let dirs: Vec<_> = cb.pairs.iter().map(|p| p.parent_a.0).collect();
    let per = per_direction(&rows, active_directions(&dirs, &cb.loss_mask, cb.tgt_len));
    Ok((loss, per))
}

/// Value of the clean loss under frozen parameters.
pub fn mle_loss(model: &Seq2Seq, batch: &ParallelBatch) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let b = model.bind_frozen(&mut g);
    let (loss, _, per) = mle_objective(model, &mut g, &b, batch)?;
    let l_m = g.value(loss).item();
    Ok(LossBreakdown {
        l_m,
        l_x: 0.0,
        total: l_m,
        per_pair_m: per,
        per_pair_x: BTreeMap::new(),
    })
}

/// Random choices for the virtual examples of one step.
pub struct PairingRngs<'a, R: Rng> {
    pub pairing: &'a mut R,
    pub ratio: &'a mut R,
    pub mask: &'a mut R,
    pub mixup: &'a mut R,
}

/// Crossover settings that vary per step.
#[derive(Clone, Debug)]
pub struct PairingOptions<'a> {
    pub config: &'a TrainConfig,
    pub stats: &'a LangPairStats,
    pub beta: f64,
}

/// Shuffles `batch`, draws ratios and masks and assembles the crossover batch.
pub fn plan_crossover<R: Rng>(
    model: &Seq2Seq,
    batch: &ParallelBatch,
    signals: &ParentSignals,
    opts: &PairingOptions<'_>,
    rngs: &mut PairingRngs<'_, R>,
) -> Result<CrossoverBatch> {
    let cfg = opts.config;
    let perm = shuffle_for_pairing(batch.batch, rngs.pairing);
    let ratios = perm
        .iter()
        .enumerate()
        .map(|(i, &p)| match cfg.forced_ratio {
            Some(r) => Ok(r),
            None => sample_pair_ratio(
                batch.directions[i],
                batch.directions[p],
                opts.stats,
                &cfg.sampler,
                rngs.ratio,
            ),
        })
        .collect::<Result<Vec<_>>>()?;
    let mc = model.config();
    let masks = sample_masks(
        batch,
        &perm,
        &ratios,
        mc.tag_mode,
        cfg.mask_sampling,
        rngs.mask,
    )?;
    let xc = CrossoverConfig {
        target_mode: if cfg.objective == Objective::XEncDecAttention {
            TargetMode::Attention
        } else {
            TargetMode::Simplified
        },
        hard: cfg.hard,
        mask_sampling: cfg.mask_sampling,
        beta: opts.beta,
        label_smoothing: mc.label_smoothing,
    };
    build_crossover_batch(batch, &perm, &masks, &ratios, Some(signals), mc, &xc)
}

/// Shuffles `batch`, draws one `λ ~ Beta(α, α)` per pair and assembles the
/// mixup batch.
pub fn plan_mixup<R: Rng>(
    model: &Seq2Seq,
    batch: &ParallelBatch,
    signals: &ParentSignals,
    opts: &PairingOptions<'_>,
    rngs: &mut PairingRngs<'_, R>,
) -> Result<CrossoverBatch> {
    let alpha = opts.config.mixup_alpha;
    let dist = Beta::new(alpha, alpha).map_err(|e| Error::invalid("mixup_alpha", e))?;
    let perm = shuffle_for_pairing(batch.batch, rngs.pairing);
    let lambdas: Vec<f64> = (0..batch.batch).map(|_| dist.sample(rngs.mixup)).collect();
    let mc = model.config();
    build_mixup_batch(
        batch,
        &perm,
        &lambdas,
        Some(signals),
        mc,
        opts.beta,
        mc.label_smoothing,
    )
}

/// Graph of the full objective for one step. `pair_batch` is the batch the
/// virtual examples are built from; `None` reuses `batch`.
pub struct StepGraph {
    pub graph: Graph,
    pub bound: Bound,
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub virtual_batch: Option<CrossoverBatch>,
}

pub fn build_step<R: Rng>(
    model: &Seq2Seq,
    batch: &ParallelBatch,
    pair_batch: Option<&ParallelBatch>,
    opts: &PairingOptions<'_>,
    rngs: &mut PairingRngs<'_, R>,
) -> Result<StepGraph> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let (lm, out, per_m) = mle_objective(model, &mut g, &b, batch)?;
    let objective = opts.config.objective;
    if objective == Objective::Mle {
        let l_m = g.value(lm).item();
        return Ok(StepGraph {
            graph: g,
            bound: b,
            total: lm,
            breakdown: LossBreakdown {
                l_m,
                l_x: 0.0,
                total: l_m,
                per_pair_m: per_m,
                per_pair_x: BTreeMap::new(),
            },
            virtual_batch: None,
        });
    }
    let (xbatch, signals) = match pair_batch {
        Some(pb) => (pb, ParentSignals::compute(model, pb)?),
        None => (batch, ParentSignals::from_forward(&g, &out)),
    };
    let cb = if objective == Objective::Mixup {
        plan_mixup(model, xbatch, &signals, opts, rngs)?
    } else {
        plan_crossover(model, xbatch, &signals, opts, rngs)?
    };
    let (lx, per_x) = crossover_objective(model, &mut g, &b, &cb)?;
    let total = g.add(lm, lx)?;
    let (l_m, l_x) = (g.value(lm).item(), g.value(lx).item());
    Ok(StepGraph {
        total,
        breakdown: LossBreakdown {
            l_m,
            l_x,
            total: g.value(total).item(),
            per_pair_m: per_m,
            per_pair_x: per_x,
        },
        graph: g,
        bound: b,
        virtual_batch: Some(cb),
    })
}

/// Loss values of the crossover objective under frozen parameters.
pub fn xencdec_loss<R: Rng>(
    model: &Seq2Seq,
    batch: &ParallelBatch,
    opts: &PairingOptions<'_>,
    rngs: &mut PairingRngs<'_, R>,
) -> Result<LossBreakdown> {
    if !opts.config.objective.is_crossover() {
        return Err(Error::invalid(
            "objective",
            "xencdec_loss needs a crossover objective",
        ));
    }
    Ok(build_step(model, batch, None, opts, rngs)?.breakdown)
}

/// Loss values of the mixup objective under frozen parameters.
pub fn mixup_loss<R: Rng>(
    model: &Seq2Seq,
    batch: &ParallelBatch,
    opts: &PairingOptions<'_>,
    rngs: &mut PairingRngs<'_, R>,
) -> Result<LossBreakdown> {
    if opts.config.objective != Objective::Mixup {
        return Err(Error::invalid(
            "objective",
            "mixup_loss needs the mixup objective",
        ));
    }
    Ok(build_step(model, batch, None, opts, rngs)?.breakdown)
}

/// Adam with decoupled bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales gradients in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm =
        crate::tensor::fsum(grads.iter().flat_map(|g| g.data().iter().map(|x| x * x))).sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads
            .iter_mut()
            .for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// One structured log record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_m: f64,
    pub l_x: f64,
    pub total: f64,
    pub beta: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub per_pair_m: BTreeMap<String, f64>,
    pub per_pair_x: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    /// Total loss of every step.
    pub losses: Vec<f64>,
    /// Mean total loss over the last 100 steps.
    pub final_loss: f64,
}

/// Where the loop writes its side outputs.
#[derive(Default)]
pub struct TrainSinks<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    /// Directory for the diagnostic dump written when training diverges.
    pub diagnostics_dir: Option<PathBuf>,
}

fn sample_batch<'c>(
    corpus: &'c Corpus,
    sampler: &CorpusSampler,
    n: usize,
    rng: &mut impl Rng,
) -> Result<ParallelBatch> {
    let mut picked: Vec<&'c ParallelExample> = Vec::with_capacity(n);
    for _ in 0..n {
        let d = sampler.sample(rng);
        let exs = &corpus.pairs[&d];
        picked.push(&exs[rng.random_range(0..exs.len())]);
    }
    if let Some(e) = picked.iter().find(|e| e.direction.is_zero_shot()) {
        return Err(Error::invalid(
            "training batch",
            format!("zero-shot direction {} in training data", e.direction),
        ));
    }
    ParallelBatch::new(&picked)
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    step: usize,
    detail: &'a str,
    breakdown: Option<&'a LossBreakdown>,
    directions: Vec<String>,
    sentence_ids: &'a [u64],
    source: &'a [usize],
    target: &'a [usize],
    pairs: Option<&'a [crate::crossover::PairRecord]>,
}

fn diverged(
    sinks: &TrainSinks<'_>,
    step: usize,
    detail: String,
    batch: &ParallelBatch,
    sg: Option<&StepGraph>,
) -> Error {
    if let Some(dir) = &sinks.diagnostics_dir {
        let diag = Diagnostic {
            step,
            detail: &detail,
            breakdown: sg.map(|s| &s.breakdown),
            directions: batch.directions.iter().map(|d| d.to_string()).collect(),
            sentence_ids: &batch.sentence_ids,
            source: &batch.source,
            target: &batch.target,
            pairs: sg
                .and_then(|s| s.virtual_batch.as_ref())
                .map(|cb| cb.pairs.as_slice()),
        };
        let path = dir.join(format!("divergence_step{step}.json"));
        let written = std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .and_then(|_| Ok(std::fs::write(&path, serde_json::to_vec_pretty(&diag)?)?));
        if let Err(e) = written {
            return Error::Diverged {
                step,
                detail: format!("{detail} (diagnostic dump failed: {e})"),
            };
        }
    }
    Error::Diverged { step, detail }
}

/// Trains `model` in place. Fully determined by `config.seed`.
pub fn train(
    model: &mut Seq2Seq,
    corpus: &Corpus,
    config: &TrainConfig,
    mut sinks: TrainSinks<'_>,
) -> Result<TrainSummary> {
    config.validate()?;
    let stats = corpus.stats()?;
    let sampler = CorpusSampler::new(&stats, config.sampler.data_temperature)?;
    let mut batch_rng = stream_rng(config.seed, streams::BATCH);
    let mut pair_batch_rng = stream_rng(config.seed, streams::PAIR_BATCH);
    let (mut r_pair, mut r_ratio, mut r_mask, mut r_mix) = (
        stream_rng(config.seed, streams::PAIRING),
        stream_rng(config.seed, streams::RATIO),
        stream_rng(config.seed, streams::MASK),
        stream_rng(config.seed, streams::MIXUP),
    );
    let mut adam = Adam::new(
        model.params().tensors(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sample_batch(corpus, &sampler, config.batch_size, &mut batch_rng)?;
        let pair_batch = if config.independent_pairing_batch && config.objective != Objective::Mle {
            Some(sample_batch(
                corpus,
                &sampler,
                config.batch_size,
                &mut pair_batch_rng,
            )?)
        } else {
            None
        };
        let beta = config.beta.value(step, config.steps);
        let opts = PairingOptions {
            config,
            stats: &stats,
            beta,
        };
        let mut rngs = PairingRngs {
            pairing: &mut r_pair,
            ratio: &mut r_ratio,
            mask: &mut r_mask,
            mixup: &mut r_mix,
        };
        let sg = match build_step(model, &batch, pair_batch.as_ref(), &opts, &mut rngs) {
            Ok(sg) => sg,
            Err(e @ Error::Numeric { .. }) => {
                return Err(diverged(&sinks, step, e.to_string(), &batch, None))
            }
            Err(e) => return Err(e),
        };
        if !sg.breakdown.total.is_finite() {
            let detail = format!("non-finite loss {}", sg.breakdown.total);
            return Err(diverged(&sinks, step, detail, &batch, Some(&sg)));
        }
        let StepGraph {
            mut graph,
            bound,
            total,
            breakdown,
            ..
        } = sg;
        graph.backward(total)?;
        let mut grads = bound.grads(&graph);
        drop(graph);
        let grad_norm = clip_gradients(&mut grads, config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(diverged(
                &sinks,
                step,
                format!("non-finite gradient norm {grad_norm}"),
                &batch,
                None,
            ));
        }
        let lr = learning_rate(config.lr, config.warmup, step);
        adam.step(model.params_mut().tensors_mut(), &grads, lr);
        if !model.params().all_finite() {
            return Err(diverged(
                &sinks,
                step,
                "non-finite parameters after update".into(),
                &batch,
                None,
            ));
        }
        losses.push(breakdown.total);
        if let Some(w) = sinks.metrics.as_deref_mut() {
            if step % config.log_every == 0 || step + 1 == config.steps {
                let rec = StepRecord {
                    step,
                    l_m: breakdown.l_m,
                    l_x: breakdown.l_x,
                    total: breakdown.total,
                    beta,
                    lr,
                    grad_norm,
                    per_pair_m: breakdown.per_pair_m,
                    per_pair_x: breakdown.per_pair_x,
                };
                serde_json::to_writer(&mut *w, &rec)?;
                writeln!(w)?;
            }
        }
    }
    let tail = &losses[losses.len().saturating_sub(100)..];
    let final_loss = if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    Ok(TrainSummary {
        steps: config.steps,
        losses,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_schedule_is_linear_then_flat() {
        let s = BetaSchedule::default();
        assert_eq!(s.value(0, 1000), 0.0);
        assert!((s.value(50, 1000) - 0.35).abs() < 1e-12);
        assert_eq!(s.value(100, 1000), 0.7);
        assert_eq!(s.value(999, 1000), 0.7);
        assert_eq!(BetaSchedule::constant(1.0).value(0, 10), 1.0);
    }

    #[test]
    fn learning_rate_warms_up_then_decays() {
        assert!((learning_rate(1.0, 400, 399) - 1.0).abs() < 1e-12);
        assert!((learning_rate(1.0, 400, 99) - 0.25).abs() < 1e-12);
        assert!((learning_rate(1.0, 400, 1599) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut g = vec![Tensor::new(vec![2], vec![0.3, 0.4]).unwrap()];
        clip_gradients(&mut g, 1.0);
        assert_eq!(g[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()];
        let g = vec![Tensor::new(vec![2], vec![0.5, -2.0]).unwrap()];
        let mut adam = Adam::new(&p, 0.9, 0.98, 1e-12);
        adam.step(&mut p, &g, 0.1);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-9);
        assert!((p[0].data()[1] - 1.1).abs() < 1e-9);
    }
}
