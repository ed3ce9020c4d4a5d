//! Decoding, token-level BLEU, winning ratio, robustness sweeps and
//! sentence-representation clustering.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Direction, LangId, ParallelExample, BOS, ENGLISH, EOS};
use crate::error::{Error, Result};
use crate::model::{Seq2Seq, TagMode};
use crate::sampling::{stream_rng, streams};
use crate::synthdata::{inject_code_switching, MultiwaySet, NoiseDictionary, SyntheticWorld};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam),
            _ => Err(Error::invalid("decode strategy", s)),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub length_penalty: f64,
    /// Cap on generated tokens (EOS included); also capped by the model's `max_len`.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Beam,
            beam_size: 4,
            length_penalty: 0.6,
            max_len: 32,
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            beam_size: 1,
            length_penalty: 0.0,
            max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::invalid("beam_size", 0));
        }
        if !(self.length_penalty >= 0.0) || !self.length_penalty.is_finite() {
            return Err(Error::invalid("length_penalty", self.length_penalty));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_decode_len", 0));
        }
        Ok(())
    }
}

/// `((5 + len) / 6)^α`
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn has_content(model: &Seq2Seq, source: &[usize]) -> bool {
    match model.config().tag_mode {
        TagMode::SourceTag => source.len() > 1,
        TagMode::LanguageEmbedding => !source.is_empty(),
    }
}

/// Decodes a batch of source sequences (tagged as in training). Output
/// sequences end in EOS unless truncated at the decode length.
pub fn decode_batch(
    model: &Seq2Seq,
    sources: &[Vec<usize>],
    directions: &[Direction],
    config: &DecodeConfig,
) -> Result<Vec<Vec<usize>>> {
    config.validate()?;
    if sources.len() != directions.len() {
        return Err(Error::shape(
            "decode",
            &[sources.len()],
            &[directions.len()],
        ));
    }
    let max_src = model.config().max_len;
    if let Some(s) = sources.iter().find(|s| s.len() > max_src) {
        return Err(Error::Length {
            len: s.len(),
            max: max_src,
        });
    }
    let mut out = vec![vec![EOS]; sources.len()];
    let live: Vec<usize> = (0..sources.len())
        .filter(|&i| has_content(model, &sources[i]))
        .collect();
    if live.is_empty() {
        return Ok(out);
    }
    let le = model.config().tag_mode == TagMode::LanguageEmbedding;
    let srcs: Vec<&[usize]> = live.iter().map(|&i| sources[i].as_slice()).collect();
    let src_langs: Vec<usize> = live.iter().map(|&i| directions[i].src.0).collect();
    let tgt_langs: Vec<usize> = live.iter().map(|&i| directions[i].tgt.0).collect();
    let enc = model.encode_batch(&srcs, le.then_some(&src_langs[..]))?;
    let steps = config.max_len.min(model.config().max_len);
    match config.strategy {
        Strategy::Greedy => {
            let decoded = greedy(model, &enc, le.then_some(tgt_langs), steps)?;
            for (k, d) in live.iter().zip(decoded) {
                out[*k] = d;
            }
        }
        Strategy::Beam => {
            for (r, &k) in live.iter().enumerate() {
                let lang = le.then(|| vec![tgt_langs[r]]);
                out[k] = beam(model, &enc, r, lang, steps, config)?;
            }
        }
    }
    Ok(out)
}

pub fn decode(
    model: &Seq2Seq,
    source: &[usize],
    direction: Direction,
    config: &DecodeConfig,
) -> Result<Vec<usize>> {
    Ok(decode_batch(model, &[source.to_vec()], &[direction], config)?.remove(0))
}

fn greedy(
    model: &Seq2Seq,
    enc: &crate::model::EncodedBatch,
    langs: Option<Vec<usize>>,
    steps: usize,
) -> Result<Vec<Vec<usize>>> {
    let n = enc.batch;
    let mut state = model.start_decoding(enc, (0..n).collect(), langs)?;
    let mut out = vec![Vec::new(); n];
    // `alive[h]` is the sentence decoded by hypothesis row h.
    let mut alive: Vec<usize> = (0..n).collect();
    let mut input = vec![BOS; n];
    for _ in 0..steps {
        let lp = state.step(&input)?;
        let mut keep = Vec::new();
        input.clear();
        for (h, &s) in alive.iter().enumerate() {
            let t = argmax(lp.row(h));
            out[s].push(t);
            if t != EOS {
                keep.push(h);
                input.push(t);
            }
        }
        if keep.is_empty() {
            break;
        }
        if keep.len() != alive.len() {
            state.reorder(&keep);
            alive = keep.iter().map(|&h| alive[h]).collect();
        }
    }
    Ok(out)
}

struct Hyp {
    tokens: Vec<usize>,
    logp: f64,
}

fn beam(
    model: &Seq2Seq,
    enc: &crate::model::EncodedBatch,
    row: usize,
    lang: Option<Vec<usize>>,
    steps: usize,
    config: &DecodeConfig,
) -> Result<Vec<usize>> {
    let k = config.beam_size;
    let mut state = model.start_decoding(enc, vec![row], lang)?;
    let mut alive = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
    }];
    // (score, tokens) in insertion order
    let mut finished: Vec<(f64, Vec<usize>)> = Vec::new();
    for step in 0..steps {
        let input: Vec<usize> = alive
            .iter()
            .map(|h| h.tokens.last().copied().unwrap_or(BOS))
            .collect();
        let lp = state.step(&input)?;
        let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * lp.width());
        for (h, hyp) in alive.iter().enumerate() {
            cand.extend(
                lp.row(h)
                    .iter()
                    .enumerate()
                    .map(|(t, &l)| (hyp.logp + l, h, t)),
            );
        }
        // Stable: ties keep the lower hypothesis then the lower token.
        cand.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut next = Vec::new();
        let mut parents = Vec::new();
        for (rank, &(logp, h, t)) in cand.iter().take(2 * k).enumerate() {
            let mut tokens = alive[h].tokens.clone();
            tokens.push(t);
            if t == EOS {
                if rank < k {
                    finished.push((
                        logp / length_penalty(tokens.len(), config.length_penalty),
                        tokens,
                    ));
                }
            } else if next.len() < k {
                next.push(Hyp { tokens, logp });
                parents.push(h);
            }
        }
        if finished.len() >= k || next.is_empty() {
            break;
        }
        if step + 1 == steps {
            for h in next {
                let s = h.logp / length_penalty(h.tokens.len(), config.length_penalty);
                finished.push((s, h.tokens));
            }
            break;
        }
        state.reorder(&parents);
        alive = next;
    }
    let mut best: Option<&(f64, Vec<usize>)> = None;
    for f in &finished {
        if best.is_none_or(|b| f.0 > b.0) {
            best = Some(f);
        }
    }
    Ok(best.map(|b| b.1.clone()).unwrap_or_else(|| vec![EOS]))
}

/// Drops everything from the first EOS on.
pub fn strip_eos(tokens: &[usize]) -> &[usize] {
    let end = tokens
        .iter()
        .position(|&t| t == EOS)
        .unwrap_or(tokens.len());
    &tokens[..end]
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 over token sequences, in `[0, 100]`. Unigram precision is
/// unsmoothed; higher orders use add-one smoothing.
pub fn bleu<H: AsRef<[usize]>, R: AsRef<[usize]>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(
            "bleu",
            format!(
                "{} hypotheses vs {} references",
                hypotheses.len(),
                references.len()
            ),
        ));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_p += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_p / 4.0).exp())
}

/// Fraction of directions where `a` strictly beats `b`.
pub fn winning_ratio(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<f64> {
    if a.is_empty() || !a.keys().eq(b.keys()) {
        return Err(Error::invalid(
            "winning ratio",
            "direction sets differ or are empty",
        ));
    }
    let wins = a.iter().filter(|(d, &x)| x > b[*d]).count();
    Ok(wins as f64 / a.len() as f64)
}

/// BLEU of a model on examples of one direction (EOS stripped on both sides).
pub fn evaluate_examples(
    model: &Seq2Seq,
    examples: &[ParallelExample],
    config: &DecodeConfig,
) -> Result<f64> {
    let sources: Vec<Vec<usize>> = examples.iter().map(|e| e.source.clone()).collect();
    let dirs: Vec<Direction> = examples.iter().map(|e| e.direction).collect();
    let hyps = decode_batch(model, &sources, &dirs, config)?;
    let hyps: Vec<&[usize]> = hyps.iter().map(|h| strip_eos(h)).collect();
    let refs: Vec<&[usize]> = examples.iter().map(|e| strip_eos(&e.target)).collect();
    bleu(&hyps, &refs)
}

/// Per-direction BLEU, computed in parallel and merged by direction.
pub fn evaluate_directions(
    model: &Seq2Seq,
    sets: &BTreeMap<Direction, Vec<ParallelExample>>,
    config: &DecodeConfig,
) -> Result<BTreeMap<Direction, f64>> {
    let jobs: Vec<(&Direction, &Vec<ParallelExample>)> = sets.iter().collect();
    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|(_, ex)| evaluate_examples(model, ex, config))
        .collect();
    jobs.iter()
        .zip(scores)
        .map(|((d, _), s)| Ok((**d, s?)))
        .collect()
}

/// Test sets drawn from the multiway set for each direction.
pub fn direction_sets(
    world: &SyntheticWorld,
    set: &MultiwaySet,
    directions: &[Direction],
    n: usize,
) -> Result<BTreeMap<Direction, Vec<ParallelExample>>> {
    directions
        .iter()
        .map(|&d| Ok((d, set.examples(world, d, n)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionGroup {
    XxEn,
    EnXx,
    ZeroShot,
}

impl DirectionGroup {
    pub fn of(d: Direction) -> Self {
        if d.tgt.is_english() {
            DirectionGroup::XxEn
        } else if d.src.is_english() {
            DirectionGroup::EnXx
        } else {
            DirectionGroup::ZeroShot
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DirectionGroup::XxEn => "xx-en",
            DirectionGroup::EnXx => "en-xx",
            DirectionGroup::ZeroShot => "zero-shot",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResourceGroup {
    Low,
    Med,
    High,
}

impl ResourceGroup {
    pub fn of_size(n: usize) -> Self {
        match n {
            n if n >= 20_000 => ResourceGroup::High,
            n if n >= 5_000 => ResourceGroup::Med,
            _ => ResourceGroup::Low,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub fraction: f64,
    pub group: String,
    pub bleu: f64,
}

/// Mean per-direction BLEU by direction group for each noise fraction.
/// Noise is drawn per (fraction, direction) from `seed`, so fraction 0
/// reproduces the clean scores.
pub fn robustness_sweep(
    model: &Seq2Seq,
    sets: &BTreeMap<Direction, Vec<ParallelExample>>,
    fractions: &[f64],
    dictionary: &NoiseDictionary,
    config: &DecodeConfig,
    seed: u64,
) -> Result<Vec<RobustnessPoint>> {
    if fractions.first() != Some(&0.0) || fractions.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(
            "noise fractions",
            "must start at 0 and increase",
        ));
    }
    let tag_mode = model.config().tag_mode;
    let mut out = Vec::new();
    for (fi, &f) in fractions.iter().enumerate() {
        let noisy = sets
            .iter()
            .map(|(&d, ex)| {
                let mut rng = stream_rng(noise_seed(seed, fi, d), streams::NOISE);
                let ex = ex
                    .iter()
                    .map(|e| inject_code_switching(e, f, dictionary, tag_mode, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                Ok((d, ex))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let scores = evaluate_directions(model, &noisy, config)?;
        let mut by_group: BTreeMap<DirectionGroup, Vec<f64>> = BTreeMap::new();
        for (d, s) in scores {
            by_group.entry(DirectionGroup::of(d)).or_default().push(s);
        }
        for (g, s) in by_group {
            out.push(RobustnessPoint {
                fraction: f,
                group: g.name().to_string(),
                bleu: s.iter().sum::<f64>() / s.len() as f64,
            });
        }
    }
    Ok(out)
}

fn noise_seed(seed: u64, fraction_index: usize, d: Direction) -> u64 {
    seed ^ ((fraction_index as u64) << 32) ^ ((d.src.0 as u64) << 16) ^ d.tgt.0 as u64
}

/// Mean-pooled encoder outputs over unpadded positions, `[n × dim]`.
/// `langs` are the source languages, needed in language-embedding mode.
pub fn encoder_representations(
    model: &Seq2Seq,
    sources: &[Vec<usize>],
    langs: &[LangId],
) -> Result<Tensor> {
    if sources.len() != langs.len() {
        return Err(Error::shape(
            "encoder_representations",
            &[sources.len()],
            &[langs.len()],
        ));
    }
    let d = model.config().model_dim;
    if sources.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("source", "empty sequence"));
    }
    let max = model.config().max_len;
    if let Some(s) = sources.iter().find(|s| s.len() > max) {
        return Err(Error::Length { len: s.len(), max });
    }
    let srcs: Vec<&[usize]> = sources.iter().map(Vec::as_slice).collect();
    let ids: Vec<usize> = langs.iter().map(|l| l.0).collect();
    let le = model.config().tag_mode == TagMode::LanguageEmbedding;
    let enc = model.encode_batch(&srcs, le.then_some(&ids[..]))?;
    let mut out = vec![0.0; sources.len() * d];
    for (b, s) in sources.iter().enumerate() {
        let row = &mut out[b * d..(b + 1) * d];
        for i in 0..s.len() {
            row.iter_mut()
                .zip(enc.encoder_out.row(b * enc.src_len + i))
                .for_each(|(o, v)| *o += v);
        }
        row.iter_mut().for_each(|o| *o /= s.len() as f64);
    }
    Tensor::new(vec![sources.len(), d], out)
}

/// Target language used to tag a representation probe in `lang`.
pub fn probe_target(lang: LangId) -> LangId {
    if lang.is_english() {
        LangId(1)
    } else {
        ENGLISH
    }
}

/// Representations of the first `n` multiway sentences in every language,
/// as `(language, sentence id, row)` in language-major order.
pub fn multiway_representations(
    model: &Seq2Seq,
    world: &SyntheticWorld,
    set: &MultiwaySet,
    n: usize,
) -> Result<(Vec<(LangId, u64)>, Tensor)> {
    let n = n.min(set.len());
    let mut keys = Vec::new();
    let mut sources = Vec::new();
    let mut langs = Vec::new();
    for l in 0..world.num_languages() {
        let lang = LangId(l);
        for i in 0..n {
            keys.push((lang, set.ids[i]));
            sources.push(world.source_sequence(probe_target(lang), &set.sentences[l][i]));
            langs.push(lang);
        }
    }
    Ok((keys, encoder_representations(model, &sources, &langs)?))
}

/// Representation export, one line per row:
/// `language<TAB>sentence_id<TAB>d0 d1 ...`.
pub fn write_representations(
    mut w: impl Write,
    keys: &[(LangId, u64)],
    reps: &Tensor,
) -> Result<()> {
    for ((lang, id), row) in keys.iter().zip(reps.rows()) {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{lang}\t{id}\t{}", vals.join(" "))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// SC, CH and DB of points `x` (rows) under `labels`, Euclidean.
pub fn clustering_metrics(x: &Tensor, labels: &[u64]) -> Result<ClusterMetrics> {
    let n = labels.len();
    if x.shape().len() != 2 || x.shape()[0] != n {
        return Err(Error::shape("clustering_metrics", x.shape(), &[n]));
    }
    let mut clusters: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(i);
    }
    let k = clusters.len();
    if k < 2 {
        return Err(Error::invalid(
            "clusters",
            format!("need at least 2 clusters, found {k}"),
        ));
    }
    if let Some((l, m)) = clusters.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::invalid(
            "clusters",
            format!("cluster {l} has {} member", m.len()),
        ));
    }
    let members: Vec<&Vec<usize>> = clusters.values().collect();
    let cluster_of: Vec<usize> = {
        let mut c = vec![0; n];
        for (ci, m) in members.iter().enumerate() {
            m.iter().for_each(|&i| c[i] = ci);
        }
        c
    };
    let w = x.width();
    let mut pair = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(x.row(i), x.row(j));
            pair[i * n + j] = d;
            pair[j * n + i] = d;
        }
    }

    let mut sc = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            sums[cluster_of[j]] += pair[i * n + j];
        }
        let own = cluster_of[i];
        let a = sums[own] / (members[own].len() - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / members[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        sc += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    let sc = sc / n as f64;

    let centroid = |m: &[usize]| -> Vec<f64> {
        let mut c = vec![0.0; w];
        for &i in m {
            c.iter_mut().zip(x.row(i)).for_each(|(c, v)| *c += v);
        }
        c.iter_mut().for_each(|c| *c /= m.len() as f64);
        c
    };
    let all: Vec<usize> = (0..n).collect();
    let mean = centroid(&all);
    let cents: Vec<Vec<f64>> = members.iter().map(|m| centroid(m)).collect();
    let mut between = 0.0;
    let mut within = 0.0;
    for (m, c) in members.iter().zip(&cents) {
        between += m.len() as f64 * dist(c, &mean).powi(2);
        within += m.iter().map(|&i| dist(x.row(i), c).powi(2)).sum::<f64>();
    }
    let ch = if within == 0.0 {
        1.0
    } else {
        (between / (k - 1) as f64) / (within / (n - k) as f64)
    };

    let spread: Vec<f64> = members
        .iter()
        .zip(&cents)
        .map(|(m, c)| m.iter().map(|&i| dist(x.row(i), c)).sum::<f64>() / m.len() as f64)
        .collect();
    let mut db = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if i != j {
                let d = dist(&cents[i], &cents[j]);
                if d > 0.0 {
                    worst = worst.max((spread[i] + spread[j]) / d);
                }
            }
        }
        db += worst;
    }
    Ok(ClusterMetrics {
        silhouette: sc,
        calinski_harabasz: ch,
        davies_bouldin: db / k as f64,
    })
}

/// Evaluation summary of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Resolved configuration, `key = value` pairs.
    pub config: BTreeMap<String, String>,
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    /// BLEU on trained directions.
    pub bleu: BTreeMap<String, f64>,
    /// Resource group (`High`/`Med`/`Low`) per trained direction.
    pub direction_groups: BTreeMap<String, ResourceGroup>,
    /// Mean BLEU per resource group plus `Avg`.
    pub group_bleu: BTreeMap<String, f64>,
    pub zero_shot: BTreeMap<String, f64>,
    /// Against the configured baseline report, when one was given.
    pub winning_ratio: Option<f64>,
    pub robustness: Vec<RobustnessPoint>,
    pub clustering: Option<ClusterMetrics>,
    pub final_train_loss: f64,
}

/// Mean BLEU per resource group and overall (`Avg`).
pub fn group_averages(
    bleu: &BTreeMap<String, f64>,
    groups: &BTreeMap<String, ResourceGroup>,
) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (d, &b) in bleu {
        let g = groups
            .get(d)
            .ok_or_else(|| Error::invalid("direction groups", format!("{d} has no group")))?;
        acc.entry(format!("{g:?}")).or_default().push(b);
        acc.entry("Avg".into()).or_default().push(b);
    }
    Ok(acc
        .into_iter()
        .map(|(g, v)| (g, v.iter().sum::<f64>() / v.len() as f64))
        .collect())
}

/// Mean BLEU of a robustness curve at `fraction` for `group`.
pub fn robustness_at(
    curve: &[RobustnessPoint],
    fraction: f64,
    group: DirectionGroup,
) -> Option<f64> {
    curve
        .iter()
        .find(|p| p.fraction == fraction && p.group == group.name())
        .map(|p| p.bleu)
}
