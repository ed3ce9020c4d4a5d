//! Crossover examples: positionwise source mixing, language-tag interpolation,
//! target weights, decoder-input mixing and mixed labels.
//!
//! Every mixed quantity is written as `a·wa + b·wb` with `wa` and `wb`
//! computed independently (never `wb = 1 − wa`). Swapping the parents and
//! complementing the mask swaps the two weights, so the offspring is
//! reproduced bit for bit.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Direction, ParallelBatch};
use crate::error::{Error, Result};
use crate::model::{Bound, ForwardOutput, ModelConfig, Seq2Seq, TagMode};
use crate::tensor::{Graph, Tensor, Var};

/// Attention mass below which attention weights fall back to the content fraction.
pub const ATTENTION_GUARD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetMode {
    Attention,
    Simplified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    Attention,
    Simplified,
    Hardened,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskSampling {
    /// Each content position is zero independently with probability `ratio`.
    Bernoulli,
    /// Exactly `round(ratio · n)` content positions are zero.
    ExactCount,
}

impl std::str::FromStr for MaskSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(MaskSampling::Bernoulli),
            "exact_count" => Ok(MaskSampling::ExactCount),
            _ => Err(Error::invalid("mask sampling", s)),
        }
    }
}

impl std::fmt::Display for MaskSampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskSampling::Bernoulli => "bernoulli",
            MaskSampling::ExactCount => "exact_count",
        })
    }
}

/// Source mixing mask `m` over the offspring length `max(|x|, |x'|)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverMask {
    /// One entry per position; in tagged masks `m[0]` is unused and kept at 1.
    pub m: Vec<f64>,
    /// Position 0 holds a language tag and is mixed by content share.
    pub tagged: bool,
    /// Fraction of zeros among content positions.
    pub effective_ratio: f64,
}

fn check_binary(m: &[f64]) -> Result<()> {
    match m.iter().find(|&&x| x != 0.0 && x != 1.0) {
        Some(x) => Err(Error::invalid("mask", format!("non-binary entry {x}"))),
        None => Ok(()),
    }
}

impl CrossoverMask {
    pub fn new(m: Vec<f64>, tagged: bool) -> Result<Self> {
        let start = usize::from(tagged);
        if m.len() <= start {
            return Err(Error::invalid(
                "mask",
                format!("length {} has no content positions", m.len()),
            ));
        }
        check_binary(&m[start..])?;
        let zeros = m[start..].iter().filter(|&&x| x == 0.0).count();
        let effective_ratio = zeros as f64 / (m.len() - start) as f64;
        let mut m = m;
        if tagged {
            m[0] = 1.0;
        }
        Ok(CrossoverMask {
            m,
            tagged,
            effective_ratio,
        })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn content(&self) -> &[f64] {
        &self.m[usize::from(self.tagged)..]
    }

    /// The mask with every content position flipped.
    pub fn complement(&self) -> CrossoverMask {
        let mut m: Vec<f64> = self.m.iter().map(|x| 1.0 - x).collect();
        if self.tagged {
            m[0] = 1.0;
        }
        CrossoverMask {
            m,
            tagged: self.tagged,
            effective_ratio: 1.0 - self.effective_ratio,
        }
    }

    /// Content fraction weights `(Σm/n, Σ(1−m)/n)` over content positions.
    /// These weight the tag position and give the simplified constant `t`.
    pub fn sentence_weights(&self) -> (f64, f64) {
        let c = self.content();
        let ones: f64 = c.iter().sum();
        let zeros: f64 = c.iter().map(|x| 1.0 - x).sum();
        let n = c.len() as f64;
        (ones / n, zeros / n)
    }

    /// Per-position source weights: `(m_i, 1 − m_i)` on content positions,
    /// the content-share weights at position 0 of a tagged mask.
    pub fn source_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let mut wa: Vec<f64> = self.m.clone();
        let mut wb: Vec<f64> = self.m.iter().map(|x| 1.0 - x).collect();
        if self.tagged {
            let (a, b) = self.sentence_weights();
            wa[0] = a;
            wb[0] = b;
        }
        (wa, wb)
    }
}

/// Draws a mask of length `len`. With `SourceTag`, position 0 is the tag and
/// is not sampled.
pub fn sample_mask(
    len: usize,
    ratio: f64,
    tag_mode: TagMode,
    sampling: MaskSampling,
    rng: &mut impl Rng,
) -> Result<CrossoverMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid("ratio", ratio));
    }
    let tagged = tag_mode == TagMode::SourceTag;
    let start = usize::from(tagged);
    if len <= start {
        return Err(Error::invalid(
            "mask length",
            format!("{len} leaves no content positions"),
        ));
    }
    let n = len - start;
    let mut m = vec![1.0; len];
    match sampling {
        MaskSampling::Bernoulli => {
            for x in &mut m[start..] {
                if rng.random_bool(ratio) {
                    *x = 0.0;
                }
            }
        }
        MaskSampling::ExactCount => {
            let k = ((ratio * n as f64).round() as usize).min(n);
            for i in index::sample(rng, n, k) {
                m[start + i] = 0.0;
            }
        }
    }
    CrossoverMask::new(m, tagged)
}

fn lerp(a: &[f64], b: &[f64], wa: f64, wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * wa + y * wb).collect()
}

fn lerp_rows(a: &Tensor, b: &Tensor, wa: &[f64], wb: &[f64]) -> Result<Tensor> {
    if a.shape() != b.shape() || a.shape()[0] != wa.len() {
        return Err(Error::shape("mix", a.shape(), b.shape()));
    }
    let data = a
        .rows()
        .zip(b.rows())
        .enumerate()
        .flat_map(|(r, (x, y))| lerp(x, y, wa[r], wb[r]))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Positionwise `e(x)·m + e(x')·(1−m)` over `[n × dim]` parent embeddings.
/// For a tagged mask, row 0 is the tag combination of [`mix_language_tags`].
pub fn mix_source(e_x: &Tensor, e_xp: &Tensor, mask: &CrossoverMask) -> Result<Tensor> {
    if e_x.shape().len() != 2 || e_x.shape()[0] != mask.len() {
        return Err(Error::shape("mix_source", e_x.shape(), &[mask.len()]));
    }
    let (wa, wb) = mask.source_weights();
    lerp_rows(e_x, e_xp, &wa, &wb)
}

/// Soft combination of the two parents' tag embeddings by the content
/// share each parent contributes. `mask[0]` is the tag position and ignored.
pub fn mix_language_tags(e_tag_x: &[f64], e_tag_xp: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
    if e_tag_x.len() != e_tag_xp.len() {
        return Err(Error::shape(
            "mix_language_tags",
            &[e_tag_x.len()],
            &[e_tag_xp.len()],
        ));
    }
    let mask = CrossoverMask::new(mask.to_vec(), true)?;
    let (a, b) = mask.sentence_weights();
    Ok(lerp(e_tag_x, e_tag_xp, a, b))
}

/// Per-position target weights. `a[j]` is `t_j`; `b[j]` is the weight of the
/// second parent, computed separately so that parent swaps are exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetWeights {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub mode: WeightMode,
}

impl TargetWeights {
    pub fn constant(len: usize, a: f64, b: f64, mode: WeightMode) -> Self {
        TargetWeights {
            a: vec![a; len],
            b: vec![b; len],
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn t(&self) -> &[f64] {
        &self.a
    }
}

/// `t_j = ΣA_ji·m_i / (ΣA_ji·m_i + ΣA'_ji·(1−m_i))`, using the
/// per-position source weights of `mask` (so a tagged position contributes
/// with its content-share weight). Rows where both sums are below
/// [`ATTENTION_GUARD`] fall back to [`target_weights_simplified`].
pub fn target_weights_attention(
    a: &Tensor,
    a_prime: &Tensor,
    mask: &CrossoverMask,
) -> Result<TargetWeights> {
    if a.shape().len() != 2 || a_prime.shape().len() != 2 || a.shape()[0] != a_prime.shape()[0] {
        return Err(Error::shape(
            "target_weights_attention",
            a.shape(),
            a_prime.shape(),
        ));
    }
    let (ia, ib) = (a.shape()[1], a_prime.shape()[1]);
    if ia > mask.len() || ib > mask.len() {
        return Err(Error::shape(
            "target_weights_attention mask",
            &[ia, ib],
            &[mask.len()],
        ));
    }
    if a.data()
        .iter()
        .chain(a_prime.data())
        .any(|&x| !(x >= 0.0) || !x.is_finite())
    {
        return Err(Error::invalid(
            "attention",
            "entries must be finite and nonnegative",
        ));
    }
    let (wa, wb) = mask.source_weights();
    let (fa, fb) = mask.sentence_weights();
    let rows = a.shape()[0];
    let mut out = TargetWeights::constant(rows, 0.0, 0.0, WeightMode::Attention);
    for j in 0..rows {
        let sa: f64 = a.row(j).iter().zip(&wa).map(|(x, w)| x * w).sum();
        let sb: f64 = a_prime.row(j).iter().zip(&wb).map(|(x, w)| x * w).sum();
        if sa < ATTENTION_GUARD && sb < ATTENTION_GUARD {
            out.a[j] = fa;
            out.b[j] = fb;
        } else {
            out.a[j] = sa / (sa + sb);
            out.b[j] = sb / (sa + sb);
        }
    }
    Ok(out)
}

/// Constant weights: every `t_j` equals the content fraction kept from the first parent.
pub fn target_weights_simplified(mask: &CrossoverMask, len: usize) -> TargetWeights {
    let (a, b) = mask.sentence_weights();
    TargetWeights::constant(len, a, b, WeightMode::Simplified)
}

/// Quantises `t_j` to 1 when `t_j > 0.5` and to 0 otherwise, only when the
/// parents' target languages differ. Use the result for decoder inputs only.
pub fn harden(weights: &TargetWeights, target_languages_differ: bool) -> TargetWeights {
    if !target_languages_differ {
        return weights.clone();
    }
    let (a, b) = weights
        .a
        .iter()
        .map(|&t| if t > 0.5 { (1.0, 0.0) } else { (0.0, 1.0) })
        .unzip();
    TargetWeights {
        a,
        b,
        mode: WeightMode::Hardened,
    }
}

/// Weights for decoder-input position `j`: those of label position `j − 1`,
/// with `start` at the shared start position.
pub fn decoder_input_weights(weights: &TargetWeights, start: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let n = weights.len();
    let mut wa = Vec::with_capacity(n);
    let mut wb = Vec::with_capacity(n);
    if n > 0 {
        wa.push(start.0);
        wb.push(start.1);
        wa.extend_from_slice(&weights.a[..n - 1]);
        wb.extend_from_slice(&weights.b[..n - 1]);
    }
    (wa, wb)
}

/// `e(z̃_j) = e(z_j)·t_{j−1} + e(z'_j)·(1 − t_{j−1})` over the parents'
/// decoder-input embeddings (row `j` embeds `z_j`).
pub fn mix_decoder_inputs(
    e_z: &Tensor,
    e_zp: &Tensor,
    weights: &TargetWeights,
    start: (f64, f64),
) -> Result<Tensor> {
    if e_z.shape().len() != 2 || e_z.shape()[0] != weights.len() {
        return Err(Error::shape(
            "mix_decoder_inputs",
            e_z.shape(),
            &[weights.len()],
        ));
    }
    let (wa, wb) = decoder_input_weights(weights, start);
    lerp_rows(e_z, e_zp, &wa, &wb)
}

/// Smoothed one-hot rows `(1−ε)·onehot + ε/V`.
pub fn smoothed_labels(tokens: &[usize], vocab_size: usize, epsilon: f64) -> Tensor {
    let off = epsilon / vocab_size as f64;
    let mut data = vec![off; tokens.len() * vocab_size];
    for (r, &t) in tokens.iter().enumerate() {
        data[r * vocab_size + t] += 1.0 - epsilon;
    }
    Tensor::new(vec![tokens.len(), vocab_size], data).expect("label shape")
}

fn co_refine(v: &[f64], f: Option<&[f64]>, beta: f64) -> Vec<f64> {
    match f {
        Some(f) if beta < 1.0 => v
            .iter()
            .zip(f)
            .map(|(v, f)| v * beta + f * (1.0 - beta))
            .collect(),
        _ => v.to_vec(),
    }
}

/// Label mixing with co-refinement: each parent's label row is first blended with
/// its own model prediction, `β·v + (1−β)·f`, then the rows are mixed by the
/// soft target weights.
pub fn mix_labels(
    v_y: &Tensor,
    v_yp: &Tensor,
    weights: &TargetWeights,
    refine_a: Option<&Tensor>,
    refine_b: Option<&Tensor>,
    beta: f64,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta", beta));
    }
    if v_y.shape() != v_yp.shape() || v_y.shape()[0] != weights.len() {
        return Err(Error::shape("mix_labels", v_y.shape(), v_yp.shape()));
    }
    for r in [refine_a, refine_b].into_iter().flatten() {
        if r.shape() != v_y.shape() {
            return Err(Error::shape(
                "mix_labels refinement",
                r.shape(),
                v_y.shape(),
            ));
        }
    }
    let mut data = Vec::with_capacity(v_y.numel());
    for j in 0..weights.len() {
        let ra = co_refine(v_y.row(j), refine_a.map(|t| t.row(j)), beta);
        let rb = co_refine(v_yp.row(j), refine_b.map(|t| t.row(j)), beta);
        data.extend(lerp(&ra, &rb, weights.a[j], weights.b[j]));
    }
    Tensor::new(v_y.shape().to_vec(), data)
}

/// Cross-attention and predictive log-probabilities of the unmixed batch
/// under the current parameters, treated as constants.
#[derive(Clone, Debug)]
pub struct ParentSignals {
    /// `[batch × J × I]`
    pub attention: Tensor,
    /// `[batch·J × vocab]`
    pub log_probs: Tensor,
}

impl ParentSignals {
    pub fn from_forward(g: &Graph, out: &ForwardOutput) -> Self {
        ParentSignals {
            attention: out.cross_attention.clone(),
            log_probs: g.value(out.log_probs).clone(),
        }
    }

    /// A forward pass with frozen parameters.
    pub fn compute(model: &Seq2Seq, batch: &ParallelBatch) -> Result<Self> {
        let mut g = Graph::new();
        let b = model.bind_frozen(&mut g);
        let out = model.forward(&mut g, &b, batch)?;
        Ok(Self::from_forward(&g, &out))
    }

    fn probs_row(&self, row: usize) -> Vec<f64> {
        self.log_probs.row(row).iter().map(|x| x.exp()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverConfig {
    pub target_mode: TargetMode,
    pub hard: bool,
    pub mask_sampling: MaskSampling,
    /// Co-refinement weight on the smoothed labels.
    pub beta: f64,
    pub label_smoothing: f64,
}

impl CrossoverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid("beta", self.beta));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label_smoothing", self.label_smoothing));
        }
        Ok(())
    }
}

/// Per-pair record kept for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub parent_a: (Direction, u64),
    pub parent_b: (Direction, u64),
    pub ratio: f64,
    pub mask: Vec<f64>,
    /// Soft target weights `t` used for labels.
    pub t: Vec<f64>,
    /// Weights actually applied to decoder inputs (after hardening).
    pub t_input: Vec<f64>,
}

/// Everything needed to evaluate the loss on a batch of virtual examples.
///
/// Embeddings are mixed lazily in [`CrossoverBatch::embed`] so that gradients
/// reach both parents' embedding rows.
#[derive(Clone, Debug)]
pub struct CrossoverBatch {
    pub batch: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src_a: Vec<usize>,
    pub src_b: Vec<usize>,
    pub src_wa: Vec<f64>,
    pub src_wb: Vec<f64>,
    pub src_lang_a: Vec<usize>,
    pub src_lang_b: Vec<usize>,
    pub src_lang_wa: Vec<f64>,
    pub src_lang_wb: Vec<f64>,
    pub dec_a: Vec<usize>,
    pub dec_b: Vec<usize>,
    pub dec_wa: Vec<f64>,
    pub dec_wb: Vec<f64>,
    pub dec_lang_a: Vec<usize>,
    pub dec_lang_b: Vec<usize>,
    /// True where both parents' sources are padding.
    pub src_pad: Vec<bool>,
    /// `[batch·tgt_len × vocab]` mixed label distributions.
    pub labels: Tensor,
    /// True where at least one parent has a real target token.
    pub loss_mask: Vec<bool>,
    pub pairs: Vec<PairRecord>,
}

/// Mixed embeddings and labels as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedValues {
    pub source: Tensor,
    pub decoder_input: Tensor,
    pub labels: Tensor,
    pub src_pad: Vec<bool>,
    pub loss_mask: Vec<bool>,
}

impl CrossoverBatch {
    /// Differentiable mixed source and decoder-input embeddings.
    pub fn embed(&self, model: &Seq2Seq, g: &mut Graph, b: &Bound) -> Result<(Var, Var)> {
        let le = model.config().tag_mode == TagMode::LanguageEmbedding;
        let side = |g: &mut Graph, tok: &[usize], len: usize| -> Result<Var> {
            let e = model.token_embeddings(g, b, tok)?;
            model.add_positions(g, e, self.batch, len)
        };
        let (sa, sb) = (
            side(g, &self.src_a, self.src_len)?,
            side(g, &self.src_b, self.src_len)?,
        );
        let mut src = g.row_lerp(sa, sb, &self.src_wa, &self.src_wb)?;
        let (mut da, mut db) = (
            side(g, &self.dec_a, self.tgt_len)?,
            side(g, &self.dec_b, self.tgt_len)?,
        );
        if le {
            let la = model.language_embeddings(g, b, &self.src_lang_a)?;
            let lb = model.language_embeddings(g, b, &self.src_lang_b)?;
            let l = g.row_lerp(la, lb, &self.src_lang_wa, &self.src_lang_wb)?;
            src = g.add(src, l)?;
            let la = model.language_embeddings(g, b, &self.dec_lang_a)?;
            let lb = model.language_embeddings(g, b, &self.dec_lang_b)?;
            da = g.add(da, la)?;
            db = g.add(db, lb)?;
        }
        let dec = g.row_lerp(da, db, &self.dec_wa, &self.dec_wb)?;
        Ok((src, dec))
    }

    /// Forward pass over the virtual examples.
    pub fn forward(&self, model: &Seq2Seq, g: &mut Graph, b: &Bound) -> Result<ForwardOutput> {
        let (src, dec) = self.embed(model, g, b)?;
        let encoder_out = model.encode(g, b, src, &self.src_pad, self.batch, self.src_len)?;
        let (log_probs, cross_attention) = model.decode(
            g,
            b,
            dec,
            self.tgt_len,
            encoder_out,
            &self.src_pad,
            self.batch,
            self.src_len,
        )?;
        Ok(ForwardOutput {
            log_probs,
            encoder_out,
            cross_attention,
        })
    }

    pub fn mixed_values(&self, model: &Seq2Seq) -> Result<MixedValues> {
        let mut g = Graph::new();
        let b = model.bind_frozen(&mut g);
        let (src, dec) = self.embed(model, &mut g, &b)?;
        Ok(MixedValues {
            source: g.value(src).clone(),
            decoder_input: g.value(dec).clone(),
            labels: self.labels.clone(),
            src_pad: self.src_pad.clone(),
            loss_mask: self.loss_mask.clone(),
        })
    }

    /// One JSON object per pair: mask, weights, ratio and parent ids.
    pub fn write_debug_dump(&self, mut w: impl Write) -> Result<()> {
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

fn check_perm(batch: &ParallelBatch, perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; batch.batch];
    if perm.len() != batch.batch
        || perm
            .iter()
            .any(|&p| p >= batch.batch || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::invalid("pairing", "not a permutation of the batch"));
    }
    Ok(())
}

/// Offspring source length `max(|x|, |x'|)` for every pair.
pub fn pair_source_lengths(batch: &ParallelBatch, perm: &[usize]) -> Vec<usize> {
    perm.iter()
        .enumerate()
        .map(|(i, &p)| batch.src_lens[i].max(batch.src_lens[p]))
        .collect()
}

/// Draws one mask per pair with the given per-pair ratios.
pub fn sample_masks(
    batch: &ParallelBatch,
    perm: &[usize],
    ratios: &[f64],
    tag_mode: TagMode,
    sampling: MaskSampling,
    rng: &mut impl Rng,
) -> Result<Vec<CrossoverMask>> {
    check_perm(batch, perm)?;
    if ratios.len() != batch.batch {
        return Err(Error::shape("ratios", &[batch.batch], &[ratios.len()]));
    }
    pair_source_lengths(batch, perm)
        .into_iter()
        .zip(ratios)
        .map(|(len, &r)| sample_mask(len, r, tag_mode, sampling, rng))
        .collect()
}

/// Shared layout of a two-parent batch; weights filled in by the callers.
fn skeleton(batch: &ParallelBatch, perm: &[usize], vocab: usize) -> CrossoverBatch {
    let (bs, il, jl) = (batch.batch, batch.src_len, batch.tgt_len);
    let pb = batch.permuted(perm);
    let src_pad = batch
        .src_pad
        .iter()
        .zip(&pb.src_pad)
        .map(|(a, b)| *a && *b)
        .collect();
    let loss_mask = batch
        .tgt_pad
        .iter()
        .zip(&pb.tgt_pad)
        .map(|(a, b)| !(*a && *b))
        .collect();
    CrossoverBatch {
        batch: bs,
        src_len: il,
        tgt_len: jl,
        src_lang_a: batch.source_language_rows(),
        src_lang_b: pb.source_language_rows(),
        dec_lang_a: batch.target_language_rows(),
        dec_lang_b: pb.target_language_rows(),
        src_a: batch.source.clone(),
        src_b: pb.source,
        dec_a: batch.decoder_input.clone(),
        dec_b: pb.decoder_input,
        src_wa: vec![1.0; bs * il],
        src_wb: vec![0.0; bs * il],
        src_lang_wa: vec![1.0; bs * il],
        src_lang_wb: vec![0.0; bs * il],
        dec_wa: vec![1.0; bs * jl],
        dec_wb: vec![0.0; bs * jl],
        src_pad,
        labels: Tensor::zeros(&[bs * jl, vocab]),
        loss_mask,
        pairs: Vec::with_capacity(bs),
    }
}

/// Attention rows of one parent restricted to `[rows × cols]`; rows at or
/// beyond that parent's own target length are zeroed.
fn parent_attention(
    attention: &Tensor,
    r: usize,
    own_len: usize,
    rows: usize,
    cols: usize,
) -> Tensor {
    let (jl, il) = (attention.shape()[1], attention.shape()[2]);
    Tensor::from_fn(&[rows, cols], |k| {
        let (j, i) = (k / cols, k % cols);
        if j < own_len {
            attention.data()[(r * jl + j) * il + i]
        } else {
            0.0
        }
    })
}

/// Per-pair labels for `rows` target positions of batch row `r`.
fn parent_labels(batch: &ParallelBatch, r: usize, vocab: usize, eps: f64) -> Tensor {
    let jl = batch.tgt_len;
    smoothed_labels(&batch.target[r * jl..(r + 1) * jl], vocab, eps)
}

fn parent_refinement(
    signals: Option<&ParentSignals>,
    r: usize,
    jl: usize,
    beta: f64,
) -> Option<Tensor> {
    if beta >= 1.0 {
        return None;
    }
    let s = signals?;
    let v = s.log_probs.width();
    let data = (0..jl).flat_map(|j| s.probs_row(r * jl + j)).collect();
    Some(Tensor::new(vec![jl, v], data).expect("refinement shape"))
}

/// Assembles the crossover batch for pairs `(batch[i], batch[perm[i]])`.
///
/// `signals` must describe `batch` (attention and predictions under the
/// current parameters); it is required in attention mode and when `β < 1`.
pub fn build_crossover_batch(
    batch: &ParallelBatch,
    perm: &[usize],
    masks: &[CrossoverMask],
    ratios: &[f64],
    signals: Option<&ParentSignals>,
    model: &ModelConfig,
    config: &CrossoverConfig,
) -> Result<CrossoverBatch> {
    config.validate()?;
    check_perm(batch, perm)?;
    if masks.len() != batch.batch || ratios.len() != batch.batch {
        return Err(Error::shape(
            "masks",
            &[batch.batch],
            &[masks.len(), ratios.len()],
        ));
    }
    let needs_signals = config.target_mode == TargetMode::Attention || config.beta < 1.0;
    if needs_signals && signals.is_none() {
        return Err(Error::invalid(
            "crossover",
            "model signals required for attention weights or co-refinement",
        ));
    }
    if let Some(s) = signals {
        if s.attention.shape() != [batch.batch, batch.tgt_len, batch.src_len] {
            return Err(Error::shape(
                "crossover attention",
                s.attention.shape(),
                &[batch.batch, batch.tgt_len, batch.src_len],
            ));
        }
    }
    let tagged = model.tag_mode == TagMode::SourceTag;
    let vocab = model.vocab_size;
    let (il, jl) = (batch.src_len, batch.tgt_len);
    let mut cb = skeleton(batch, perm, vocab);
    let lens = pair_source_lengths(batch, perm);
    let mut labels = Vec::with_capacity(batch.batch * jl * vocab);
    for (i, &p) in perm.iter().enumerate() {
        let mask = &masks[i];
        if mask.len() != lens[i] || mask.tagged != tagged {
            return Err(Error::invalid(
                "mask",
                format!(
                    "pair {i}: expected length {} (tagged {tagged}), got {} (tagged {})",
                    lens[i],
                    mask.len(),
                    mask.tagged
                ),
            ));
        }
        let n = lens[i];
        let (wa, wb) = mask.source_weights();
        cb.src_wa[i * il..i * il + n].copy_from_slice(&wa);
        cb.src_wb[i * il..i * il + n].copy_from_slice(&wb);
        let sentence = mask.sentence_weights();
        cb.src_lang_wa[i * il..(i + 1) * il].fill(sentence.0);
        cb.src_lang_wb[i * il..(i + 1) * il].fill(sentence.1);

        let soft = match config.target_mode {
            TargetMode::Simplified => target_weights_simplified(mask, jl),
            TargetMode::Attention => {
                let att = &signals.expect("checked above").attention;
                let aa = parent_attention(att, i, batch.tgt_lens[i], jl, n);
                let ab = parent_attention(att, p, batch.tgt_lens[p], jl, n);
                target_weights_attention(&aa, &ab, mask)?
            }
        };
        let differ = batch.directions[i].tgt != batch.directions[p].tgt;
        let input = if config.hard {
            harden(&soft, differ)
        } else {
            soft.clone()
        };
        let (da, db) = decoder_input_weights(&input, sentence);
        cb.dec_wa[i * jl..(i + 1) * jl].copy_from_slice(&da);
        cb.dec_wb[i * jl..(i + 1) * jl].copy_from_slice(&db);

        let mixed = mix_labels(
            &parent_labels(batch, i, vocab, config.label_smoothing),
            &parent_labels(batch, p, vocab, config.label_smoothing),
            &soft,
            parent_refinement(signals, i, jl, config.beta).as_ref(),
            parent_refinement(signals, p, jl, config.beta).as_ref(),
            config.beta,
        )?;
        labels.extend_from_slice(mixed.data());
        cb.pairs.push(PairRecord {
            parent_a: (batch.directions[i], batch.sentence_ids[i]),
            parent_b: (batch.directions[p], batch.sentence_ids[p]),
            ratio: ratios[i],
            mask: mask.m.clone(),
            t: soft.a.clone(),
            t_input: input.a.clone(),
        });
    }
    cb.labels = Tensor::new(vec![batch.batch * jl, vocab], labels)?;
    Ok(cb)
}

/// Mixup pairs: one `λ` per pair mixes source embeddings, decoder inputs and
/// (co-refined) labels alike, at every position.
pub fn build_mixup_batch(
    batch: &ParallelBatch,
    perm: &[usize],
    lambdas: &[f64],
    signals: Option<&ParentSignals>,
    model: &ModelConfig,
    beta: f64,
    label_smoothing: f64,
) -> Result<CrossoverBatch> {
    check_perm(batch, perm)?;
    if lambdas.len() != batch.batch {
        return Err(Error::shape("lambdas", &[batch.batch], &[lambdas.len()]));
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::invalid("lambda", l));
    }
    if beta < 1.0 && signals.is_none() {
        return Err(Error::invalid(
            "mixup",
            "model signals required for co-refinement",
        ));
    }
    let vocab = model.vocab_size;
    let (il, jl) = (batch.src_len, batch.tgt_len);
    let mut cb = skeleton(batch, perm, vocab);
    let mut labels = Vec::with_capacity(batch.batch * jl * vocab);
    for (i, &p) in perm.iter().enumerate() {
        let (a, b) = (lambdas[i], 1.0 - lambdas[i]);
        for w in [&mut cb.src_wa, &mut cb.src_lang_wa] {
            w[i * il..(i + 1) * il].fill(a);
        }
        for w in [&mut cb.src_wb, &mut cb.src_lang_wb] {
            w[i * il..(i + 1) * il].fill(b);
        }
        cb.dec_wa[i * jl..(i + 1) * jl].fill(a);
        cb.dec_wb[i * jl..(i + 1) * jl].fill(b);
        let weights = TargetWeights::constant(jl, a, b, WeightMode::Constant);
        let mixed = mix_labels(
            &parent_labels(batch, i, vocab, label_smoothing),
            &parent_labels(batch, p, vocab, label_smoothing),
            &weights,
            parent_refinement(signals, i, jl, beta).as_ref(),
            parent_refinement(signals, p, jl, beta).as_ref(),
            beta,
        )?;
        labels.extend_from_slice(mixed.data());
        cb.pairs.push(PairRecord {
            parent_a: (batch.directions[i], batch.sentence_ids[i]),
            parent_b: (batch.directions[p], batch.sentence_ids[p]),
            ratio: b,
            mask: Vec::new(),
            t: weights.a.clone(),
            t_input: weights.a,
        });
    }
    cb.labels = Tensor::new(vec![batch.batch * jl, vocab], labels)?;
    Ok(cb)
}
