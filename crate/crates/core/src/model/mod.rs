//! Pre-norm encoder-decoder transformer with tied input/output embeddings.
//!
//! The encoder and decoder accept embeddings rather than token ids, so callers
//! can feed pre-mixed embeddings in place of a plain lookup.

mod checkpoint;
mod infer;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use infer::{DecoderState, EncodedBatch};
pub use params::ModelParams;

use serde::{Deserialize, Serialize};

use crate::data::ParallelBatch;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use params::{AttnIdx, FfnIdx, Layout, LnIdx};

const LN_EPS: f64 = 1e-6;

/// How the target language is signalled to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagMode {
    /// A `<2xx>` token at source position 0.
    SourceTag,
    /// A learned per-language vector added to every position.
    LanguageEmbedding,
}

impl std::str::FromStr for TagMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source_tag" | "SourceTag" => Ok(TagMode::SourceTag),
            "language_embedding" | "LanguageEmbedding" => Ok(TagMode::LanguageEmbedding),
            _ => Err(Error::invalid("tag_mode", s)),
        }
    }
}

impl std::fmt::Display for TagMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TagMode::SourceTag => "source_tag",
            TagMode::LanguageEmbedding => "language_embedding",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Label smoothing used when building `v(y)`.
    pub label_smoothing: f64,
    pub tag_mode: TagMode,
    pub num_languages: usize,
    /// Decoder layer whose head-averaged cross-attention is exposed; `None` is the last.
    pub attention_layer: Option<usize>,
}

impl ModelConfig {
    /// 2 layers, width 64, 4 heads, FFN 256, max length 32.
    pub fn desk_scale(vocab_size: usize, num_languages: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            model_dim: 64,
            num_heads: 4,
            ffn_dim: 256,
            vocab_size,
            max_len: 32,
            label_smoothing: 0.1,
            tag_mode: TagMode::SourceTag,
            num_languages,
            attention_layer: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(Error::invalid(
                "model config",
                format!(
                    "model_dim {} not divisible by num_heads {}",
                    self.model_dim, self.num_heads
                ),
            ));
        }
        if self.num_layers == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return Err(Error::invalid(
                "model config",
                "num_layers, ffn_dim and max_len must be positive",
            ));
        }
        if self.vocab_size < 3 + self.num_languages {
            return Err(Error::invalid(
                "model config",
                format!(
                    "vocab_size {} cannot hold specials and {} tags",
                    self.vocab_size, self.num_languages
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label_smoothing", self.label_smoothing));
        }
        if let Some(l) = self.attention_layer {
            if l >= self.num_layers {
                return Err(Error::invalid("attention_layer", l));
            }
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Model parameters registered as graph leaves.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every parameter, in registration order.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars.iter().map(|&v| g.grad_tensor(v)).collect()
    }

    fn at(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Result of a full teacher-forced forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    /// `[batch·J × vocab]` log-probabilities.
    pub log_probs: Var,
    /// `[batch·I × dim]` encoder outputs.
    pub encoder_out: Var,
    /// `[batch × J × I]` head-averaged cross-attention of the selected decoder layer.
    pub cross_attention: Tensor,
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    config: ModelConfig,
    layout: Layout,
    params: ModelParams,
    positional: Tensor,
}

fn sinusoidal(max_len: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[max_len, dim], |i| {
        let (pos, k) = ((i / dim) as f64, i % dim);
        let rate = 10000f64.powf(-((2 * (k / 2)) as f64) / dim as f64);
        if k % 2 == 0 {
            (pos * rate).sin()
        } else {
            (pos * rate).cos()
        }
    })
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = layout.initialise(seed);
        let positional = sinusoidal(config.max_len, config.model_dim);
        Ok(Seq2Seq {
            config,
            layout,
            params,
            positional,
        })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let expected: Vec<(&str, &[usize])> = layout.names().zip(layout.shapes()).collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != got {
            return Err(Error::invalid(
                "model parameters",
                "tensor names or shapes do not match the configuration",
            ));
        }
        let positional = sinusoidal(config.max_len, config.model_dim);
        Ok(Seq2Seq {
            config,
            layout,
            params,
            positional,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Registers all parameters as gradient-receiving leaves.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self
                .params
                .tensors()
                .iter()
                .map(|t| g.param(t.clone()))
                .collect(),
        }
    }

    /// Registers all parameters as constants, for forward-only passes.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self
                .params
                .tensors()
                .iter()
                .map(|t| g.constant(t.clone()))
                .collect(),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::Length {
                len,
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    /// Scaled token embeddings `√d · E[token]`, without positions.
    pub fn token_embeddings(&self, g: &mut Graph, b: &Bound, tokens: &[usize]) -> Result<Var> {
        let rows = g.gather_rows(b.at(self.layout.tok_emb), tokens)?;
        Ok(g.scale(rows, (self.config.model_dim as f64).sqrt()))
    }

    /// Adds sinusoidal encodings to `[batch·len × dim]` embeddings.
    pub fn add_positions(&self, g: &mut Graph, x: Var, batch: usize, len: usize) -> Result<Var> {
        self.check_len(len)?;
        let d = self.config.model_dim;
        let mut pe = Vec::with_capacity(batch * len * d);
        for _ in 0..batch {
            pe.extend_from_slice(&self.positional.data()[..len * d]);
        }
        let pe = g.constant(Tensor::new(vec![batch * len, d], pe)?);
        g.add(x, pe)
    }

    /// Language-embedding rows for per-position language ids.
    pub fn language_embeddings(&self, g: &mut Graph, b: &Bound, langs: &[usize]) -> Result<Var> {
        let Some(idx) = self.layout.lang_emb else {
            return Err(Error::invalid(
                "tag_mode",
                "language embeddings need LanguageEmbedding mode",
            ));
        };
        if let Some(&bad) = langs.iter().find(|&&l| l >= self.config.num_languages) {
            return Err(Error::invalid("language id", bad));
        }
        g.gather_rows(b.at(idx), langs)
    }

    /// Token embedding + positional encoding (+ language embedding when the
    /// model uses language embeddings, in which case `langs` is required).
    pub fn embed_tokens(
        &self,
        g: &mut Graph,
        b: &Bound,
        tokens: &[usize],
        batch: usize,
        len: usize,
        langs: Option<&[usize]>,
    ) -> Result<Var> {
        if tokens.len() != batch * len {
            return Err(Error::shape("embed_tokens", &[batch, len], &[tokens.len()]));
        }
        self.check_len(len)?;
        let tok = self.token_embeddings(g, b, tokens)?;
        let x = self.add_positions(g, tok, batch, len)?;
        match self.config.tag_mode {
            TagMode::SourceTag => Ok(x),
            TagMode::LanguageEmbedding => {
                let langs = langs.ok_or_else(|| Error::invalid("language id", "missing"))?;
                let le = self.language_embeddings(g, b, langs)?;
                g.add(x, le)
            }
        }
    }

    fn linear(&self, g: &mut Graph, b: &Bound, x: Var, w: usize, bias: usize) -> Result<Var> {
        let y = g.matmul(x, b.at(w))?;
        g.add_bias(y, b.at(bias))
    }

    fn norm(&self, g: &mut Graph, b: &Bound, x: Var, ln: &LnIdx) -> Result<Var> {
        g.layer_norm(x, b.at(ln.g), b.at(ln.b), LN_EPS)
    }

    fn ffn(&self, g: &mut Graph, b: &Bound, x: Var, f: &FfnIdx) -> Result<Var> {
        let h = self.linear(g, b, x, f.w1, f.b1)?;
        let h = g.relu(h);
        self.linear(g, b, h, f.w2, f.b2)
    }

    /// `[batch·len × dim] → [batch·heads × len × head_dim]`
    fn split_heads(&self, g: &mut Graph, x: Var, batch: usize, len: usize) -> Result<Var> {
        let (h, dh, d) = (
            self.config.num_heads,
            self.config.head_dim(),
            self.config.model_dim,
        );
        let mut index = Vec::with_capacity(batch * len * d);
        for bi in 0..batch {
            for hi in 0..h {
                for t in 0..len {
                    let base = (bi * len + t) * d + hi * dh;
                    index.extend(base..base + dh);
                }
            }
        }
        g.permute(x, index, &[batch * h, len, dh])
    }

    fn merge_heads(&self, g: &mut Graph, x: Var, batch: usize, len: usize) -> Result<Var> {
        let (h, dh, d) = (
            self.config.num_heads,
            self.config.head_dim(),
            self.config.model_dim,
        );
        let mut index = Vec::with_capacity(batch * len * d);
        for bi in 0..batch {
            for t in 0..len {
                for hi in 0..h {
                    let base = ((bi * h + hi) * len + t) * dh;
                    index.extend(base..base + dh);
                }
            }
        }
        g.permute(x, index, &[batch * len, d])
    }

    /// Multi-head attention; returns the projected output and the
    /// `[batch·heads × lq × lk]` attention probabilities.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        b: &Bound,
        a: &AttnIdx,
        query: Var,
        memory: Var,
        batch: usize,
        lq: usize,
        lk: usize,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let q = self.linear(g, b, query, a.wq, a.bq)?;
        let k = self.linear(g, b, memory, a.wk, a.bk)?;
        let v = self.linear(g, b, memory, a.wv, a.bv)?;
        let q = self.split_heads(g, q, batch, lq)?;
        let k = self.split_heads(g, k, batch, lk)?;
        let v = self.split_heads(g, v, batch, lk)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (self.config.head_dim() as f64).sqrt());
        let probs = g.softmax(scores, Some(mask))?;
        let ctx = g.bmm(probs, v, false)?;
        let ctx = self.merge_heads(g, ctx, batch, lq)?;
        Ok((self.linear(g, b, ctx, a.wo, a.bo)?, probs))
    }

    fn key_padding_mask(&self, pad: &[bool], batch: usize, lq: usize, lk: usize) -> Vec<bool> {
        let h = self.config.num_heads;
        let mut mask = Vec::with_capacity(batch * h * lq * lk);
        for bi in 0..batch {
            let row = &pad[bi * lk..(bi + 1) * lk];
            for _ in 0..h * lq {
                mask.extend_from_slice(row);
            }
        }
        mask
    }

    fn causal_mask(&self, batch: usize, len: usize) -> Vec<bool> {
        let h = self.config.num_heads;
        let one: Vec<bool> = (0..len * len).map(|i| i % len > i / len).collect();
        one.repeat(batch * h)
    }

    /// Runs the encoder over `[batch·len × dim]` input embeddings.
    /// `src_pad` marks padded positions, which are excluded as attention keys.
    pub fn encode(
        &self,
        g: &mut Graph,
        b: &Bound,
        embeddings: Var,
        src_pad: &[bool],
        batch: usize,
        len: usize,
    ) -> Result<Var> {
        self.check_len(len)?;
        if src_pad.len() != batch * len {
            return Err(Error::shape("encode mask", &[batch, len], &[src_pad.len()]));
        }
        let mask = self.key_padding_mask(src_pad, batch, len, len);
        let mut x = embeddings;
        for layer in &self.layout.enc {
            let h = self.norm(g, b, x, &layer.ln1)?;
            let (a, _) = self.attention(g, b, &layer.attn, h, h, batch, len, len, &mask)?;
            x = g.add(x, a)?;
            let h = self.norm(g, b, x, &layer.ln2)?;
            let f = self.ffn(g, b, h, &layer.ffn)?;
            x = g.add(x, f)?;
        }
        self.norm(g, b, x, &self.layout.enc_ln)
    }

    /// Runs the causal decoder over `[batch·tgt_len × dim]` input embeddings.
    /// Returns log-probabilities and the head-averaged cross-attention.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        b: &Bound,
        embeddings: Var,
        tgt_len: usize,
        encoder_out: Var,
        src_pad: &[bool],
        batch: usize,
        src_len: usize,
    ) -> Result<(Var, Tensor)> {
        self.check_len(tgt_len)?;
        let self_mask = self.causal_mask(batch, tgt_len);
        let cross_mask = self.key_padding_mask(src_pad, batch, tgt_len, src_len);
        let attn_layer = self
            .config
            .attention_layer
            .unwrap_or(self.config.num_layers - 1);
        let mut x = embeddings;
        let mut attention = None;
        for (l, layer) in self.layout.dec.iter().enumerate() {
            let h = self.norm(g, b, x, &layer.ln1)?;
            let (a, _) = self.attention(
                g,
                b,
                &layer.self_attn,
                h,
                h,
                batch,
                tgt_len,
                tgt_len,
                &self_mask,
            )?;
            x = g.add(x, a)?;
            let h = self.norm(g, b, x, &layer.ln2)?;
            let (a, probs) = self.attention(
                g,
                b,
                &layer.cross_attn,
                h,
                encoder_out,
                batch,
                tgt_len,
                src_len,
                &cross_mask,
            )?;
            if l == attn_layer {
                attention = Some(self.head_average(g.value(probs), batch, tgt_len, src_len));
            }
            x = g.add(x, a)?;
            let h = self.norm(g, b, x, &layer.ln3)?;
            let f = self.ffn(g, b, h, &layer.ffn)?;
            x = g.add(x, f)?;
        }
        let x = self.norm(g, b, x, &self.layout.dec_ln)?;
        let logits = g.matmul_t(x, b.at(self.layout.tok_emb))?;
        let logits = g.add_bias(logits, b.at(self.layout.out_bias))?;
        let log_probs = g.log_softmax(logits)?;
        Ok((log_probs, attention.expect("attention layer within range")))
    }

    fn head_average(&self, probs: &Tensor, batch: usize, lq: usize, lk: usize) -> Tensor {
        let h = self.config.num_heads;
        let mut out = vec![0.0; batch * lq * lk];
        for bi in 0..batch {
            let dst = &mut out[bi * lq * lk..(bi + 1) * lq * lk];
            for hi in 0..h {
                let src = &probs.data()[(bi * h + hi) * lq * lk..(bi * h + hi + 1) * lq * lk];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d /= h as f64);
        }
        Tensor::new(vec![batch, lq, lk], out).expect("attention shape")
    }

    /// Source and decoder-input embeddings of a batch.
    pub fn embed_batch(
        &self,
        g: &mut Graph,
        b: &Bound,
        batch: &ParallelBatch,
    ) -> Result<(Var, Var)> {
        let le = self.config.tag_mode == TagMode::LanguageEmbedding;
        let src_langs = le.then(|| batch.source_language_rows());
        let tgt_langs = le.then(|| batch.target_language_rows());
        let src = self.embed_tokens(
            g,
            b,
            &batch.source,
            batch.batch,
            batch.src_len,
            src_langs.as_deref(),
        )?;
        let tgt = self.embed_tokens(
            g,
            b,
            &batch.decoder_input,
            batch.batch,
            batch.tgt_len,
            tgt_langs.as_deref(),
        )?;
        Ok((src, tgt))
    }

    /// Teacher-forced forward pass from pre-computed embeddings.
    pub fn forward_embedded(
        &self,
        g: &mut Graph,
        b: &Bound,
        src: Var,
        tgt: Var,
        batch: &ParallelBatch,
        src_pad: &[bool],
    ) -> Result<ForwardOutput> {
        let encoder_out = self.encode(g, b, src, src_pad, batch.batch, batch.src_len)?;
        let (log_probs, cross_attention) = self.decode(
            g,
            b,
            tgt,
            batch.tgt_len,
            encoder_out,
            src_pad,
            batch.batch,
            batch.src_len,
        )?;
        Ok(ForwardOutput {
            log_probs,
            encoder_out,
            cross_attention,
        })
    }

    /// Teacher-forced forward pass over a padded batch.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        batch: &ParallelBatch,
    ) -> Result<ForwardOutput> {
        let (src, tgt) = self.embed_batch(g, b, batch)?;
        self.forward_embedded(g, b, src, tgt, batch, &batch.src_pad)
    }
}
