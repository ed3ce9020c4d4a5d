//! Graph-free incremental decoding with per-layer key/value caches.

use super::params::{AttnIdx, FfnIdx, LnIdx};
use super::{Seq2Seq, TagMode, LN_EPS};
use crate::data::PAD;
use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm, log_softmax_row, softmax_row};
use crate::tensor::{Graph, Tensor};

/// Encoder outputs of a padded source batch plus the cross-attention keys
/// and values of every decoder layer.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub batch: usize,
    pub src_len: usize,
    /// `[batch·src_len × dim]`
    pub encoder_out: Tensor,
    pub src_pad: Vec<bool>,
    cross_kv: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Incremental decoder over a set of hypotheses, each tied to one encoded row.
#[derive(Clone, Debug)]
pub struct DecoderState<'a> {
    model: &'a Seq2Seq,
    enc: &'a EncodedBatch,
    rows: Vec<usize>,
    langs: Option<Vec<usize>>,
    /// `[layer][hypothesis]` flat `[pos × dim]` caches.
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
    pos: usize,
}

impl Seq2Seq {
    fn p(&self, i: usize) -> &[f64] {
        self.params.tensors()[i].data()
    }

    fn linear_rows(&self, x: &[f64], n: usize, w: usize, b: usize) -> Vec<f64> {
        let wt = &self.params.tensors()[w];
        let (din, dout) = (wt.shape()[0], wt.shape()[1]);
        let mut out = vec![0.0; n * dout];
        gemm(false, false, n, din, dout, x, wt.data(), 0.0, &mut out);
        let bias = self.p(b);
        out.chunks_mut(dout)
            .for_each(|r| r.iter_mut().zip(bias).for_each(|(y, b)| *y += b));
        out
    }

    fn norm_rows(&self, x: &[f64], ln: &LnIdx) -> Vec<f64> {
        let (g, b) = (self.p(ln.g), self.p(ln.b));
        let w = g.len();
        let mut out = vec![0.0; x.len()];
        for (row, o) in x.chunks(w).zip(out.chunks_mut(w)) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            for i in 0..w {
                o[i] = (row[i] - mean) * rs * g[i] + b[i];
            }
        }
        out
    }

    fn ffn_rows(&self, x: &[f64], n: usize, f: &FfnIdx) -> Vec<f64> {
        let mut h = self.linear_rows(x, n, f.w1, f.b1);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        self.linear_rows(&h, n, f.w2, f.b2)
    }

    /// Encodes token sequences (each at most `max_len`) padded to a common
    /// length. `langs` gives the source language per sequence and is needed
    /// in language-embedding mode.
    pub fn encode_batch(
        &self,
        sources: &[&[usize]],
        langs: Option<&[usize]>,
    ) -> Result<EncodedBatch> {
        let batch = sources.len();
        if batch == 0 {
            return Err(Error::invalid("batch", "empty batch"));
        }
        let src_len = sources.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
        let mut tokens = vec![PAD; batch * src_len];
        let mut src_pad = vec![true; batch * src_len];
        for (b, s) in sources.iter().enumerate() {
            tokens[b * src_len..b * src_len + s.len()].copy_from_slice(s);
            src_pad[b * src_len..b * src_len + s.len()].fill(false);
        }
        let lang_rows: Option<Vec<usize>> = langs.map(|l| {
            l.iter()
                .flat_map(|&x| std::iter::repeat_n(x, src_len))
                .collect()
        });
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let emb = self.embed_tokens(
            &mut g,
            &bound,
            &tokens,
            batch,
            src_len,
            lang_rows.as_deref(),
        )?;
        let out = self.encode(&mut g, &bound, emb, &src_pad, batch, src_len)?;
        let encoder_out = g.take_value(out);
        let n = batch * src_len;
        let cross_kv = self
            .layout
            .dec
            .iter()
            .map(|l| {
                let a = &l.cross_attn;
                (
                    self.linear_rows(encoder_out.data(), n, a.wk, a.bk),
                    self.linear_rows(encoder_out.data(), n, a.wv, a.bv),
                )
            })
            .collect();
        Ok(EncodedBatch {
            batch,
            src_len,
            encoder_out,
            src_pad,
            cross_kv,
        })
    }

    /// Starts decoding one hypothesis per entry of `rows` (indices into the
    /// encoded batch). `langs` gives target languages in language-embedding mode.
    pub fn start_decoding<'a>(
        &'a self,
        enc: &'a EncodedBatch,
        rows: Vec<usize>,
        langs: Option<Vec<usize>>,
    ) -> Result<DecoderState<'a>> {
        if rows.iter().any(|&r| r >= enc.batch) {
            return Err(Error::invalid(
                "decoder rows",
                "row outside the encoded batch",
            ));
        }
        match (self.config.tag_mode, &langs) {
            (TagMode::LanguageEmbedding, None) => {
                return Err(Error::invalid("language id", "missing"))
            }
            (_, Some(l))
                if l.len() != rows.len() || l.iter().any(|&x| x >= self.config.num_languages) =>
            {
                return Err(Error::invalid("language id", "bad target languages"))
            }
            _ => {}
        }
        let layers = self.config.num_layers;
        let n = rows.len();
        Ok(DecoderState {
            model: self,
            enc,
            rows,
            langs: if self.config.tag_mode == TagMode::LanguageEmbedding {
                langs
            } else {
                None
            },
            keys: vec![vec![Vec::new(); n]; layers],
            values: vec![vec![Vec::new(); n]; layers],
            pos: 0,
        })
    }
}

impl DecoderState<'_> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Keeps hypotheses `index` (in that order), duplicating as needed.
    pub fn reorder(&mut self, index: &[usize]) {
        self.rows = index.iter().map(|&i| self.rows[i]).collect();
        if let Some(l) = &self.langs {
            self.langs = Some(index.iter().map(|&i| l[i]).collect());
        }
        for cache in self.keys.iter_mut().chain(self.values.iter_mut()) {
            *cache = index.iter().map(|&i| cache[i].clone()).collect();
        }
    }

    /// Feeds one input token per hypothesis and returns `[n × vocab]`
    /// log-probabilities for the next position.
    pub fn step(&mut self, tokens: &[usize]) -> Result<Tensor> {
        let m = self.model;
        let cfg = &m.config;
        let (n, d) = (self.rows.len(), cfg.model_dim);
        if tokens.len() != n {
            return Err(Error::shape("decoder step", &[n], &[tokens.len()]));
        }
        if self.pos >= cfg.max_len {
            return Err(Error::Length {
                len: self.pos + 1,
                max: cfg.max_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::invalid("token id", bad));
        }
        let emb = m.p(m.layout.tok_emb);
        let pe = m.positional.row(self.pos);
        let scale = (d as f64).sqrt();
        let mut x = vec![0.0; n * d];
        for (r, &t) in tokens.iter().enumerate() {
            for k in 0..d {
                x[r * d + k] = emb[t * d + k] * scale + pe[k];
            }
            if let (Some(langs), Some(li)) = (&self.langs, m.layout.lang_emb) {
                let le = &m.p(li)[langs[r] * d..(langs[r] + 1) * d];
                x[r * d..(r + 1) * d]
                    .iter_mut()
                    .zip(le)
                    .for_each(|(v, l)| *v += l);
            }
        }
        for (l, layer) in m.layout.dec.iter().enumerate() {
            let h = m.norm_rows(&x, &layer.ln1);
            let a = self.self_attention(l, &h, &layer.self_attn);
            x.iter_mut().zip(&a).for_each(|(v, a)| *v += a);
            let h = m.norm_rows(&x, &layer.ln2);
            let a = self.cross_attention(l, &h, &layer.cross_attn);
            x.iter_mut().zip(&a).for_each(|(v, a)| *v += a);
            let h = m.norm_rows(&x, &layer.ln3);
            let f = m.ffn_rows(&h, n, &layer.ffn);
            x.iter_mut().zip(&f).for_each(|(v, f)| *v += f);
        }
        let x = m.norm_rows(&x, &m.layout.dec_ln);
        let v = cfg.vocab_size;
        let mut logits = vec![0.0; n * v];
        gemm(false, true, n, d, v, &x, emb, 0.0, &mut logits);
        let bias = m.p(m.layout.out_bias);
        for row in logits.chunks_mut(v) {
            row.iter_mut().zip(bias).for_each(|(y, b)| *y += b);
            log_softmax_row(row);
        }
        self.pos += 1;
        Tensor::new(vec![n, v], logits)
    }

    fn self_attention(&mut self, layer: usize, h: &[f64], a: &AttnIdx) -> Vec<f64> {
        let m = self.model;
        let n = self.rows.len();
        let d = m.config.model_dim;
        let q = m.linear_rows(h, n, a.wq, a.bq);
        let k = m.linear_rows(h, n, a.wk, a.bk);
        let v = m.linear_rows(h, n, a.wv, a.bv);
        for r in 0..n {
            self.keys[layer][r].extend_from_slice(&k[r * d..(r + 1) * d]);
            self.values[layer][r].extend_from_slice(&v[r * d..(r + 1) * d]);
        }
        let len = self.pos + 1;
        let mut ctx = vec![0.0; n * d];
        for r in 0..n {
            attend(
                &q[r * d..(r + 1) * d],
                &self.keys[layer][r],
                &self.values[layer][r],
                None,
                len,
                m.config.num_heads,
                &mut ctx[r * d..(r + 1) * d],
            );
        }
        m.linear_rows(&ctx, n, a.wo, a.bo)
    }

    fn cross_attention(&self, layer: usize, h: &[f64], a: &AttnIdx) -> Vec<f64> {
        let m = self.model;
        let n = self.rows.len();
        let d = m.config.model_dim;
        let il = self.enc.src_len;
        let q = m.linear_rows(h, n, a.wq, a.bq);
        let (keys, values) = &self.enc.cross_kv[layer];
        let mut ctx = vec![0.0; n * d];
        for (r, &row) in self.rows.iter().enumerate() {
            let span = row * il * d..(row + 1) * il * d;
            attend(
                &q[r * d..(r + 1) * d],
                &keys[span.clone()],
                &values[span],
                Some(&self.enc.src_pad[row * il..(row + 1) * il]),
                il,
                m.config.num_heads,
                &mut ctx[r * d..(r + 1) * d],
            );
        }
        m.linear_rows(&ctx, n, a.wo, a.bo)
    }
}

/// Multi-head attention of one query over `len` cached key/value rows.
fn attend(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    mask: Option<&[bool]>,
    len: usize,
    heads: usize,
    out: &mut [f64],
) {
    let d = q.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut scores = vec![0.0; len];
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (s, score) in scores.iter_mut().enumerate() {
            let kh = &keys[s * d + h * dh..s * d + (h + 1) * dh];
            *score = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax_row(&mut scores, mask);
        let oh = &mut out[h * dh..(h + 1) * dh];
        for (s, &p) in scores.iter().enumerate() {
            let vh = &values[s * d + h * dh..s * d + (h + 1) * dh];
            oh.iter_mut().zip(vh).for_each(|(o, v)| *o += p * v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ModelConfig, TagMode};
    use super::*;
    use crate::data::{Direction, LangId, ParallelBatch, ParallelExample, EOS};

    fn check(tag_mode: TagMode) {
        let cfg = ModelConfig {
            num_layers: 2,
            model_dim: 8,
            num_heads: 2,
            ffn_dim: 16,
            vocab_size: 20,
            max_len: 10,
            label_smoothing: 0.1,
            tag_mode,
            num_languages: 3,
            attention_layer: None,
        };
        let m = Seq2Seq::new(cfg, 17).unwrap();
        let exs = [
            ParallelExample {
                source: vec![4, 9, 10, 11],
                target: vec![12, 13, 14, EOS],
                direction: Direction::new(LangId(1), LangId(0)),
                sentence_id: 0,
            },
            ParallelExample {
                source: vec![5, 7],
                target: vec![15, EOS],
                direction: Direction::new(LangId(0), LangId(2)),
                sentence_id: 1,
            },
        ];
        let batch = ParallelBatch::new(&[&exs[0], &exs[1]]).unwrap();
        let mut g = Graph::new();
        let b = m.bind_frozen(&mut g);
        let out = m.forward(&mut g, &b, &batch).unwrap();
        let full = g.value(out.log_probs);

        let le = tag_mode == TagMode::LanguageEmbedding;
        let srcs: Vec<&[usize]> = exs.iter().map(|e| e.source.as_slice()).collect();
        let src_langs = [1, 0];
        let enc = m.encode_batch(&srcs, le.then_some(&src_langs[..])).unwrap();
        let mut st = m
            .start_decoding(&enc, vec![1, 0], le.then(|| vec![2, 0]))
            .unwrap();
        st.reorder(&[1, 0]);
        for j in 0..batch.tgt_len {
            let toks: Vec<usize> = (0..2)
                .map(|r| batch.decoder_input[r * batch.tgt_len + j])
                .collect();
            let lp = st.step(&toks).unwrap();
            for r in 0..2 {
                let reference = full.row(r * batch.tgt_len + j);
                for (a, b) in lp.row(r).iter().zip(reference) {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn incremental_matches_teacher_forcing() {
        check(TagMode::SourceTag);
        check(TagMode::LanguageEmbedding);
    }
}
