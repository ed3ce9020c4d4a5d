//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use mxencdec::data::{Direction, LangId, ParallelBatch, ParallelExample};
use mxencdec::model::{ModelConfig, Seq2Seq, TagMode};
use mxencdec::synthdata::{default_language_specs, SyntheticWorld};
use mxencdec::tensor::Tensor;
use rand::Rng;

pub const CONCEPTS: usize = 6;

pub fn tiny_world(tag_mode: TagMode) -> SyntheticWorld {
    let specs: Vec<_> = default_language_specs().into_iter().take(3).collect();
    SyntheticWorld::new(&specs, CONCEPTS, tag_mode).unwrap()
}

pub fn tiny_config(world: &SyntheticWorld) -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        model_dim: 8,
        num_heads: 2,
        ffn_dim: 12,
        vocab_size: world.vocab().size(),
        max_len: 10,
        label_smoothing: 0.1,
        tag_mode: world.tag_mode(),
        num_languages: world.num_languages(),
        attention_layer: None,
    }
}

pub fn tiny_model(world: &SyntheticWorld, seed: u64) -> Seq2Seq {
    Seq2Seq::new(tiny_config(world), seed).unwrap()
}

/// Random examples over every ordered language pair.
pub fn random_examples(
    world: &SyntheticWorld,
    n: usize,
    max_concepts: usize,
    rng: &mut impl Rng,
) -> Vec<ParallelExample> {
    let nl = world.num_languages();
    (0..n)
        .map(|i| {
            let src = rng.random_range(0..nl);
            let mut tgt = rng.random_range(0..nl - 1);
            if tgt >= src {
                tgt += 1;
            }
            let len = rng.random_range(1..=max_concepts);
            let concepts: Vec<usize> = (0..len).map(|_| rng.random_range(0..CONCEPTS)).collect();
            world
                .example(
                    Direction::new(LangId(src), LangId(tgt)),
                    &concepts,
                    i as u64,
                )
                .unwrap()
        })
        .collect()
}

pub fn random_batch(
    world: &SyntheticWorld,
    n: usize,
    max_concepts: usize,
    rng: &mut impl Rng,
) -> ParallelBatch {
    let ex = random_examples(world, n, max_concepts, rng);
    let refs: Vec<&ParallelExample> = ex.iter().collect();
    ParallelBatch::new(&refs).unwrap()
}

/// Random row-stochastic attention `[batch × J × I]` over each row's real
/// source positions.
pub fn random_attention(batch: &ParallelBatch, rng: &mut impl Rng) -> Tensor {
    let (b, jl, il) = (batch.batch, batch.tgt_len, batch.src_len);
    let mut data = vec![0.0; b * jl * il];
    for r in 0..b {
        for j in 0..jl {
            let row = &mut data[(r * jl + j) * il..(r * jl + j + 1) * il];
            let n = batch.src_lens[r];
            for x in row.iter_mut().take(n) {
                *x = rng.random::<f64>();
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
    Tensor::new(vec![b, jl, il], data).unwrap()
}

/// Random log-probability rows `[rows × vocab]`.
pub fn random_log_probs(rows: usize, vocab: usize, rng: &mut impl Rng) -> Tensor {
    let mut data = Vec::with_capacity(rows * vocab);
    for _ in 0..rows {
        let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        data.extend(logits.iter().map(|l| l - z));
    }
    Tensor::new(vec![rows, vocab], data).unwrap()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Independent reimplementation of the interpolation equations, written from
/// the math with explicit loops and no shared helpers.
pub mod oracle {
    /// Share of content positions (all but the first) where `m` is 1.
    pub fn tag_share(m: &[f64]) -> f64 {
        let mut ones = 0.0;
        for x in &m[1..] {
            ones += x;
        }
        ones / (m.len() - 1) as f64
    }

    /// Mixed source embeddings. `ex`, `exp` hold one row per position.
    /// With a tag, row 0 is weighted by the content share.
    pub fn source(ex: &[Vec<f64>], exp: &[Vec<f64>], m: &[f64], tagged: bool) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for i in 0..m.len() {
            let w = if tagged && i == 0 { tag_share(m) } else { m[i] };
            let mut row = Vec::new();
            for k in 0..ex[i].len() {
                row.push(ex[i][k] * w + exp[i][k] * (1.0 - w));
            }
            out.push(row);
        }
        out
    }

    /// Attention-based `t_j`. Source weights are `m_i` (content share at a
    /// tag). Rows where both sums vanish fall back to the content share.
    pub fn t_attention(a: &[Vec<f64>], a2: &[Vec<f64>], m: &[f64], tagged: bool) -> Vec<f64> {
        let share = if tagged {
            tag_share(m)
        } else {
            m.iter().sum::<f64>() / m.len() as f64
        };
        let mut t = Vec::new();
        for j in 0..a.len() {
            let mut num = 0.0;
            let mut other = 0.0;
            for i in 0..m.len() {
                let w = if tagged && i == 0 { share } else { m[i] };
                if i < a[j].len() {
                    num += a[j][i] * w;
                }
                if i < a2[j].len() {
                    other += a2[j][i] * (1.0 - w);
                }
            }
            if num < 1e-9 && other < 1e-9 {
                t.push(share);
            } else {
                t.push(num / (num + other));
            }
        }
        t
    }

    pub fn t_simplified(m: &[f64], tagged: bool, len: usize) -> Vec<f64> {
        let share = if tagged {
            tag_share(m)
        } else {
            m.iter().sum::<f64>() / m.len() as f64
        };
        vec![share; len]
    }

    pub fn hard(t: &[f64]) -> Vec<f64> {
        t.iter().map(|&x| if x > 0.5 { 1.0 } else { 0.0 }).collect()
    }

    /// `e(z̃_j) = e(z_j)·t_{j−1} + e(z'_j)·(1 − t_{j−1})`, with `t_{−1} = t0`.
    pub fn decoder_inputs(ez: &[Vec<f64>], ezp: &[Vec<f64>], t: &[f64], t0: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for j in 0..ez.len() {
            let w = if j == 0 { t0 } else { t[j - 1] };
            let mut row = Vec::new();
            for k in 0..ez[j].len() {
                row.push(ez[j][k] * w + ezp[j][k] * (1.0 - w));
            }
            out.push(row);
        }
        out
    }

    /// Co-refined, mixed label rows:
    /// `(β·v_j + (1−β)·f_j)·t_j + (β·v'_j + (1−β)·f'_j)·(1 − t_j)`.
    pub fn labels(
        v: &[Vec<f64>],
        vp: &[Vec<f64>],
        f: &[Vec<f64>],
        fp: &[Vec<f64>],
        t: &[f64],
        beta: f64,
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for j in 0..v.len() {
            let mut row = Vec::new();
            for k in 0..v[j].len() {
                let a = beta * v[j][k] + (1.0 - beta) * f[j][k];
                let b = beta * vp[j][k] + (1.0 - beta) * fp[j][k];
                row.push(a * t[j] + b * (1.0 - t[j]));
            }
            out.push(row);
        }
        out
    }

    /// Smoothed one-hot row.
    pub fn one_hot(token: usize, vocab: usize, eps: f64) -> Vec<f64> {
        let mut r = vec![eps / vocab as f64; vocab];
        r[token] += 1.0 - eps;
        r
    }

    /// `σ(τ·d)`.
    pub fn keep_probability(tau: f64, d: f64) -> f64 {
        1.0 / (1.0 + (-tau * d).exp())
    }

    /// Brute-force corpus BLEU-4 with add-one smoothing above unigrams.
    pub fn bleu(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> f64 {
        let mut num = [0f64; 4];
        let mut den = [0f64; 4];
        let (mut h_len, mut r_len) = (0.0, 0.0);
        for (h, r) in hyps.iter().zip(refs) {
            h_len += h.len() as f64;
            r_len += r.len() as f64;
            for n in 1..=4usize {
                if h.len() < n {
                    continue;
                }
                let grams: Vec<&[usize]> = (0..=h.len() - n).map(|i| &h[i..i + n]).collect();
                let ref_grams: Vec<&[usize]> = if r.len() >= n {
                    (0..=r.len() - n).map(|i| &r[i..i + n]).collect()
                } else {
                    Vec::new()
                };
                let mut used = vec![false; ref_grams.len()];
                for g in &grams {
                    if let Some(k) = (0..ref_grams.len()).find(|&k| !used[k] && ref_grams[k] == *g)
                    {
                        used[k] = true;
                        num[n - 1] += 1.0;
                    }
                }
                den[n - 1] += grams.len() as f64;
            }
        }
        if num[0] == 0.0 || h_len == 0.0 {
            return 0.0;
        }
        let mut p = vec![num[0] / den[0]];
        for n in 1..4 {
            p.push((num[n] + 1.0) / (den[n] + 1.0));
        }
        let geo = (p.iter().map(|x| x.ln()).sum::<f64>() / 4.0).exp();
        let bp = if h_len > r_len {
            1.0
        } else {
            (1.0 - r_len / h_len).exp()
        };
        100.0 * bp * geo
    }

    fn d(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// (SC, CH, DB) from the textbook definitions.
    pub fn clustering(x: &[Vec<f64>], labels: &[u64]) -> (f64, f64, f64) {
        let n = x.len();
        let mut ids: Vec<u64> = labels.to_vec();
        ids.sort();
        ids.dedup();
        let k = ids.len();
        let members = |c: u64| -> Vec<usize> { (0..n).filter(|&i| labels[i] == c).collect() };
        let mut sc = 0.0;
        for i in 0..n {
            let own: Vec<usize> = members(labels[i]).into_iter().filter(|&j| j != i).collect();
            let a = own.iter().map(|&j| d(&x[i], &x[j])).sum::<f64>() / own.len() as f64;
            let mut b = f64::INFINITY;
            for &c in &ids {
                if c != labels[i] {
                    let m = members(c);
                    b = b.min(m.iter().map(|&j| d(&x[i], &x[j])).sum::<f64>() / m.len() as f64);
                }
            }
            sc += (b - a) / a.max(b);
        }
        sc /= n as f64;
        let dim = x[0].len();
        let centroid = |m: &[usize]| -> Vec<f64> {
            (0..dim)
                .map(|q| m.iter().map(|&i| x[i][q]).sum::<f64>() / m.len() as f64)
                .collect()
        };
        let all: Vec<usize> = (0..n).collect();
        let g = centroid(&all);
        let (mut bss, mut wss) = (0.0, 0.0);
        let mut cents = Vec::new();
        let mut spreads = Vec::new();
        for &c in &ids {
            let m = members(c);
            let ce = centroid(&m);
            bss += m.len() as f64 * d(&ce, &g).powi(2);
            wss += m.iter().map(|&i| d(&x[i], &ce).powi(2)).sum::<f64>();
            spreads.push(m.iter().map(|&i| d(&x[i], &ce)).sum::<f64>() / m.len() as f64);
            cents.push(ce);
        }
        let ch = (bss / (k - 1) as f64) / (wss / (n - k) as f64);
        let mut db = 0.0;
        for i in 0..k {
            let mut worst = 0.0f64;
            for j in 0..k {
                if i != j {
                    worst = worst.max((spreads[i] + spreads[j]) / d(&cents[i], &cents[j]));
                }
            }
            db += worst;
        }
        (sc, ch, db / k as f64)
    }
}
