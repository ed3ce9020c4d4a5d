use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ModelConfig, TagMode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal(f64),
    Xavier,
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub(crate) struct LnIdx {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EncLayerIdx {
    pub ln1: LnIdx,
    pub attn: AttnIdx,
    pub ln2: LnIdx,
    pub ffn: FfnIdx,
}

#[derive(Clone, Debug)]
pub(crate) struct DecLayerIdx {
    pub ln1: LnIdx,
    pub self_attn: AttnIdx,
    pub ln2: LnIdx,
    pub cross_attn: AttnIdx,
    pub ln3: LnIdx,
    pub ffn: FfnIdx,
}

/// Index of every parameter tensor, in a fixed registration order.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub lang_emb: Option<usize>,
    pub out_bias: usize,
    pub enc: Vec<EncLayerIdx>,
    pub enc_ln: LnIdx,
    pub dec: Vec<DecLayerIdx>,
    pub dec_ln: LnIdx,
    specs: Vec<(String, Vec<usize>, Init)>,
}

struct Builder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnIdx {
        LnIdx {
            g: self.add(format!("{prefix}.gamma"), vec![d], Init::Ones),
            b: self.add(format!("{prefix}.beta"), vec![d], Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let mut lin = |n: &str| {
            (
                self.add(format!("{prefix}.w{n}"), vec![d, d], Init::Xavier),
                self.add(format!("{prefix}.b{n}"), vec![d], Init::Zeros),
            )
        };
        let (wq, bq) = lin("q");
        let (wk, bk) = lin("k");
        let (wv, bv) = lin("v");
        let (wo, bo) = lin("o");
        AttnIdx {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, h: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), vec![d, h], Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), vec![h], Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), vec![h, d], Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), vec![d], Init::Zeros),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Layout {
        let d = c.model_dim;
        let mut b = Builder { specs: Vec::new() };
        let tok_emb = b.add(
            "tok_emb".into(),
            vec![c.vocab_size, d],
            Init::Normal((d as f64).powf(-0.5)),
        );
        let lang_emb = (c.tag_mode == TagMode::LanguageEmbedding).then(|| {
            b.add(
                "lang_emb".into(),
                vec![c.num_languages, d],
                Init::Normal(1.0),
            )
        });
        let out_bias = b.add("out_bias".into(), vec![c.vocab_size], Init::Zeros);
        let enc = (0..c.num_layers)
            .map(|l| {
                let p = format!("enc.{l}");
                EncLayerIdx {
                    ln1: b.ln(&format!("{p}.ln1"), d),
                    attn: b.attn(&format!("{p}.self_attn"), d),
                    ln2: b.ln(&format!("{p}.ln2"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, c.ffn_dim),
                }
            })
            .collect();
        let enc_ln = b.ln("enc.ln", d);
        let dec = (0..c.num_layers)
            .map(|l| {
                let p = format!("dec.{l}");
                DecLayerIdx {
                    ln1: b.ln(&format!("{p}.ln1"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), d),
                    ln2: b.ln(&format!("{p}.ln2"), d),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                    ln3: b.ln(&format!("{p}.ln3"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, c.ffn_dim),
                }
            })
            .collect();
        let dec_ln = b.ln("dec.ln", d);
        Layout {
            tok_emb,
            lang_emb,
            out_bias,
            enc,
            enc_ln,
            dec,
            dec_ln,
            specs: b.specs,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn shapes(&self) -> impl Iterator<Item = &[usize]> {
        self.specs.iter().map(|(_, s, _)| s.as_slice())
    }

    pub fn initialise(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(self.specs.len());
        let mut tensors = Vec::with_capacity(self.specs.len());
        for (name, shape, init) in &self.specs {
            let t = match *init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::from_fn(shape, |_| 1.0),
                Init::Normal(std) => {
                    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
                }
                Init::Xavier => {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
                }
            };
            names.push(name.clone());
            tensors.push(t);
        }
        ModelParams { names, tensors }
    }
}

/// All learnable tensors of the model, addressed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        ModelParams { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
