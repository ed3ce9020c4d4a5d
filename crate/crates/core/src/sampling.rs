//! Stochastic policies: shuffle-ratio sampling, temperature-based corpus
//! sampling and batch pairing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Direction;
use crate::error::{Error, Result};

/// Named RNG streams derived from one experiment seed.
///
/// Each stream is ChaCha8 keyed by the seed with its own stream id, so adding
/// a new consumer never shifts the draws of existing ones.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const CORPUS: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const PAIRING: u64 = 4;
    pub const MASK: u64 = 5;
    pub const RATIO: u64 = 6;
    pub const MIXUP: u64 = 7;
    pub const NOISE: u64 = 8;
    pub const DATA: u64 = 9;
    pub const EVAL_DATA: u64 = 10;
    pub const PAIR_BATCH: u64 = 11;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Corpus size per language pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangPairStats {
    sizes: BTreeMap<Direction, usize>,
}

impl LangPairStats {
    pub fn new(sizes: impl IntoIterator<Item = (Direction, usize)>) -> Result<Self> {
        let sizes: BTreeMap<_, _> = sizes.into_iter().collect();
        if let Some((d, _)) = sizes.iter().find(|(_, &n)| n == 0) {
            return Err(Error::invalid("corpus size", format!("{d} is empty")));
        }
        Ok(LangPairStats { sizes })
    }

    pub fn size(&self, pair: Direction) -> Result<usize> {
        self.sizes
            .get(&pair)
            .copied()
            .ok_or_else(|| Error::invalid("language pair", format!("{pair} not in corpus stats")))
    }

    /// `d(l_i, l_j) = |D_i| / |D_j|`, unclipped.
    pub fn size_ratio(&self, li: Direction, lj: Direction) -> Result<f64> {
        Ok(self.size(li)? as f64 / self.size(lj)? as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Direction, usize)> + '_ {
        self.sizes.iter().map(|(&d, &n)| (d, n))
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Base shuffle ratio: fraction of mask zeros.
    pub p: f64,
    pub tau: f64,
    pub data_temperature: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            p: 0.15,
            tau: 0.8,
            data_temperature: 5.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid("p", self.p));
        }
        if !self.tau.is_finite() {
            return Err(Error::invalid("tau", self.tau));
        }
        if !(self.data_temperature > 0.0) {
            return Err(Error::invalid("data_temperature", self.data_temperature));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `P(g = 1) = σ(τ·d)`.
pub fn keep_probability(tau: f64, d: f64) -> f64 {
    sigmoid(tau * d)
}

/// Draws the shuffle ratio for parents from `li` (unshuffled side) and `lj`:
/// `p` with probability `σ(τ·d(li, lj))`, otherwise `1 − p`.
pub fn sample_pair_ratio(
    li: Direction,
    lj: Direction,
    stats: &LangPairStats,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let d = stats.size_ratio(li, lj)?;
    let g = rng.random_bool(keep_probability(config.tau, d));
    Ok(if g { config.p } else { 1.0 - config.p })
}

/// Samples language pairs with probability proportional to `|D|^{1/T}`.
#[derive(Clone, Debug)]
pub struct CorpusSampler {
    pairs: Vec<Direction>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CorpusSampler {
    pub fn new(stats: &LangPairStats, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::invalid("data_temperature", temperature));
        }
        if stats.is_empty() {
            return Err(Error::invalid("corpus stats", "no language pairs"));
        }
        let pairs: Vec<Direction> = stats.iter().map(|(d, _)| d).collect();
        let weights: Vec<f64> = stats
            .iter()
            .map(|(_, n)| (n as f64).powf(1.0 / temperature))
            .collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(CorpusSampler {
            pairs,
            probs,
            cumulative,
        })
    }

    pub fn pairs(&self) -> &[Direction] {
        &self.pairs
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn probability(&self, pair: Direction) -> f64 {
        self.pairs
            .iter()
            .position(|&p| p == pair)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Direction {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.pairs[i.min(self.pairs.len() - 1)]
    }
}

/// A random permutation for batch pairing: example `i` is paired
/// with example `perm[i]`. Self-pairs are allowed.
pub fn shuffle_for_pairing(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}
