//! Token space, parallel examples and padded batches.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

/// Index of a language. Language 0 is the pivot ("English") language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LangId(pub usize);

pub const ENGLISH: LangId = LangId(0);

impl LangId {
    pub fn is_english(self) -> bool {
        self == ENGLISH
    }

    /// Short code used in reports and file formats (`en`, `l1`, `l2`, ...).
    pub fn code(self) -> String {
        if self.is_english() {
            "en".to_string()
        } else {
            format!("l{}", self.0)
        }
    }

    pub fn parse(code: &str) -> Result<Self> {
        if code == "en" {
            return Ok(ENGLISH);
        }
        code.strip_prefix('l')
            .and_then(|n| n.parse().ok())
            .filter(|&n: &usize| n > 0)
            .map(LangId)
            .ok_or_else(|| Error::invalid("language code", code))
    }
}

impl fmt::Display for LangId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

/// A translation direction; doubles as the language-pair id `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub src: LangId,
    pub tgt: LangId,
}

impl Direction {
    pub fn new(src: LangId, tgt: LangId) -> Self {
        Direction { src, tgt }
    }

    pub fn is_zero_shot(self) -> bool {
        !self.src.is_english() && !self.tgt.is_english()
    }

    pub fn parse(id: &str) -> Result<Self> {
        let (s, t) = id
            .split_once('-')
            .ok_or_else(|| Error::invalid("direction", id))?;
        Ok(Direction::new(LangId::parse(s)?, LangId::parse(t)?))
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

/// Shared integer token space: `PAD, BOS, EOS`, one tag per language, then
/// one block of `concept_size` content tokens per language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub num_languages: usize,
    pub concept_size: usize,
}

impl Vocab {
    pub fn new(num_languages: usize, concept_size: usize) -> Self {
        Vocab {
            num_languages,
            concept_size,
        }
    }

    pub fn size(&self) -> usize {
        3 + self.num_languages * (1 + self.concept_size)
    }

    /// Target-language tag token (`<2xx>`).
    pub fn tag(&self, lang: LangId) -> usize {
        3 + lang.0
    }

    pub fn tag_language(&self, token: usize) -> Option<LangId> {
        (3..3 + self.num_languages)
            .contains(&token)
            .then(|| LangId(token - 3))
    }

    fn content_base(&self) -> usize {
        3 + self.num_languages
    }

    /// Token in `lang`'s block at `slot`.
    pub fn content(&self, lang: LangId, slot: usize) -> usize {
        debug_assert!(slot < self.concept_size && lang.0 < self.num_languages);
        self.content_base() + lang.0 * self.concept_size + slot
    }

    /// Inverse of [`Vocab::content`].
    pub fn content_slot(&self, token: usize) -> Option<(LangId, usize)> {
        let base = self.content_base();
        (token >= base && token < self.size()).then(|| {
            (
                LangId((token - base) / self.concept_size),
                (token - base) % self.concept_size,
            )
        })
    }

    pub fn is_special(&self, token: usize) -> bool {
        token < 3
    }
}

/// One parallel sentence pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelExample {
    /// Source tokens (tag-prefixed in source-tag mode).
    pub source: Vec<usize>,
    /// Target tokens, EOS-terminated.
    pub target: Vec<usize>,
    pub direction: Direction,
    pub sentence_id: u64,
}

/// Examples padded to common source and target lengths.
#[derive(Clone, Debug)]
pub struct ParallelBatch {
    pub batch: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    /// `[batch × src_len]` source tokens.
    pub source: Vec<usize>,
    /// `[batch × src_len]`, true where the source is padding.
    pub src_pad: Vec<bool>,
    /// `[batch × tgt_len]` label tokens `y`.
    pub target: Vec<usize>,
    /// `[batch × tgt_len]`, true where the target is padding.
    pub tgt_pad: Vec<bool>,
    /// `[batch × tgt_len]` decoder inputs `z = <s>, y1, ..., y_{J-1}`.
    pub decoder_input: Vec<usize>,
    pub directions: Vec<Direction>,
    pub sentence_ids: Vec<u64>,
    pub src_lens: Vec<usize>,
    pub tgt_lens: Vec<usize>,
}

impl ParallelBatch {
    pub fn new(examples: &[&ParallelExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("batch", "empty batch"));
        }
        if let Some(e) = examples.iter().find(|e| e.target.is_empty()) {
            return Err(Error::invalid(
                "example",
                format!("empty target for {}", e.direction),
            ));
        }
        let batch = examples.len();
        let src_len = examples
            .iter()
            .map(|e| e.source.len())
            .max()
            .unwrap_or(0)
            .max(1);
        let tgt_len = examples.iter().map(|e| e.target.len()).max().unwrap_or(0);
        let mut out = ParallelBatch {
            batch,
            src_len,
            tgt_len,
            source: vec![PAD; batch * src_len],
            src_pad: vec![true; batch * src_len],
            target: vec![PAD; batch * tgt_len],
            tgt_pad: vec![true; batch * tgt_len],
            decoder_input: vec![PAD; batch * tgt_len],
            directions: examples.iter().map(|e| e.direction).collect(),
            sentence_ids: examples.iter().map(|e| e.sentence_id).collect(),
            src_lens: examples.iter().map(|e| e.source.len()).collect(),
            tgt_lens: examples.iter().map(|e| e.target.len()).collect(),
        };
        for (b, e) in examples.iter().enumerate() {
            for (i, &t) in e.source.iter().enumerate() {
                out.source[b * src_len + i] = t;
                out.src_pad[b * src_len + i] = false;
            }
            out.decoder_input[b * tgt_len] = BOS;
            for (j, &t) in e.target.iter().enumerate() {
                out.target[b * tgt_len + j] = t;
                out.tgt_pad[b * tgt_len + j] = false;
                if j + 1 < tgt_len {
                    out.decoder_input[b * tgt_len + j + 1] = t;
                }
            }
        }
        Ok(out)
    }

    /// The same examples in the order given by `perm` (`out[i] = self[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> ParallelBatch {
        let rows = |v: &[usize], w: usize| -> Vec<usize> {
            perm.iter()
                .flat_map(|&p| v[p * w..(p + 1) * w].iter().copied())
                .collect()
        };
        let rows_b = |v: &[bool], w: usize| -> Vec<bool> {
            perm.iter()
                .flat_map(|&p| v[p * w..(p + 1) * w].iter().copied())
                .collect()
        };
        ParallelBatch {
            batch: self.batch,
            src_len: self.src_len,
            tgt_len: self.tgt_len,
            source: rows(&self.source, self.src_len),
            src_pad: rows_b(&self.src_pad, self.src_len),
            target: rows(&self.target, self.tgt_len),
            tgt_pad: rows_b(&self.tgt_pad, self.tgt_len),
            decoder_input: rows(&self.decoder_input, self.tgt_len),
            directions: perm.iter().map(|&p| self.directions[p]).collect(),
            sentence_ids: perm.iter().map(|&p| self.sentence_ids[p]).collect(),
            src_lens: perm.iter().map(|&p| self.src_lens[p]).collect(),
            tgt_lens: perm.iter().map(|&p| self.tgt_lens[p]).collect(),
        }
    }

    /// Per-row language ids for the source side (`[batch × src_len]`).
    pub fn source_language_rows(&self) -> Vec<usize> {
        self.directions
            .iter()
            .flat_map(|d| std::iter::repeat_n(d.src.0, self.src_len))
            .collect()
    }

    /// Per-row language ids for the decoder side (`[batch × tgt_len]`).
    pub fn target_language_rows(&self) -> Vec<usize> {
        self.directions
            .iter()
            .flat_map(|d| std::iter::repeat_n(d.tgt.0, self.tgt_len))
            .collect()
    }

    pub fn target_positions(&self) -> usize {
        self.tgt_pad.iter().filter(|&&p| !p).count()
    }
}
