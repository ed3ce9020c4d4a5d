//! Synthetic multilingual corpora.
//!
//! Every language renders the same concept sentences: concepts are mapped to
//! the language's token block through a seeded bijection and the sequence is
//! reordered by a fixed rule. Language 0 is the English pivot.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Direction, LangId, ParallelExample, Vocab, ENGLISH, EOS};
use crate::error::{Error, Result};
use crate::model::TagMode;
use crate::sampling::{stream_rng, LangPairStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reorder {
    Identity,
    Reverse,
    Rotate(usize),
    SwapAdjacentPairs,
}

impl Reorder {
    /// Surface order of a concept sequence.
    pub fn apply<T: Copy>(self, xs: &[T]) -> Vec<T> {
        let mut v = xs.to_vec();
        match self {
            Reorder::Identity => {}
            Reorder::Reverse => v.reverse(),
            Reorder::Rotate(k) => {
                if !v.is_empty() {
                    let k = k % v.len();
                    v.rotate_left(k);
                }
            }
            Reorder::SwapAdjacentPairs => v.chunks_exact_mut(2).for_each(|c| c.swap(0, 1)),
        }
        v
    }

    pub fn invert<T: Copy>(self, xs: &[T]) -> Vec<T> {
        let mut v = xs.to_vec();
        match self {
            Reorder::Rotate(k) => {
                if !v.is_empty() {
                    let k = k % v.len();
                    v.rotate_right(k);
                }
                v
            }
            _ => self.apply(&v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLanguageSpec {
    pub lang: LangId,
    pub permutation_seed: u64,
    pub reorder: Reorder,
    /// Sentences per direction paired with English; ignored for English.
    pub corpus_size: usize,
}

/// The default five-language setup: English plus four languages of
/// decreasing size. The two largest share near-identical word order.
pub fn default_language_specs() -> Vec<SyntheticLanguageSpec> {
    let rules = [
        (Reorder::Identity, 0),
        (Reorder::Identity, 50_000),
        (Reorder::Rotate(1), 20_000),
        (Reorder::Reverse, 5_000),
        (Reorder::SwapAdjacentPairs, 1_000),
    ];
    rules
        .iter()
        .enumerate()
        .map(|(i, &(reorder, corpus_size))| SyntheticLanguageSpec {
            lang: LangId(i),
            permutation_seed: 1000 + i as u64,
            reorder,
            corpus_size,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    ManyToOne,
    OneToMany,
    ManyToMany,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "many_to_one" | "ManyToOne" => Ok(Scenario::ManyToOne),
            "one_to_many" | "OneToMany" => Ok(Scenario::OneToMany),
            "many_to_many" | "ManyToMany" => Ok(Scenario::ManyToMany),
            _ => Err(Error::invalid("scenario", s)),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::ManyToOne => "many_to_one",
            Scenario::OneToMany => "one_to_many",
            Scenario::ManyToMany => "many_to_many",
        })
    }
}

#[derive(Clone, Debug)]
struct Language {
    spec: SyntheticLanguageSpec,
    /// concept → slot within the language's token block
    forward: Vec<usize>,
    /// slot → concept
    inverse: Vec<usize>,
}

/// Languages, vocabulary and rendering rules.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    vocab: Vocab,
    tag_mode: TagMode,
    languages: Vec<Language>,
}

impl SyntheticWorld {
    pub fn new(
        specs: &[SyntheticLanguageSpec],
        concept_size: usize,
        tag_mode: TagMode,
    ) -> Result<Self> {
        if specs.len() < 3 {
            return Err(Error::invalid(
                "languages",
                "need English plus at least two others",
            ));
        }
        if concept_size < 2 {
            return Err(Error::invalid("concept_size", concept_size));
        }
        for (i, s) in specs.iter().enumerate() {
            if s.lang != LangId(i) {
                return Err(Error::invalid(
                    "languages",
                    format!("spec {i} has id {}", s.lang),
                ));
            }
            if i > 0 && s.corpus_size == 0 {
                return Err(Error::invalid(
                    "corpus size",
                    format!("{} has size 0", s.lang),
                ));
            }
        }
        let languages = specs
            .iter()
            .map(|s| {
                let mut forward: Vec<usize> = (0..concept_size).collect();
                forward.shuffle(&mut stream_rng(s.permutation_seed, 0));
                let mut inverse = vec![0; concept_size];
                for (c, &slot) in forward.iter().enumerate() {
                    inverse[slot] = c;
                }
                Language {
                    spec: s.clone(),
                    forward,
                    inverse,
                }
            })
            .collect();
        Ok(SyntheticWorld {
            vocab: Vocab::new(specs.len(), concept_size),
            tag_mode,
            languages,
        })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn tag_mode(&self) -> TagMode {
        self.tag_mode
    }

    pub fn num_languages(&self) -> usize {
        self.languages.len()
    }

    pub fn specs(&self) -> impl Iterator<Item = &SyntheticLanguageSpec> {
        self.languages.iter().map(|l| &l.spec)
    }

    pub fn non_english(&self) -> impl Iterator<Item = LangId> + '_ {
        (1..self.languages.len()).map(LangId)
    }

    fn language(&self, lang: LangId) -> Result<&Language> {
        self.languages
            .get(lang.0)
            .ok_or_else(|| Error::invalid("language id", lang))
    }

    /// Content tokens of a concept sentence in `lang`.
    pub fn render(&self, lang: LangId, concepts: &[usize]) -> Result<Vec<usize>> {
        let l = self.language(lang)?;
        let ordered = l.spec.reorder.apply(concepts);
        ordered
            .iter()
            .map(|&c| {
                l.forward
                    .get(c)
                    .map(|&slot| self.vocab.content(lang, slot))
                    .ok_or_else(|| Error::invalid("concept id", c))
            })
            .collect()
    }

    /// Inverse of [`SyntheticWorld::render`]; `None` if a token is foreign.
    pub fn concepts(&self, lang: LangId, tokens: &[usize]) -> Option<Vec<usize>> {
        let l = self.language(lang).ok()?;
        let surface = tokens
            .iter()
            .map(|&t| match self.vocab.content_slot(t) {
                Some((tl, slot)) if tl == lang => Some(l.inverse[slot]),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(l.spec.reorder.invert(&surface))
    }

    /// Source sequence for `content`, prefixed by the target tag in tag mode.
    pub fn source_sequence(&self, tgt: LangId, content: &[usize]) -> Vec<usize> {
        match self.tag_mode {
            TagMode::SourceTag => std::iter::once(self.vocab.tag(tgt))
                .chain(content.iter().copied())
                .collect(),
            TagMode::LanguageEmbedding => content.to_vec(),
        }
    }

    /// Source content tokens (without a tag).
    pub fn source_content<'a>(&self, source: &'a [usize]) -> &'a [usize] {
        match self.tag_mode {
            TagMode::SourceTag => source.get(1..).unwrap_or(&[]),
            TagMode::LanguageEmbedding => source,
        }
    }

    pub fn example(
        &self,
        direction: Direction,
        concepts: &[usize],
        sentence_id: u64,
    ) -> Result<ParallelExample> {
        let src = self.render(direction.src, concepts)?;
        let mut target = self.render(direction.tgt, concepts)?;
        target.push(EOS);
        Ok(ParallelExample {
            source: self.source_sequence(direction.tgt, &src),
            target,
            direction,
            sentence_id,
        })
    }

    /// Directions trained in a scenario.
    pub fn training_directions(&self, scenario: Scenario) -> Vec<Direction> {
        let mut out = Vec::new();
        for l in self.non_english() {
            if scenario != Scenario::OneToMany {
                out.push(Direction::new(l, ENGLISH));
            }
            if scenario != Scenario::ManyToOne {
                out.push(Direction::new(ENGLISH, l));
            }
        }
        out.sort();
        out
    }

    pub fn dictionary(&self) -> NoiseDictionary {
        let n = self.vocab.concept_size;
        let en = &self.languages[0];
        let maps = self
            .languages
            .iter()
            .skip(1)
            .map(|l| {
                (0..n)
                    .map(|c| {
                        (
                            self.vocab.content(l.spec.lang, l.forward[c]),
                            self.vocab.content(ENGLISH, en.forward[c]),
                        )
                    })
                    .collect()
            })
            .collect();
        NoiseDictionary {
            vocab: self.vocab,
            pairs: maps,
        }
    }
}

/// Concept-sentence generator. Training and evaluation sentences are kept
/// apart by the parity of the concept sum: training sums are even, held-out
/// sums odd.
fn concept_sentence(
    rng: &mut impl Rng,
    concept_size: usize,
    len_range: (usize, usize),
    held_out: bool,
) -> Vec<usize> {
    let len = rng.random_range(len_range.0..=len_range.1);
    let mut s: Vec<usize> = (0..len)
        .map(|_| rng.random_range(0..concept_size))
        .collect();
    let parity = s.iter().sum::<usize>() % 2;
    if parity != usize::from(held_out) {
        let last = s.last_mut().expect("len ≥ 1");
        *last = if *last + 1 < concept_size {
            *last + 1
        } else {
            *last - 1
        };
    }
    s
}

/// True for concept sentences reserved for evaluation.
pub fn is_held_out(concepts: &[usize]) -> bool {
    concepts.iter().sum::<usize>() % 2 == 1
}

/// Training corpora keyed by direction.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub pairs: BTreeMap<Direction, Vec<ParallelExample>>,
}

impl Corpus {
    pub fn stats(&self) -> Result<LangPairStats> {
        LangPairStats::new(self.pairs.iter().map(|(&d, v)| (d, v.len())))
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.pairs.keys().copied().collect()
    }

    pub fn num_examples(&self) -> usize {
        self.pairs.values().map(Vec::len).sum()
    }

    /// Line format: `pair_id<TAB>src tokens<TAB>tgt tokens`.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        for (d, exs) in &self.pairs {
            for e in exs {
                writeln!(w, "{d}\t{}\t{}", join(&e.source), join(&e.target))?;
            }
        }
        Ok(())
    }

    /// Reads [`Corpus::write_tsv`] output; sentence ids are line ranks within
    /// each direction.
    pub fn read_tsv(r: impl BufRead) -> Result<Corpus> {
        let mut pairs: BTreeMap<Direction, Vec<ParallelExample>> = BTreeMap::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let loc = format!("line {}", n + 1);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(
                    loc,
                    format!("expected 3 columns, found {}", cols.len()),
                ));
            }
            let direction = Direction::parse(cols[0]).map_err(|e| Error::parse(&loc, e))?;
            let source = split(cols[1]).map_err(|e| Error::parse(&loc, e))?;
            let target = split(cols[2]).map_err(|e| Error::parse(&loc, e))?;
            let v = pairs.entry(direction).or_default();
            v.push(ParallelExample {
                source,
                target,
                direction,
                sentence_id: v.len() as u64,
            });
        }
        Ok(Corpus { pairs })
    }
}

fn join(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn split(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| format!("bad token {t:?}")))
        .collect()
}

/// English-centric training corpora: for each non-English language `l`, the
/// same `corpus_size` concept sentences are used for `l→en` and `en→l`
/// (whichever the scenario trains).
pub fn generate_corpus(
    world: &SyntheticWorld,
    scenario: Scenario,
    length_range: (usize, usize),
    seed: u64,
) -> Result<Corpus> {
    if length_range.0 == 0 || length_range.0 > length_range.1 {
        return Err(Error::invalid(
            "sentence length range",
            format!("{length_range:?}"),
        ));
    }
    let directions = world.training_directions(scenario);
    let mut corpus = Corpus::default();
    for l in world.non_english() {
        let size = world.language(l)?.spec.corpus_size;
        let mut rng = stream_rng(seed, 1000 + l.0 as u64);
        let sentences: Vec<Vec<usize>> = (0..size)
            .map(|_| concept_sentence(&mut rng, world.vocab.concept_size, length_range, false))
            .collect();
        for d in [Direction::new(l, ENGLISH), Direction::new(ENGLISH, l)] {
            if directions.contains(&d) {
                let exs = sentences
                    .iter()
                    .enumerate()
                    .map(|(i, s)| world.example(d, s, i as u64))
                    .collect::<Result<Vec<_>>>()?;
                corpus.pairs.insert(d, exs);
            }
        }
    }
    Ok(corpus)
}

/// Held-out concept sentences rendered in every language, aligned by index.
#[derive(Clone, Debug)]
pub struct MultiwaySet {
    pub concepts: Vec<Vec<usize>>,
    /// Content tokens per language, `sentences[lang][i]`.
    pub sentences: Vec<Vec<Vec<usize>>>,
    /// Sentence ids (`first_id + i`).
    pub ids: Vec<u64>,
}

pub const HELD_OUT_ID_BASE: u64 = 1 << 40;

pub fn generate_multiway_eval(
    world: &SyntheticWorld,
    n_sentences: usize,
    length_range: (usize, usize),
    seed: u64,
) -> Result<MultiwaySet> {
    if n_sentences == 0 {
        return Err(Error::invalid("n_sentences", 0));
    }
    let mut rng = stream_rng(seed, crate::sampling::streams::EVAL_DATA);
    let concepts: Vec<Vec<usize>> = (0..n_sentences)
        .map(|_| concept_sentence(&mut rng, world.vocab.concept_size, length_range, true))
        .collect();
    let sentences = (0..world.num_languages())
        .map(|l| {
            concepts
                .iter()
                .map(|c| world.render(LangId(l), c))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiwaySet {
        concepts,
        sentences,
        ids: (0..n_sentences as u64)
            .map(|i| HELD_OUT_ID_BASE + i)
            .collect(),
    })
}

impl MultiwaySet {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// The first `n` sentences (or all) as test examples for `direction`.
    pub fn examples(
        &self,
        world: &SyntheticWorld,
        direction: Direction,
        n: usize,
    ) -> Result<Vec<ParallelExample>> {
        self.concepts
            .iter()
            .zip(&self.ids)
            .take(n)
            .map(|(c, &id)| world.example(direction, c, id))
            .collect()
    }
}

/// Token translation between each language and English, consistent with
/// the language bijections.
#[derive(Clone, Debug)]
pub struct NoiseDictionary {
    vocab: Vocab,
    /// `pairs[l − 1]` lists `(token in l, English token)` by concept.
    pairs: Vec<Vec<(usize, usize)>>,
}

impl NoiseDictionary {
    fn entries(&self, lang: LangId) -> Option<&[(usize, usize)]> {
        lang.0
            .checked_sub(1)
            .and_then(|i| self.pairs.get(i))
            .map(Vec::as_slice)
    }

    pub fn to_english(&self, token: usize) -> Option<usize> {
        let (lang, _) = self.vocab.content_slot(token)?;
        self.entries(lang)?
            .iter()
            .find(|(t, _)| *t == token)
            .map(|&(_, e)| e)
    }

    pub fn from_english(&self, lang: LangId, token: usize) -> Option<usize> {
        self.entries(lang)?
            .iter()
            .find(|(_, e)| *e == token)
            .map(|&(t, _)| t)
    }

    /// Line format: `lang<TAB>token<TAB>english_token`.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        for (i, entries) in self.pairs.iter().enumerate() {
            for (t, e) in entries {
                writeln!(w, "{}\t{t}\t{e}", LangId(i + 1))?;
            }
        }
        Ok(())
    }

    pub fn read_tsv(r: impl BufRead, vocab: Vocab) -> Result<NoiseDictionary> {
        let mut pairs = vec![Vec::new(); vocab.num_languages.saturating_sub(1)];
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let loc = format!("line {}", n + 1);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(
                    loc,
                    format!("expected 3 columns, found {}", cols.len()),
                ));
            }
            let lang = LangId::parse(cols[0]).map_err(|e| Error::parse(&loc, e))?;
            let tok = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(&loc, format!("bad token {s:?}")))
            };
            let entry = (tok(cols[1])?, tok(cols[2])?);
            pairs
                .get_mut(lang.0.wrapping_sub(1))
                .ok_or_else(|| Error::parse(&loc, format!("unknown language {lang}")))?
                .push(entry);
        }
        Ok(NoiseDictionary { vocab, pairs })
    }
}

/// Replaces `⌊fraction · n⌋` uniformly chosen source content tokens by their
/// dictionary translation: non-English sources go to English, English
/// sources go to the pair's other language. Positions without an entry are
/// skipped and do not count toward the quota.
pub fn inject_code_switching(
    example: &ParallelExample,
    fraction: f64,
    dictionary: &NoiseDictionary,
    tag_mode: TagMode,
    rng: &mut impl Rng,
) -> Result<ParallelExample> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("noise fraction", fraction));
    }
    let start = match tag_mode {
        TagMode::SourceTag => 1.min(example.source.len()),
        TagMode::LanguageEmbedding => 0,
    };
    let n = example.source.len() - start;
    let quota = (fraction * n as f64 + 1e-9).floor() as usize;
    let mut out = example.clone();
    if quota == 0 {
        return Ok(out);
    }
    let d = example.direction;
    let mut replaced = 0;
    for i in index::sample(rng, n, n) {
        if replaced == quota {
            break;
        }
        let pos = start + i;
        let tok = example.source[pos];
        let sub = if d.src.is_english() {
            let other = if d.tgt.is_english() {
                None
            } else {
                Some(d.tgt)
            };
            other.and_then(|l| dictionary.from_english(l, tok))
        } else {
            dictionary.to_english(tok)
        };
        if let Some(s) = sub {
            out.source[pos] = s;
            replaced += 1;
        }
    }
    Ok(out)
}
