mod common;

use std::io::Cursor;

use common::tiny_world;
use mxencdec::data::{Direction, LangId, ENGLISH};
use mxencdec::model::TagMode;
use mxencdec::sampling::{keep_probability, CorpusSampler, LangPairStats};
use mxencdec::synthdata::{
    generate_corpus, generate_multiway_eval, is_held_out, Corpus, Reorder, Scenario,
    HELD_OUT_ID_BASE,
};
use mxencdec::training::{learning_rate, BetaSchedule};
use proptest::prelude::*;

fn reorder() -> impl Strategy<Value = Reorder> {
    prop_oneof![
        Just(Reorder::Identity),
        Just(Reorder::Reverse),
        (0usize..7).prop_map(Reorder::Rotate),
        Just(Reorder::SwapAdjacentPairs),
    ]
}

proptest! {
    #[test]
    fn reorder_inverts(r in reorder(), xs in prop::collection::vec(0u32..100, 0..12)) {
        prop_assert_eq!(r.invert(&r.apply(&xs)), xs);
    }

    #[test]
    fn rendering_round_trips(lang in 0usize..3, concepts in prop::collection::vec(0usize..6, 1..8)) {
        let world = tiny_world(TagMode::SourceTag);
        let tokens = world.render(LangId(lang), &concepts).unwrap();
        prop_assert_eq!(world.concepts(LangId(lang), &tokens), Some(concepts));
    }

    #[test]
    fn keep_probability_is_a_symmetric_sigmoid(tau in -5.0f64..5.0, d in 0.01f64..100.0) {
        let p = keep_probability(tau, d);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p + keep_probability(-tau, d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_sampler_is_a_tempered_distribution(
        sizes in prop::collection::vec(1usize..100_000, 1..6),
        t in 0.5f64..10.0,
    ) {
        let pairs: Vec<(Direction, usize)> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| (Direction::new(LangId(i + 1), ENGLISH), n))
            .collect();
        let sampler = CorpusSampler::new(&LangPairStats::new(pairs.clone()).unwrap(), t).unwrap();
        let z: f64 = sizes.iter().map(|&n| (n as f64).powf(1.0 / t)).sum();
        for (d, n) in pairs {
            prop_assert!((sampler.probability(d) - (n as f64).powf(1.0 / t) / z).abs() < 1e-12);
        }
    }
}

#[test]
fn training_and_held_out_sentences_are_disjoint() {
    let world = tiny_world(TagMode::SourceTag);
    let corpus = generate_corpus(&world, Scenario::ManyToMany, (2, 6), 1).unwrap();
    for exs in corpus.pairs.values() {
        for e in exs {
            let content = world.source_content(&e.source);
            let concepts = world.concepts(e.direction.src, content).unwrap();
            assert!(!is_held_out(&concepts));
        }
    }
    let set = generate_multiway_eval(&world, 20, (2, 6), 1).unwrap();
    assert!(set.concepts.iter().all(|c| is_held_out(c)));
    assert!(set.ids.iter().all(|&id| id >= HELD_OUT_ID_BASE));
}

#[test]
fn scenarios_select_directions() {
    let world = tiny_world(TagMode::SourceTag);
    let m2o = world.training_directions(Scenario::ManyToOne);
    assert!(m2o.iter().all(|d| d.tgt == ENGLISH));
    let o2m = world.training_directions(Scenario::OneToMany);
    assert!(o2m.iter().all(|d| d.src == ENGLISH));
    let m2m = world.training_directions(Scenario::ManyToMany);
    assert_eq!(m2m.len(), m2o.len() + o2m.len());
    assert!(m2m.iter().all(|d| !d.is_zero_shot()));
}

#[test]
fn corpus_tsv_round_trips() {
    let world = tiny_world(TagMode::LanguageEmbedding);
    let corpus = generate_corpus(&world, Scenario::ManyToMany, (1, 5), 4).unwrap();
    let mut buf = Vec::new();
    corpus.write_tsv(&mut buf).unwrap();
    let back = Corpus::read_tsv(Cursor::new(buf)).unwrap();
    assert_eq!(back.pairs, corpus.pairs);
    assert!(Corpus::read_tsv(Cursor::new("l1-en\t1 2\n")).is_err());
}

#[test]
fn schedules() {
    assert!((learning_rate(3e-3, 400, 399) - 3e-3).abs() < 1e-15);
    assert!((learning_rate(3e-3, 400, 199) - 1.5e-3).abs() < 1e-15);
    assert!((learning_rate(3e-3, 400, 1599) - 1.5e-3).abs() < 1e-15);
    let b = BetaSchedule::default();
    assert_eq!(b.value(0, 1000), 0.0);
    assert!((b.value(50, 1000) - 0.35).abs() < 1e-12);
    assert_eq!(b.value(100, 1000), 0.7);
    assert_eq!(b.value(999, 1000), 0.7);
}
