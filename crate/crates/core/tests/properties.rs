mod common;

use owe::eval::{self, EvalConfig};
use owe::graph::{self, EntityText, Metadata, Split, TripleSource};
use owe::models::{Family, KgcHyperParams, KgcModel};
use owe::sampler::{self, CorruptionMode, HeadTarget, SamplerConfig};
use owe::text::{aggregate, Dropout, TokenSequence};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vectors(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-100.0f64..100.0, dim), 1..8)
}

fn mean(vs: &[Vec<f64>]) -> Vec<f64> {
    let seq = TokenSequence::from_vectors(vs[0].len(), vs.to_vec());
    aggregate(&seq, Dropout::NONE, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .vector
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn aggregation_is_permutation_invariant(vs in vectors(3), seed in any::<u64>()) {
        let mut shuffled = vs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(close(&mean(&vs), &mean(&shuffled)));
    }

    #[test]
    fn aggregation_commutes_with_scaling(vs in vectors(3), c in -10.0f64..10.0) {
        let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| c * x).collect()).collect();
        let expect: Vec<f64> = mean(&vs).iter().map(|x| c * x).collect();
        prop_assert!(close(&mean(&scaled), &expect));
    }

    #[test]
    fn aggregation_lies_in_the_convex_hull(vs in vectors(4)) {
        let m = mean(&vs);
        for (i, x) in m.iter().enumerate() {
            let lo = vs.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
            let hi = vs.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*x >= lo - 1e-9 && *x <= hi + 1e-9);
        }
    }

    #[test]
    fn dropout_keeps_the_denominator(vs in vectors(2), seed in any::<u64>()) {
        let seq = TokenSequence::from_vectors(2, vs.clone());
        let out = aggregate(&seq, Dropout::new(0.5).unwrap(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(out.tokens_used, vs.len());
        // the result is a sub-sum over the full count
        let full = mean(&vs);
        prop_assert!(out.vector.iter().all(|x| x.is_finite()));
        if out.unknown_count == 0 {
            prop_assert!(close(&out.vector, &full));
        }
    }

    #[test]
    fn graph_tsv_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train, valid, test) = common::random_splits(&mut rng, 12);
        let g = common::closed_graph(&train, &valid, &test);
        let dir = tempfile::tempdir().unwrap();
        for s in Split::ALL {
            g.write_split(s, dir.path().join(s.name())).unwrap();
        }
        let back = graph::load_graph(
            dir.path().join("train"),
            dir.path().join("valid"),
            dir.path().join("test"),
            false,
        ).unwrap();
        for s in Split::ALL {
            let keys = |g: &graph::KnowledgeGraph| -> Vec<(String, String, String)> {
                g.split(s).iter().map(|t| (
                    g.entity_key(t.head).to_owned(),
                    g.relation_key(t.rel).to_owned(),
                    g.entity_key(t.tail).to_owned(),
                )).collect()
            };
            prop_assert_eq!(keys(&g), keys(&back));
        }
        let raw = TripleSource::read(dir.path().join("train")).unwrap();
        prop_assert_eq!(raw.triples.len(), g.train().len());
    }

    #[test]
    fn metadata_round_trip(entries in prop::collection::btree_map("[a-z]{1,6}", ("[ -~\t\n\\\\]{0,12}", "[ -~\t\n\\\\]{0,20}"), 0..10)) {
        let meta: Metadata = entries
            .iter()
            .map(|(k, (n, d))| (k.clone(), EntityText::new(n.clone(), d.clone())))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("meta.tsv");
        meta.write(&p).unwrap();
        let back = graph::load_entity_text(&p).unwrap();
        prop_assert_eq!(back, meta);
    }

    #[test]
    fn sampler_invariants_and_determinism(seed in any::<u64>(), frac in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train, valid, test) = common::random_splits(&mut rng, 20);
        let g = common::closed_graph(&train, &valid, &test);
        let cfg = SamplerConfig { seed, heads: HeadTarget::Fraction(frac), ..SamplerConfig::default() };
        if let Ok(a) = sampler::sample_open_world(&g, &cfg) {
            prop_assert!(sampler::validate_split(&a).is_empty());
            let b = sampler::sample_open_world(&g, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            // every source triple is accounted for exactly once; head-prediction
            // sets are drawn from the dropped triples
            let total = a.train.len() + a.closed_valid.len() + a.tail_test.len() + a.open_valid.len()
                + a.dropped.len();
            prop_assert_eq!(total, a.source_size);
            prop_assert!(a.head_test.len() + a.head_valid.len() <= a.dropped.len());
        }
    }

    #[test]
    fn corruption_touches_exactly_the_rounded_share(n in 0usize..40, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let meta: Metadata = (0..n)
            .map(|i| (format!("e{i}"), EntityText::new(format!("name {i}"), "some words")))
            .collect();
        let all = sampler::corrupt_metadata(&meta, CorruptionMode::All, frac, seed);
        let k = (frac * n as f64).round() as usize;
        prop_assert_eq!(all.len(), n - k);
        let desc = sampler::corrupt_metadata(&meta, CorruptionMode::Descriptions, frac, seed);
        prop_assert_eq!(desc.len(), n);
        prop_assert_eq!(desc.iter().filter(|(_, t)| t.description.is_empty()).count(), k);
        // same seed, same chosen records in both modes
        for (key, t) in desc.iter() {
            prop_assert_eq!(t.description.is_empty(), all.get(key).is_none());
        }
    }

    #[test]
    fn ranks_are_bounded_and_filtered_never_worse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train, valid, test) = common::random_splits(&mut rng, 15);
        let g = common::closed_graph(&train, &valid, &test);
        let hyper = KgcHyperParams { dim: 3, ..KgcHyperParams::default() };
        let model = KgcModel::new(Family::ComplEx, g.num_entities(), g.num_relations(), hyper, &mut rng);
        let r = eval::evaluate(&model, None, &g, &EvalConfig::default()).unwrap();
        for t in &r.ranks {
            let (raw, filt) = (t.raw_rank.unwrap(), t.filtered_rank.unwrap());
            prop_assert!(1 <= filt && filt <= raw && raw <= g.num_entities());
        }
        let a = &r.aggregate;
        prop_assert!(a.mrr_raw <= a.mrr_filtered);
        prop_assert!(a.hits.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}
