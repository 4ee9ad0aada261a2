#![allow(dead_code)]

use owe::graph::{EntityText, KnowledgeGraph, Metadata};
use owe::text::WordEmbeddingStore;
use rand::seq::SliceRandom;
use rand::Rng;

pub type StrTriple = (String, String, String);

pub fn as_refs(ts: &[StrTriple]) -> Vec<(&str, &str, &str)> {
    ts.iter()
        .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str()))
        .collect()
}

/// Random closed-world triple lists: every valid/test entity and relation
/// also occurs in train. Duplicates are allowed.
pub fn random_splits<R: Rng>(
    rng: &mut R,
    max_entities: usize,
) -> (Vec<StrTriple>, Vec<StrTriple>, Vec<StrTriple>) {
    let ne = rng.gen_range(2..=max_entities);
    let nr = rng.gen_range(1..=3);
    let n_train = rng.gen_range(1..=3 * ne);
    let ent = |i: usize| format!("e{i}");
    let rel = |i: usize| format!("r{i}");
    let mut train: Vec<StrTriple> = (0..n_train)
        .map(|_| {
            (
                ent(rng.gen_range(0..ne)),
                rel(rng.gen_range(0..nr)),
                ent(rng.gen_range(0..ne)),
            )
        })
        .collect();
    // every entity and relation appears at least once
    for i in 0..ne {
        train.push((ent(i), rel(rng.gen_range(0..nr)), ent(rng.gen_range(0..ne))));
    }
    for j in 0..nr {
        train.push((ent(rng.gen_range(0..ne)), rel(j), ent(rng.gen_range(0..ne))));
    }
    train.shuffle(rng);
    let mut extra = |n: usize| -> Vec<StrTriple> {
        (0..n)
            .map(|_| {
                (
                    ent(rng.gen_range(0..ne)),
                    rel(rng.gen_range(0..nr)),
                    ent(rng.gen_range(0..ne)),
                )
            })
            .collect()
    };
    let valid = extra(ne / 2);
    let test = extra(ne);
    (train, valid, test)
}

pub fn closed_graph(
    train: &[StrTriple],
    valid: &[StrTriple],
    test: &[StrTriple],
) -> KnowledgeGraph {
    KnowledgeGraph::from_string_triples(&as_refs(train), &as_refs(valid), &as_refs(test), false)
        .unwrap()
}

/// Clustered toy world: entities in `clusters` groups, relation `r{k}`
/// links cluster `c` to cluster `c + k + 1`. Every entity's text is its own
/// token plus its cluster's token; the last member of each of the first
/// `open_count` clusters is open.
pub struct ToyWorld {
    pub train: Vec<StrTriple>,
    pub test: Vec<StrTriple>,
    pub metadata: Metadata,
    pub store: WordEmbeddingStore,
    pub words: Vec<(String, Vec<f32>)>,
    pub open: Vec<String>,
}

pub fn toy_world<R: Rng>(
    rng: &mut R,
    clusters: usize,
    per_cluster: usize,
    word_dim: usize,
    open_count: usize,
) -> ToyWorld {
    let relations = 2;
    let name = |c: usize, i: usize| format!("c{c}m{i}");
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut open = Vec::new();
    for c in 0..clusters {
        for i in 0..per_cluster {
            let is_open = i == per_cluster - 1 && c < open_count;
            if is_open {
                open.push(name(c, i));
            }
            for k in 0..relations {
                let target = (c + k + 1) % clusters;
                // links to every known member of the target cluster
                for j in 0..per_cluster - 1 {
                    let t = (name(c, i), format!("r{k}"), name(target, j));
                    if is_open {
                        test.push(t);
                    } else {
                        train.push(t);
                    }
                }
            }
        }
    }
    let mut metadata = Metadata::new();
    let mut words: Vec<(String, Vec<f32>)> = Vec::new();
    let vec =
        |rng: &mut R| -> Vec<f32> { (0..word_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect() };
    for c in 0..clusters {
        words.push((format!("topic{c}"), vec(rng)));
        for i in 0..per_cluster {
            let own = format!("word{c}x{i}");
            words.push((own.clone(), vec(rng)));
            metadata.insert(
                name(c, i),
                EntityText::new(own, format!("topic{c} topic{c}")),
            );
        }
    }
    let store = WordEmbeddingStore::from_entries(word_dim, words.clone()).unwrap();
    ToyWorld {
        train,
        test,
        metadata,
        store,
        words,
        open,
    }
}

/// Writes `words` in the plain-text embedding format with a header line.
pub fn write_embeddings(path: &std::path::Path, words: &[(String, Vec<f32>)]) {
    let dim = words.first().map_or(0, |w| w.1.len());
    let mut text = format!("{} {dim}\n", words.len());
    for (w, v) in words {
        let nums: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        text.push_str(&format!("{w} {}\n", nums.join(" ")));
    }
    std::fs::write(path, text).unwrap();
}
