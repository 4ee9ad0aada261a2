//! Ranking evaluation for closed- and open-world link prediction.
//!
//! For a test triple the target is ranked against all known entities (or,
//! with target filtering, against the entities seen in that slot of the
//! relation during training). Ties count against the target. The filtered
//! rank additionally ignores every other true answer for the same query.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_filter_index, EntityId, FilterIndex, KnowledgeGraph, Split, Triple};
use crate::models::{Embedding, KgcModel};
use crate::transform::TextEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Predict the tail of `(h, r, ?)`.
    Tail,
    /// Predict the head of `(?, r, t)`.
    Head,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Tail => "tail",
            Direction::Head => "head",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tail" => Ok(Direction::Tail),
            "head" => Ok(Direction::Head),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub direction: Direction,
    /// MR and Hits@k use filtered ranks when set, raw ranks otherwise.
    pub filtered: bool,
    pub filter_splits: Vec<Split>,
    pub target_filtering: bool,
    pub hits_k: Vec<usize>,
    pub split: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            direction: Direction::Tail,
            filtered: true,
            filter_splits: Split::ALL.to_vec(),
            target_filtering: false,
            hits_k: vec![1, 3, 10],
            split: Split::Test,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hits_k.contains(&0) {
            return Err(Error::Config("hits@k needs k >= 1".into()));
        }
        if self.hits_k.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("hits_k must be strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipReason {
    /// Query entity has no usable text for the map.
    NoText,
    /// Closed-world query entity has no graph embedding.
    UnknownQuery,
    /// Target is not a known entity, so it can never be ranked.
    UnknownTarget,
    /// Target never occurs in this relation slot in training.
    TargetFiltered,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::NoText => "no_text",
            SkipReason::UnknownQuery => "unknown_query",
            SkipReason::UnknownTarget => "unknown_target",
            SkipReason::TargetFiltered => "target_filtered",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleRank {
    pub triple: Triple,
    pub raw_rank: Option<usize>,
    pub filtered_rank: Option<usize>,
    pub skipped: Option<SkipReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mr: f64,
    pub mrr_raw: f64,
    pub mrr_filtered: f64,
    pub hits: Vec<(usize, f64)>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl Aggregate {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub config: EvalConfig,
    pub ranks: Vec<TripleRank>,
    pub aggregate: Aggregate,
}

/// Pessimistic rank of `target` among all entities not in `exclude`.
pub fn rank_target(scores: &[f64], target: EntityId, exclude: &[EntityId]) -> Result<usize> {
    if target.index() >= scores.len() {
        return Err(Error::Config(format!(
            "target index {} out of range for {} scores",
            target.0,
            scores.len()
        )));
    }
    let s = scores[target.index()];
    let mut rank = 1;
    for (e, &x) in scores.iter().enumerate() {
        if e == target.index() || x < s {
            continue;
        }
        if exclude.iter().any(|x| x.index() == e) {
            continue;
        }
        rank += 1;
    }
    Ok(rank)
}

/// Raw and filtered rank in one pass; `candidates` (sorted) restricts the
/// list when present, `others` (sorted) are removed for the filtered rank.
fn ranks(
    scores: &[f64],
    target: EntityId,
    candidates: Option<&[EntityId]>,
    others: &[EntityId],
) -> (usize, usize) {
    let s = scores[target.index()];
    let mut raw = 1usize;
    let mut filtered = 1usize;
    let mut visit = |e: usize| {
        if e == target.index() || scores[e] < s {
            return;
        }
        raw += 1;
        if others.binary_search(&EntityId(e as u32)).is_err() {
            filtered += 1;
        }
    };
    match candidates {
        Some(c) => c.iter().for_each(|e| visit(e.index())),
        None => (0..scores.len()).for_each(&mut visit),
    }
    (raw, filtered)
}

fn aggregate(config: &EvalConfig, ranks: &[TripleRank]) -> Aggregate {
    let mut n = 0usize;
    let mut skipped = 0usize;
    let mut sum_rank = 0.0;
    let mut rr_raw = 0.0;
    let mut rr_filt = 0.0;
    let mut hits = vec![0usize; config.hits_k.len()];
    for r in ranks {
        let (Some(raw), Some(filt)) = (r.raw_rank, r.filtered_rank) else {
            skipped += 1;
            continue;
        };
        n += 1;
        let used = if config.filtered { filt } else { raw };
        sum_rank += used as f64;
        rr_raw += 1.0 / raw as f64;
        rr_filt += 1.0 / filt as f64;
        for (h, &k) in hits.iter_mut().zip(&config.hits_k) {
            if used <= k {
                *h += 1;
            }
        }
    }
    let denom = n.max(1) as f64;
    Aggregate {
        mr: sum_rank / denom,
        mrr_raw: rr_raw / denom,
        mrr_filtered: rr_filt / denom,
        hits: config
            .hits_k
            .iter()
            .zip(&hits)
            .map(|(&k, &h)| (k, h as f64 / denom))
            .collect(),
        evaluated: n,
        skipped,
    }
}

/// How the query entity of a triple is embedded.
trait QuerySource: Sync {
    fn query(
        &self,
        index: usize,
        t: &Triple,
        direction: Direction,
    ) -> std::result::Result<Embedding, SkipReason>;
}

struct GraphQueries<'a> {
    model: &'a KgcModel,
    graph: &'a KnowledgeGraph,
}

impl QuerySource for GraphQueries<'_> {
    fn query(
        &self,
        _: usize,
        t: &Triple,
        d: Direction,
    ) -> std::result::Result<Embedding, SkipReason> {
        let e = query_entity(t, d);
        if !self.graph.is_known(e) || e.index() >= self.model.num_entities() {
            return Err(SkipReason::UnknownQuery);
        }
        Ok(self.model.entity(e).to_owned())
    }
}

struct TextQueries {
    cache: HashMap<EntityId, Option<Embedding>>,
}

impl QuerySource for TextQueries {
    fn query(
        &self,
        _: usize,
        t: &Triple,
        d: Direction,
    ) -> std::result::Result<Embedding, SkipReason> {
        self.cache[&query_entity(t, d)]
            .clone()
            .ok_or(SkipReason::NoText)
    }
}

struct ReplacedQueries<'a> {
    model: &'a KgcModel,
    replacements: Vec<EntityId>,
}

impl QuerySource for ReplacedQueries<'_> {
    fn query(
        &self,
        i: usize,
        _: &Triple,
        _: Direction,
    ) -> std::result::Result<Embedding, SkipReason> {
        Ok(self.model.entity(self.replacements[i]).to_owned())
    }
}

fn query_entity(t: &Triple, d: Direction) -> EntityId {
    match d {
        Direction::Tail => t.head,
        Direction::Head => t.tail,
    }
}

fn target_entity(t: &Triple, d: Direction) -> EntityId {
    match d {
        Direction::Tail => t.tail,
        Direction::Head => t.head,
    }
}

fn rank_one(
    model: &KgcModel,
    graph: &KnowledgeGraph,
    filter: &FilterIndex,
    config: &EvalConfig,
    source: &dyn QuerySource,
    index: usize,
    t: &Triple,
) -> TripleRank {
    let skip = |reason| TripleRank {
        triple: *t,
        raw_rank: None,
        filtered_rank: None,
        skipped: Some(reason),
    };
    let d = config.direction;
    let target = target_entity(t, d);
    if !graph.is_known(target) || target.index() >= model.num_entities() {
        return skip(SkipReason::UnknownTarget);
    }
    let candidates = config.target_filtering.then(|| match d {
        Direction::Tail => graph.known_tails(t.rel),
        Direction::Head => graph.known_heads(t.rel),
    });
    if let Some(c) = candidates {
        if c.binary_search(&target).is_err() {
            return skip(SkipReason::TargetFiltered);
        }
    }
    let q = match source.query(index, t, d) {
        Ok(q) => q,
        Err(reason) => return skip(reason),
    };
    let scores = match d {
        Direction::Tail => model.score_all_tails(q.as_ref(), t.rel),
        Direction::Head => model.score_all_heads(t.rel, q.as_ref()),
    };
    let others = match d {
        Direction::Tail => filter.true_tails(t.head, t.rel),
        Direction::Head => filter.true_heads(t.rel, t.tail),
    };
    let (raw, filtered) = ranks(&scores, target, candidates, others);
    TripleRank {
        triple: *t,
        raw_rank: Some(raw),
        filtered_rank: Some(filtered),
        skipped: None,
    }
}

fn run(
    model: &KgcModel,
    graph: &KnowledgeGraph,
    triples: &[Triple],
    filter: &FilterIndex,
    config: &EvalConfig,
    source: &dyn QuerySource,
) -> RankingReport {
    let ranks: Vec<TripleRank> = triples
        .par_iter()
        .enumerate()
        .map(|(i, t)| rank_one(model, graph, filter, config, source, i, t))
        .collect();
    RankingReport {
        config: config.clone(),
        aggregate: aggregate(config, &ranks),
        ranks,
    }
}

/// Evaluates `config.split` of the graph. With a text encoder every query
/// entity is embedded from its text (open-world); otherwise the query must
/// be a known entity (closed-world).
pub fn evaluate(
    model: &KgcModel,
    text: Option<&TextEncoder<'_>>,
    graph: &KnowledgeGraph,
    config: &EvalConfig,
) -> Result<RankingReport> {
    config.validate()?;
    let filter = build_filter_index(graph, &config.filter_splits);
    let triples = graph.split(config.split);
    Ok(match text {
        Some(enc) => evaluate_triples_with_text(model, enc, graph, triples, &filter, config),
        None => evaluate_triples(model, graph, triples, &filter, config),
    })
}

/// Closed-world evaluation of an explicit triple list.
pub fn evaluate_triples(
    model: &KgcModel,
    graph: &KnowledgeGraph,
    triples: &[Triple],
    filter: &FilterIndex,
    config: &EvalConfig,
) -> RankingReport {
    run(
        model,
        graph,
        triples,
        filter,
        config,
        &GraphQueries { model, graph },
    )
}

/// Open-world evaluation of an explicit triple list.
pub fn evaluate_triples_with_text(
    model: &KgcModel,
    text: &TextEncoder<'_>,
    graph: &KnowledgeGraph,
    triples: &[Triple],
    filter: &FilterIndex,
    config: &EvalConfig,
) -> RankingReport {
    let mut cache = HashMap::new();
    for t in triples {
        let e = query_entity(t, config.direction);
        cache.entry(e).or_insert_with(|| text.encode(graph, e).ok());
    }
    run(
        model,
        graph,
        triples,
        filter,
        config,
        &TextQueries { cache },
    )
}

/// Replaces each query entity by a uniformly drawn training entity (from the
/// training heads for tail prediction, tails for head prediction) and ranks
/// as usual, with the filter taken from the original triple.
pub fn random_head_baseline(
    model: &KgcModel,
    graph: &KnowledgeGraph,
    config: &EvalConfig,
    seed: u64,
) -> Result<RankingReport> {
    config.validate()?;
    let mut pool: Vec<EntityId> = graph
        .train()
        .iter()
        .map(|t| query_entity(t, config.direction))
        .collect();
    pool.sort_unstable();
    pool.dedup();
    if pool.is_empty() {
        return Err(Error::Empty("training split has no triples".into()));
    }
    let triples = graph.split(config.split);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replacements = triples
        .iter()
        .map(|_| pool[rng.gen_range(0..pool.len())])
        .collect();
    let filter = build_filter_index(graph, &config.filter_splits);
    Ok(run(
        model,
        graph,
        triples,
        &filter,
        config,
        &ReplacedQueries {
            model,
            replacements,
        },
    ))
}

/// The `k` entities closest to `query` by Euclidean distance on the real
/// part, ascending, ties broken by id.
pub fn nearest_neighbors(model: &KgcModel, query: &[f64], k: usize) -> Vec<(EntityId, f64)> {
    assert_eq!(query.len(), model.dim(), "query dimension");
    let table = &model.embeddings.entity_real;
    let mut all: Vec<(EntityId, f64)> = (0..table.rows())
        .map(|e| {
            (
                EntityId(e as u32),
                crate::matrix::squared_distance(table.row(e), query),
            )
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all.into_iter().map(|(e, d2)| (e, d2.sqrt())).collect()
}

impl RankingReport {
    /// Per-triple TSV with a header line.
    pub fn write_tsv(&self, graph: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(
            w,
            "head\trel\ttail\traw_rank\tfiltered_rank\tskipped_reason"
        )
        .map_err(io)?;
        let opt = |r: Option<usize>| r.map_or_else(|| "-".to_string(), |r| r.to_string());
        for r in &self.ranks {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                graph.entity_key(r.triple.head),
                graph.relation_key(r.triple.rel),
                graph.entity_key(r.triple.tail),
                opt(r.raw_rank),
                opt(r.filtered_rank),
                r.skipped.map_or("-", SkipReason::as_str),
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Flat `key=value` block: full-precision values plus percentages with
    /// one decimal.
    pub fn summary(&self) -> String {
        let a = &self.aggregate;
        let c = &self.config;
        let splits: Vec<&str> = c.filter_splits.iter().map(|s| s.name()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "direction={}", c.direction);
        let _ = writeln!(s, "split={}", c.split);
        let _ = writeln!(s, "filtered={}", c.filtered);
        let _ = writeln!(s, "filter_splits={}", splits.join(","));
        let _ = writeln!(s, "target_filtering={}", c.target_filtering);
        let _ = writeln!(s, "evaluated={}", a.evaluated);
        let _ = writeln!(s, "skipped={}", a.skipped);
        let _ = writeln!(s, "mr={}", a.mr);
        let _ = writeln!(s, "mrr_raw={}", a.mrr_raw);
        let _ = writeln!(s, "mrr_filtered={}", a.mrr_filtered);
        for (k, v) in &a.hits {
            let _ = writeln!(s, "hits@{k}={v}");
        }
        let _ = writeln!(s, "mrr_raw_pct={:.1}", 100.0 * a.mrr_raw);
        let _ = writeln!(s, "mrr_filtered_pct={:.1}", 100.0 * a.mrr_filtered);
        for (k, v) in &a.hits {
            let _ = writeln!(s, "hits@{k}_pct={:.1}", 100.0 * v);
        }
        s
    }
}
