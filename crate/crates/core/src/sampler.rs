//! Open-world split construction and metadata corruption.
//!
//! Sampled heads are removed from the graph one at a time, in seeded order:
//! every triple touching the head leaves the training set, and its outgoing
//! triples become tail-prediction test triples when their tail is still
//! represented in what remains. A final pass re-checks every test triple
//! against the final training set.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{write_triples, EntityId, KnowledgeGraph, Metadata, RelationId, Triple};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadTarget {
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub seed: u64,
    pub heads: HeadTarget,
    /// Share of tail-/head-prediction test triples moved to the open-world
    /// validation sets.
    pub open_valid_fraction: f64,
    /// Share of the final training triples held out as closed-world validation.
    pub closed_valid_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: 0,
            heads: HeadTarget::Fraction(0.1),
            open_valid_fraction: 0.1,
            closed_valid_fraction: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if let HeadTarget::Fraction(f) = self.heads {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "head fraction must lie in [0, 1), got {f}"
                )));
            }
        }
        for (name, f) in [
            ("open_valid_fraction", self.open_valid_fraction),
            ("closed_valid_fraction", self.closed_valid_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OwSplit {
    pub train: Vec<Triple>,
    pub tail_test: Vec<Triple>,
    pub head_test: Vec<Triple>,
    pub closed_valid: Vec<Triple>,
    /// Open-world validation for tail prediction.
    pub open_valid: Vec<Triple>,
    /// Open-world validation for head prediction.
    pub head_valid: Vec<Triple>,
    /// Sampled heads, in sampling order.
    pub open_entities: Vec<EntityId>,
    /// Removed triples not used as tail-prediction test or validation.
    pub dropped: Vec<Triple>,
    pub source_size: usize,
    pub seed: u64,
}

fn round_share(n: usize, f: f64) -> usize {
    ((n as f64) * f).round() as usize
}

/// Picks `round(f·n)` items uniformly, returned in original order, and the rest.
fn split_off<R: rand::Rng>(items: Vec<Triple>, f: f64, rng: &mut R) -> (Vec<Triple>, Vec<Triple>) {
    let k = round_share(items.len(), f);
    let mut chosen: Vec<usize> = index::sample(rng, items.len(), k).into_vec();
    chosen.sort_unstable();
    let chosen_set: HashSet<usize> = chosen.iter().copied().collect();
    let mut picked = Vec::with_capacity(k);
    let mut rest = Vec::with_capacity(items.len() - k);
    for (i, t) in items.into_iter().enumerate() {
        if chosen_set.contains(&i) {
            picked.push(t);
        } else {
            rest.push(t);
        }
    }
    (picked, rest)
}

/// Builds an open-world split from all triples (train, valid, test) of a
/// closed-world graph.
pub fn sample_open_world(graph: &KnowledgeGraph, config: &SamplerConfig) -> Result<OwSplit> {
    config.validate()?;
    let mut seen = HashSet::new();
    let source: Vec<Triple> = graph
        .train()
        .iter()
        .chain(graph.valid())
        .chain(graph.test())
        .copied()
        .filter(|t| graph.is_known(t.head) && graph.is_known(t.tail))
        .filter(|t| seen.insert(*t))
        .collect();
    let ne = graph.num_entities();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut heads: Vec<EntityId> = source.iter().map(|t| t.head).collect();
    heads.sort_unstable();
    heads.dedup();
    let n = match config.heads {
        HeadTarget::Fraction(f) => round_share(heads.len(), f),
        HeadTarget::Count(c) => c,
    };
    if n > heads.len() {
        return Err(Error::Sampling(format!(
            "requested {n} open heads but only {} distinct heads exist",
            heads.len()
        )));
    }
    heads.shuffle(&mut rng);
    let sampled: Vec<EntityId> = heads[..n].to_vec();

    let mut alive = vec![true; source.len()];
    let mut degree = vec![0usize; ne];
    let mut rel_count: BTreeMap<RelationId, usize> = BTreeMap::new();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); ne];
    for (i, t) in source.iter().enumerate() {
        degree[t.head.index()] += 1;
        degree[t.tail.index()] += 1;
        *rel_count.entry(t.rel).or_default() += 1;
        incident[t.head.index()].push(i);
        if t.tail != t.head {
            incident[t.tail.index()].push(i);
        }
    }

    let mut open = vec![false; ne];
    let mut moved: Vec<usize> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    for &x in &sampled {
        open[x.index()] = true;
        let mut pending = Vec::new();
        for &i in &incident[x.index()] {
            if !alive[i] {
                continue;
            }
            alive[i] = false;
            let t = source[i];
            degree[t.head.index()] -= 1;
            degree[t.tail.index()] -= 1;
            *rel_count.get_mut(&t.rel).expect("counted relation") -= 1;
            if t.head == x && !open[t.tail.index()] {
                pending.push(i);
            } else {
                dropped.push(i);
            }
        }
        for i in pending {
            if degree[source[i].tail.index()] > 0 {
                moved.push(i);
            } else {
                dropped.push(i);
            }
        }
    }

    let remaining: Vec<usize> = (0..source.len()).filter(|&i| alive[i]).collect();
    if remaining.is_empty() {
        return Err(Error::Sampling(
            "sampling would leave an empty training set".into(),
        ));
    }
    let known = |e: EntityId, degree: &[usize]| !open[e.index()] && degree[e.index()] > 0;
    let rel_known =
        |r: RelationId, rc: &BTreeMap<RelationId, usize>| rc.get(&r).copied().unwrap_or(0) > 0;

    // Closed-world validation: held out from train while every entity and
    // relation keeps at least one training triple.
    let closed_target = round_share(remaining.len(), config.closed_valid_fraction);
    let mut candidates = remaining.clone();
    candidates.shuffle(&mut rng);
    let mut closed: Vec<usize> = Vec::with_capacity(closed_target);
    for i in candidates {
        if closed.len() == closed_target {
            break;
        }
        let t = source[i];
        let need_h = if t.head == t.tail { 2 } else { 1 };
        if degree[t.head.index()] > need_h
            && degree[t.tail.index()] > need_h
            && rel_count[&t.rel] > 1
        {
            alive[i] = false;
            degree[t.head.index()] -= 1;
            degree[t.tail.index()] -= 1;
            *rel_count.get_mut(&t.rel).unwrap() -= 1;
            closed.push(i);
        }
    }
    closed.sort_unstable();

    moved.sort_unstable();
    let mut tail_pool = Vec::new();
    for i in moved {
        let t = source[i];
        if known(t.tail, &degree) && rel_known(t.rel, &rel_count) {
            tail_pool.push(t);
        } else {
            dropped.push(i);
        }
    }
    dropped.sort_unstable();
    let head_pool: Vec<Triple> = dropped
        .iter()
        .map(|&i| source[i])
        .filter(|t| known(t.head, &degree) && open[t.tail.index()] && rel_known(t.rel, &rel_count))
        .collect();

    let (open_valid, tail_test) = split_off(tail_pool, config.open_valid_fraction, &mut rng);
    let (head_valid, head_test) = split_off(head_pool, config.open_valid_fraction, &mut rng);

    Ok(OwSplit {
        train: (0..source.len())
            .filter(|&i| alive[i])
            .map(|i| source[i])
            .collect(),
        tail_test,
        head_test,
        closed_valid: closed.iter().map(|&i| source[i]).collect(),
        open_valid,
        head_valid,
        open_entities: sampled,
        dropped: dropped.iter().map(|&i| source[i]).collect(),
        source_size: source.len(),
        seed: config.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    OpenEntityInTrain,
    ClosedValidUnknown,
    TailPredHeadNotOpen,
    TailPredTailUnknown,
    HeadPredHeadUnknown,
    HeadPredTailNotOpen,
    RelationUnknown,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::OpenEntityInTrain => "open entity occurs in train",
            Rule::ClosedValidUnknown => {
                "closed-world validation triple uses an entity outside train"
            }
            Rule::TailPredHeadNotOpen => "tail-prediction head is not an open entity",
            Rule::TailPredTailUnknown => "tail-prediction tail is not a known training entity",
            Rule::HeadPredHeadUnknown => "head-prediction head is not a known training entity",
            Rule::HeadPredTailNotOpen => "head-prediction tail is not an open entity",
            Rule::RelationUnknown => "relation does not occur in train",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub set: &'static str,
    pub triple: Triple,
    pub rule: Rule,
}

/// Checks every split invariant; an empty result means the split is valid.
pub fn validate_split(split: &OwSplit) -> Vec<Violation> {
    let open: HashSet<EntityId> = split.open_entities.iter().copied().collect();
    let mut known = HashSet::new();
    let mut relations = HashSet::new();
    for t in &split.train {
        known.insert(t.head);
        known.insert(t.tail);
        relations.insert(t.rel);
    }
    let is_known = |e: &EntityId| known.contains(e) && !open.contains(e);
    let mut out = Vec::new();
    let mut flag = |set, triple, rule| out.push(Violation { set, triple, rule });

    for t in &split.train {
        if open.contains(&t.head) || open.contains(&t.tail) {
            flag("train", *t, Rule::OpenEntityInTrain);
        }
    }
    for t in &split.closed_valid {
        if !is_known(&t.head) || !is_known(&t.tail) {
            flag("closed_valid", *t, Rule::ClosedValidUnknown);
        }
        if !relations.contains(&t.rel) {
            flag("closed_valid", *t, Rule::RelationUnknown);
        }
    }
    for (set, triples) in [
        ("tail_test", &split.tail_test),
        ("open_valid", &split.open_valid),
    ] {
        for t in triples {
            if !open.contains(&t.head) {
                flag(set, *t, Rule::TailPredHeadNotOpen);
            }
            if !is_known(&t.tail) {
                flag(set, *t, Rule::TailPredTailUnknown);
            }
            if !relations.contains(&t.rel) {
                flag(set, *t, Rule::RelationUnknown);
            }
        }
    }
    for (set, triples) in [
        ("head_test", &split.head_test),
        ("head_valid", &split.head_valid),
    ] {
        for t in triples {
            if !is_known(&t.head) {
                flag(set, *t, Rule::HeadPredHeadUnknown);
            }
            if !open.contains(&t.tail) {
                flag(set, *t, Rule::HeadPredTailNotOpen);
            }
            if !relations.contains(&t.rel) {
                flag(set, *t, Rule::RelationUnknown);
            }
        }
    }
    out
}

impl OwSplit {
    pub fn manifest(&self, config: &SamplerConfig) -> String {
        let mut s = String::new();
        let heads = match config.heads {
            HeadTarget::Fraction(f) => format!("fraction:{f}"),
            HeadTarget::Count(c) => format!("count:{c}"),
        };
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "heads={heads}");
        let _ = writeln!(s, "open_valid_fraction={}", config.open_valid_fraction);
        let _ = writeln!(s, "closed_valid_fraction={}", config.closed_valid_fraction);
        let _ = writeln!(s, "source_triples={}", self.source_size);
        let _ = writeln!(s, "open_entities={}", self.open_entities.len());
        let _ = writeln!(s, "train={}", self.train.len());
        let _ = writeln!(s, "closed_valid={}", self.closed_valid.len());
        let _ = writeln!(s, "tail_test={}", self.tail_test.len());
        let _ = writeln!(s, "tail_valid={}", self.open_valid.len());
        let _ = writeln!(s, "head_test={}", self.head_test.len());
        let _ = writeln!(s, "head_valid={}", self.head_valid.len());
        let _ = writeln!(s, "dropped={}", self.dropped.len());
        s
    }

    /// Writes the split files and `manifest.txt` into `dir`.
    pub fn write(
        &self,
        graph: &KnowledgeGraph,
        config: &SamplerConfig,
        dir: impl AsRef<Path>,
    ) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let keys = |ts: &[Triple]| -> Vec<(String, String, String)> {
            ts.iter()
                .map(|t| {
                    (
                        graph.entity_key(t.head).to_owned(),
                        graph.relation_key(t.rel).to_owned(),
                        graph.entity_key(t.tail).to_owned(),
                    )
                })
                .collect()
        };
        for (name, ts) in [
            ("train.txt", &self.train),
            ("valid_closed.txt", &self.closed_valid),
            ("test_tail.txt", &self.tail_test),
            ("valid_tail.txt", &self.open_valid),
            ("test_head.txt", &self.head_test),
            ("valid_head.txt", &self.head_valid),
        ] {
            let rows = keys(ts);
            write_triples(
                dir.join(name),
                rows.iter()
                    .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
            )?;
        }
        let open: String = self
            .open_entities
            .iter()
            .map(|e| format!("{}\n", graph.entity_key(*e)))
            .collect();
        let p = dir.join("open_entities.txt");
        fs::write(&p, open).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("manifest.txt");
        fs::write(&p, self.manifest(config)).map_err(|e| Error::io(&p, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    /// Blank the description, keep the name.
    Descriptions,
    /// Remove the whole record.
    All,
}

impl std::str::FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descriptions" => Ok(CorruptionMode::Descriptions),
            "all" => Ok(CorruptionMode::All),
            other => Err(Error::Config(format!("unknown corruption mode `{other}`"))),
        }
    }
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionMode::Descriptions => "descriptions",
            CorruptionMode::All => "all",
        })
    }
}

/// Corrupts a uniformly chosen `round(fraction · n)` of all records.
pub fn corrupt_metadata(
    metadata: &Metadata,
    mode: CorruptionMode,
    fraction: f64,
    seed: u64,
) -> Metadata {
    corrupt_metadata_where(metadata, mode, fraction, seed, |_| true)
}

/// Like [`corrupt_metadata`], restricted to records whose key passes
/// `eligible` (e.g. training entities only); other records are untouched.
pub fn corrupt_metadata_where<F>(
    metadata: &Metadata,
    mode: CorruptionMode,
    fraction: f64,
    seed: u64,
    eligible: F,
) -> Metadata
where
    F: Fn(&str) -> bool,
{
    let fraction = fraction.clamp(0.0, 1.0);
    let keys: Vec<&str> = metadata.keys().filter(|k| eligible(k)).collect();
    let k = round_share(keys.len(), fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<String> = index::sample(&mut rng, keys.len(), k)
        .into_iter()
        .map(|i| keys[i].to_owned())
        .collect();
    let mut out = metadata.clone();
    for key in chosen {
        match mode {
            CorruptionMode::Descriptions => {
                if let Some(t) = out.get_mut(&key) {
                    t.description.clear();
                }
            }
            CorruptionMode::All => {
                out.remove(&key);
            }
        }
    }
    out
}
