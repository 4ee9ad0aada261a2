//! Triple storage, vocabularies and entity text metadata.
//!
//! Entities seen in the training split get dense ids `0..|E|`. In open-world
//! mode, entities that only occur in the validation or test split are
//! interned into a separate open vocabulary whose ids continue after the
//! known ones (`|E|..|E|+|E_open|`), so a [`Triple`] can reference either
//! kind while all score vectors stay sized to the known entities.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Triple { head, rel, tail }
    }
}

/// String-to-index interner; the first occurrence of a key fixes its index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: u32) -> Option<&str> {
        self.keys.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.keys.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Raw string triple with its 1-based source line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub rel: String,
    pub tail: String,
    pub line: usize,
}

impl RawTriple {
    pub fn new(head: &str, rel: &str, tail: &str) -> Self {
        RawTriple {
            head: head.to_owned(),
            rel: rel.to_owned(),
            tail: tail.to_owned(),
            line: 0,
        }
    }
}

/// A source of raw triples: either a file or an in-memory list.
#[derive(Debug, Clone)]
pub struct TripleSource {
    pub origin: PathBuf,
    pub triples: Vec<RawTriple>,
}

impl TripleSource {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut triples = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            triples.push(RawTriple {
                head: fields[0].to_owned(),
                rel: fields[1].to_owned(),
                tail: fields[2].to_owned(),
                line: i + 1,
            });
        }
        Ok(TripleSource {
            origin: path.to_owned(),
            triples,
        })
    }

    pub fn in_memory(name: &str, triples: Vec<RawTriple>) -> Self {
        let triples = triples
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t.line = i + 1;
                t
            })
            .collect();
        TripleSource {
            origin: PathBuf::from(format!("<{name}>")),
            triples,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    open_entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    known_tails: Vec<Vec<EntityId>>,
    known_heads: Vec<Vec<EntityId>>,
    duplicates: [usize; 3],
    open_world: bool,
}

/// Loads the three split files. See [`KnowledgeGraph::from_sources`].
pub fn load_graph(
    train_path: impl AsRef<Path>,
    valid_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
    open_world: bool,
) -> Result<KnowledgeGraph> {
    let train = TripleSource::read(train_path)?;
    let valid = TripleSource::read(valid_path)?;
    let test = TripleSource::read(test_path)?;
    KnowledgeGraph::from_sources(&train, &valid, &test, open_world)
}

impl KnowledgeGraph {
    /// Builds a graph: vocabularies come from the training split only.
    ///
    /// Unknown relations in valid/test are always an error. Unknown entities
    /// are an error in closed-world mode and are interned into the open
    /// vocabulary in open-world mode.
    pub fn from_sources(
        train: &TripleSource,
        valid: &TripleSource,
        test: &TripleSource,
        open_world: bool,
    ) -> Result<Self> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        for t in &train.triples {
            entities.intern(&t.head);
            relations.intern(&t.rel);
            entities.intern(&t.tail);
        }
        let mut graph = KnowledgeGraph {
            entities,
            open_entities: Vocab::new(),
            relations,
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
            known_tails: Vec::new(),
            known_heads: Vec::new(),
            duplicates: [0; 3],
            open_world,
        };
        graph.train = graph.resolve(train, Split::Train)?;
        graph.valid = graph.resolve(valid, Split::Valid)?;
        graph.test = graph.resolve(test, Split::Test)?;
        graph.build_known_index();
        Ok(graph)
    }

    /// Convenience constructor over in-memory string triples.
    pub fn from_string_triples(
        train: &[(&str, &str, &str)],
        valid: &[(&str, &str, &str)],
        test: &[(&str, &str, &str)],
        open_world: bool,
    ) -> Result<Self> {
        let src = |name: &str, ts: &[(&str, &str, &str)]| {
            TripleSource::in_memory(
                name,
                ts.iter().map(|(h, r, t)| RawTriple::new(h, r, t)).collect(),
            )
        };
        Self::from_sources(
            &src("train", train),
            &src("valid", valid),
            &src("test", test),
            open_world,
        )
    }

    fn resolve(&mut self, source: &TripleSource, split: Split) -> Result<Vec<Triple>> {
        let mut seen = HashSet::with_capacity(source.triples.len());
        let mut out = Vec::with_capacity(source.triples.len());
        let mut dups = 0usize;
        for raw in &source.triples {
            let rel = self
                .relations
                .get(&raw.rel)
                .ok_or_else(|| Error::Vocabulary {
                    path: source.origin.clone(),
                    line: raw.line,
                    kind: "relation",
                    key: raw.rel.clone(),
                })?;
            let head = self.resolve_entity(&raw.head, source, raw.line)?;
            let tail = self.resolve_entity(&raw.tail, source, raw.line)?;
            let triple = Triple::new(head, RelationId(rel), tail);
            if seen.insert(triple) {
                out.push(triple);
            } else {
                dups += 1;
            }
        }
        if dups > 0 {
            log::warn!(
                "{}: dropped {dups} duplicate triple(s) in {split} split",
                source.origin.display()
            );
        }
        self.duplicates[split as usize] = dups;
        Ok(out)
    }

    fn resolve_entity(
        &mut self,
        key: &str,
        source: &TripleSource,
        line: usize,
    ) -> Result<EntityId> {
        if let Some(id) = self.entities.get(key) {
            return Ok(EntityId(id));
        }
        if self.open_world {
            let offset = self.entities.len() as u32;
            return Ok(EntityId(offset + self.open_entities.intern(key)));
        }
        Err(Error::Vocabulary {
            path: source.origin.clone(),
            line,
            kind: "entity",
            key: key.to_owned(),
        })
    }

    fn build_known_index(&mut self) {
        let mut tails = vec![Vec::new(); self.relations.len()];
        let mut heads = vec![Vec::new(); self.relations.len()];
        for t in &self.train {
            tails[t.rel.index()].push(t.tail);
            heads[t.rel.index()].push(t.head);
        }
        for list in tails.iter_mut().chain(heads.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        self.known_tails = tails;
        self.known_heads = heads;
    }

    /// Number of known (training) entities, |E|.
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_open_entities(&self) -> usize {
        self.open_entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn is_open_world(&self) -> bool {
        self.open_world
    }

    pub fn is_known(&self, e: EntityId) -> bool {
        e.index() < self.entities.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn open_entities(&self) -> &Vocab {
        &self.open_entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    /// External key of a known or open entity.
    pub fn entity_key(&self, e: EntityId) -> &str {
        let n = self.entities.len();
        if e.index() < n {
            self.entities.key(e.0).expect("valid entity id")
        } else {
            self.open_entities
                .key(e.0 - n as u32)
                .expect("valid open entity id")
        }
    }

    pub fn relation_key(&self, r: RelationId) -> &str {
        self.relations.key(r.0).expect("valid relation id")
    }

    pub fn entity_id(&self, key: &str) -> Option<EntityId> {
        self.entities.get(key).map(EntityId).or_else(|| {
            self.open_entities
                .get(key)
                .map(|i| EntityId(i + self.entities.len() as u32))
        })
    }

    pub fn relation_id(&self, key: &str) -> Option<RelationId> {
        self.relations.get(key).map(RelationId)
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    /// Number of duplicate lines dropped while loading the split.
    pub fn duplicates(&self, split: Split) -> usize {
        self.duplicates[split as usize]
    }

    /// Sorted tails observed with relation `r` in the training split.
    pub fn known_tails(&self, r: RelationId) -> &[EntityId] {
        &self.known_tails[r.index()]
    }

    /// Sorted heads observed with relation `r` in the training split.
    pub fn known_heads(&self, r: RelationId) -> &[EntityId] {
        &self.known_heads[r.index()]
    }

    /// Writes a split back as `head\trel\ttail` lines in stored order.
    pub fn write_split(&self, split: Split, path: impl AsRef<Path>) -> Result<()> {
        write_triples(
            path,
            self.split(split).iter().map(|t| {
                (
                    self.entity_key(t.head),
                    self.relation_key(t.rel),
                    self.entity_key(t.tail),
                )
            }),
        )
    }
}

pub fn write_triples<'a, I>(path: impl AsRef<Path>, triples: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (h, r, t) in triples {
        writeln!(w, "{h}\t{r}\t{t}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// For each (head, rel) the true tails, and for each (rel, tail) the true
/// heads, over a chosen set of splits. Lists are sorted.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    splits: Vec<Split>,
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

pub fn build_filter_index(graph: &KnowledgeGraph, splits: &[Split]) -> FilterIndex {
    let mut tails: HashMap<_, Vec<EntityId>> = HashMap::new();
    let mut heads: HashMap<_, Vec<EntityId>> = HashMap::new();
    let mut chosen: Vec<Split> = splits.to_vec();
    chosen.sort();
    chosen.dedup();
    for &split in &chosen {
        for t in graph.split(split) {
            tails.entry((t.head, t.rel)).or_default().push(t.tail);
            heads.entry((t.rel, t.tail)).or_default().push(t.head);
        }
    }
    for list in tails.values_mut().chain(heads.values_mut()) {
        list.sort_unstable();
        list.dedup();
    }
    FilterIndex {
        splits: chosen,
        tails,
        heads,
    }
}

impl FilterIndex {
    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn true_tails(&self, head: EntityId, rel: RelationId) -> &[EntityId] {
        self.tails.get(&(head, rel)).map_or(&[], Vec::as_slice)
    }

    pub fn true_heads(&self, rel: RelationId, tail: EntityId) -> &[EntityId] {
        self.heads.get(&(rel, tail)).map_or(&[], Vec::as_slice)
    }

    /// Total number of (pair, entity) entries across the tail index.
    pub fn num_tail_facts(&self) -> usize {
        self.tails.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityText {
    pub name: String,
    pub description: String,
}

impl EntityText {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        EntityText {
            name: name.into(),
            description: description.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.name.trim().is_empty() && self.description.trim().is_empty()
    }
}

/// Entity text keyed by external entity id, iterated in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    records: BTreeMap<String, EntityText>,
}

pub fn load_entity_text(path: impl AsRef<Path>) -> Result<Metadata> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let key = fields.next().unwrap_or_default();
        let name = fields.next().ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: "expected entity_id<TAB>name<TAB>description".into(),
        })?;
        let description = fields.next().unwrap_or_default();
        if description.contains('\t') {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: "unescaped tab in description".into(),
            });
        }
        let text = EntityText::new(unescape(name), unescape(description));
        if records.insert(key.to_owned(), text).is_some() {
            return Err(Error::DuplicateMetadata {
                path: path.to_owned(),
                line: i + 1,
                key: key.to_owned(),
            });
        }
    }
    Ok(Metadata { records })
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, text: EntityText) -> Option<EntityText> {
        self.records.insert(key.into(), text)
    }

    pub fn remove(&mut self, key: &str) -> Option<EntityText> {
        self.records.remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&EntityText> {
        self.records.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut EntityText> {
        self.records.get_mut(key)
    }

    pub fn for_entity<'a>(&'a self, graph: &KnowledgeGraph, e: EntityId) -> Option<&'a EntityText> {
        self.get(graph.entity_key(e))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EntityText)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (key, text) in &self.records {
            writeln!(
                w,
                "{key}\t{}\t{}",
                escape(&text.name),
                escape(&text.description)
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl FromIterator<(String, EntityText)> for Metadata {
    fn from_iter<T: IntoIterator<Item = (String, EntityText)>>(iter: T) -> Self {
        Metadata {
            records: iter.into_iter().collect(),
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}
