//! Word-embedding loading and text-based entity embeddings.
//!
//! An entity's name and description are turned into a sequence of word
//! vectors (a phrase vector for the whole name when the store has one) and
//! averaged. Out-of-vocabulary tokens and dropped tokens both become the
//! zero "unknown" vector and still count in the average's denominator.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::EntityText;

/// How a multi-word name is turned into a phrase key.
///
/// The name's whitespace-separated words are joined with `separator` and
/// substituted for `{name}` in `template`, e.g. template `ENTITY/{name}`
/// with separator `_` maps "Bram Stoker" to `ENTITY/Bram_Stoker`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseKey {
    pub template: String,
    pub separator: String,
}

impl Default for PhraseKey {
    fn default() -> Self {
        PhraseKey {
            template: "{name}".into(),
            separator: "_".into(),
        }
    }
}

impl PhraseKey {
    pub fn new(template: impl Into<String>, separator: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if !template.contains("{name}") {
            return Err(Error::Config(format!(
                "phrase template `{template}` lacks a {{name}} placeholder"
            )));
        }
        Ok(PhraseKey {
            template,
            separator: separator.into(),
        })
    }

    /// Candidate keys, original case first, then lowercased.
    pub fn keys(&self, name: &str) -> Vec<String> {
        let words: Vec<&str> = name.split_whitespace().collect();
        if words.is_empty() {
            return Vec::new();
        }
        let joined = words.join(&self.separator);
        let exact = self.template.replace("{name}", &joined);
        let lower = self.template.replace("{name}", &joined.to_lowercase());
        if lower == exact {
            vec![exact]
        } else {
            vec![exact, lower]
        }
    }
}

#[derive(Debug, Clone)]
pub struct WordEmbeddingStore {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    phrase_key: PhraseKey,
}

/// Loads a text embedding file: `token v1 ... vd` per line, optionally
/// preceded by a `count dim` header line.
pub fn load_word_embeddings(path: impl AsRef<Path>) -> Result<WordEmbeddingStore> {
    load_word_embeddings_filtered(path, |_| true)
}

/// Like [`load_word_embeddings`] but keeps only tokens accepted by `keep`.
/// Every line is still validated.
pub fn load_word_embeddings_filtered<F>(
    path: impl AsRef<Path>,
    keep: F,
) -> Result<WordEmbeddingStore>
where
    F: Fn(&str) -> bool,
{
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut dim: Option<usize> = None;
    let mut expected_count: Option<usize> = None;
    let mut entries = 0usize;
    let mut index = HashMap::new();
    let mut vectors: Vec<f32> = Vec::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        if i == 0 && fields.len() == 2 {
            if let (Ok(count), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                expected_count = Some(count);
                dim = Some(d);
                continue;
            }
        }
        let (token, values) = fields
            .split_first()
            .ok_or_else(|| parse_err(i + 1, "empty entry".into()))?;
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(parse_err(
                i + 1,
                format!(
                    "vector for `{token}` has {} components, expected {d}",
                    values.len()
                ),
            ));
        }
        entries += 1;
        if !keep(token) || index.contains_key(*token) {
            continue;
        }
        let start = vectors.len();
        for v in values {
            let x: f32 = v
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad number `{v}`")))?;
            if !x.is_finite() {
                return Err(parse_err(i + 1, format!("non-finite component `{v}`")));
            }
            vectors.push(x);
        }
        index.insert((*token).to_owned(), start / d);
    }
    if let Some(count) = expected_count {
        if count != entries {
            return Err(parse_err(
                1,
                format!("header announces {count} entries, file has {entries}"),
            ));
        }
    }
    let dim = dim.ok_or_else(|| Error::Empty(format!("{}: no embeddings", path.display())))?;
    Ok(WordEmbeddingStore {
        dim,
        index,
        vectors,
        phrase_key: PhraseKey::default(),
    })
}

impl WordEmbeddingStore {
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut index = HashMap::new();
        let mut vectors = Vec::new();
        for (token, v) in entries {
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: v.len(),
                });
            }
            let token = token.into();
            if index.contains_key(&token) {
                continue;
            }
            index.insert(token, vectors.len() / dim);
            vectors.extend_from_slice(&v);
        }
        Ok(WordEmbeddingStore {
            dim,
            index,
            vectors,
            phrase_key: PhraseKey::default(),
        })
    }

    pub fn with_phrase_key(mut self, key: PhraseKey) -> Self {
        self.phrase_key = key;
        self
    }

    pub fn phrase_key(&self) -> &PhraseKey {
        &self.phrase_key
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Vector for `token`, or the all-zero unknown vector.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        match self.get(token) {
            Some(v) => v.iter().map(|&x| x as f64).collect(),
            None => vec![0.0; self.dim],
        }
    }

    pub fn phrase(&self, name: &str) -> Option<&[f32]> {
        self.phrase_key.keys(name).iter().find_map(|k| self.get(k))
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Word vectors of an entity's text: name first, then description.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    unknown: usize,
}

impl TokenSequence {
    pub fn new(dim: usize) -> Self {
        TokenSequence {
            dim,
            vectors: Vec::new(),
            unknown: 0,
        }
    }

    pub fn from_vectors(dim: usize, vectors: Vec<Vec<f64>>) -> Self {
        let unknown = vectors
            .iter()
            .filter(|v| v.iter().all(|&x| x == 0.0))
            .count();
        TokenSequence {
            dim,
            vectors,
            unknown,
        }
    }

    fn push_lookup(&mut self, store: &WordEmbeddingStore, token: &str) {
        match store.get(token) {
            Some(v) => self.vectors.push(v.iter().map(|&x| x as f64).collect()),
            None => {
                self.unknown += 1;
                self.vectors.push(vec![0.0; self.dim]);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn unknown_count(&self) -> usize {
        self.unknown
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

pub fn entity_tokens(meta: Option<&EntityText>, store: &WordEmbeddingStore) -> TokenSequence {
    let mut seq = TokenSequence::new(store.dim());
    let Some(meta) = meta else {
        return seq;
    };
    if let Some(phrase) = store.phrase(&meta.name) {
        seq.vectors.push(phrase.iter().map(|&x| x as f64).collect());
    } else {
        for tok in tokenize(&meta.name) {
            seq.push_lookup(store, &tok);
        }
    }
    for tok in tokenize(&meta.description) {
        seq.push_lookup(store, &tok);
    }
    seq
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    pub tokens_used: usize,
    pub unknown_count: usize,
}

/// Word dropout: each position is independently replaced by the unknown
/// vector with probability `rate`. A rate of 0 draws nothing from `rng`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub const NONE: Dropout = Dropout { rate: 0.0 };

    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate })
    }
}

/// Arithmetic mean of the sequence after word dropout.
pub fn aggregate<R: Rng + ?Sized>(
    seq: &TokenSequence,
    dropout: Dropout,
    rng: &mut R,
) -> Result<TextEmbedding> {
    if seq.is_empty() {
        return Err(Error::Empty("entity has no usable text".into()));
    }
    let mut sum = vec![0.0; seq.dim];
    let mut dropped = 0usize;
    for v in &seq.vectors {
        if dropout.rate > 0.0 && rng.gen::<f64>() < dropout.rate {
            dropped += 1;
            continue;
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = seq.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(TextEmbedding {
        vector: sum,
        tokens_used: seq.len(),
        unknown_count: seq.unknown + dropped,
    })
}

/// Evaluation-mode text embedding of an entity (no dropout).
pub fn embed_text(meta: Option<&EntityText>, store: &WordEmbeddingStore) -> Result<TextEmbedding> {
    let seq = entity_tokens(meta, store);
    // no draws happen without dropout
    aggregate(&seq, Dropout::NONE, &mut ChaCha8Rng::seed_from_u64(0))
}
