//! Flat `key=value` experiment configuration.
//!
//! Values come from built-in defaults, then an optional config file, then
//! command-line flags of the same name. Every run echoes the resolved
//! values into its manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Known keys with defaults (`""` = unset) and a help line.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("train", "", "training triples (TSV)"),
    ("valid", "", "validation triples (TSV)"),
    ("test", "", "test triples (TSV)"),
    ("metadata", "", "entity text TSV: id, name, description"),
    ("embeddings", "", "word embedding text file"),
    (
        "phrase_template",
        "{name}",
        "phrase key template; {name} is replaced by the joined name",
    ),
    (
        "phrase_separator",
        "_",
        "separator joining name words in phrase keys",
    ),
    ("out", "", "output directory"),
    ("seed", "0", "master seed; stage seeds are derived from it"),
    ("threads", "0", "worker threads (0 = all cores)"),
    ("family", "complex", "KGC model: transe, distmult, complex"),
    ("dim", "300", "KGC embedding dimension"),
    ("lr", "0.001", "KGC learning rate"),
    ("margin", "1.0", "TransE margin"),
    ("reg", "0.001", "L2 weight for DistMult/ComplEx"),
    ("negatives", "1", "negative samples per positive"),
    ("epochs", "100", "KGC training epochs"),
    ("batch_size", "128", "KGC mini-batch size"),
    (
        "validate_every",
        "10",
        "validation interval in epochs (0 = keep last)",
    ),
    (
        "parallel",
        "false",
        "per-example gradients on the thread pool",
    ),
    ("kgc_checkpoint", "", "KGC checkpoint path"),
    ("map_checkpoint", "", "map checkpoint path"),
    ("map_kind", "affine", "linear, affine or mlp"),
    ("map_epochs", "200", "map training epochs"),
    ("map_lr", "0.001", "map learning rate"),
    ("map_batch_size", "128", "map mini-batch size"),
    ("map_loss", "squared", "squared or euclidean"),
    ("mlp_hidden", "0", "MLP hidden width (0 = KGC dimension)"),
    ("dropout", "0.0", "word dropout rate during map training"),
    ("direction", "tail", "tail or head prediction"),
    ("filtered", "true", "MR and Hits@k on filtered ranks"),
    (
        "filter_splits",
        "train,valid,test",
        "splits whose triples are filtered",
    ),
    (
        "target_filtering",
        "false",
        "rank only tails seen with the relation in training",
    ),
    ("hits_k", "1,3,10", "Hits@k cut-offs"),
    ("eval_split", "test", "split to evaluate"),
    (
        "fractions",
        "0,0.2,0.4,0.6,0.8,0.9,1.0",
        "robustness drop fractions",
    ),
    ("modes", "descriptions,all", "robustness corruption modes"),
    ("mode", "all", "drop-metadata mode: descriptions or all"),
    ("fraction", "0.5", "drop-metadata fraction"),
    (
        "heads",
        "0.1",
        "sample-owe: fraction of distinct heads to open",
    ),
    (
        "head_count",
        "0",
        "sample-owe: exact number of heads (overrides heads)",
    ),
    (
        "open_valid_fraction",
        "0.1",
        "share of open-world test moved to validation",
    ),
    (
        "closed_valid_fraction",
        "0.05",
        "share of train held out as closed-world validation",
    ),
    ("entity", "", "neighbors: entity id"),
    ("text", "", "neighbors: free-text name"),
    ("description", "", "neighbors: free-text description"),
    ("k", "10", "neighbors: number of neighbours"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            values: KEYS
                .iter()
                .map(|(k, v, _)| ((*k).to_owned(), (*v).to_owned()))
                .collect(),
        }
    }
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key `{key}`")))
    }
}

impl ExperimentConfig {
    /// Parses `key=value` lines; `#` starts a comment line.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut config = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_owned(),
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            config.set(k.trim(), v.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        Some(self.str(key)).filter(|s| !s.is_empty())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .parse()
            .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{}`: {e}", self.str(key))))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" | "" => Ok(false),
            other => Err(Error::Config(format!(
                "`{key}`: expected a boolean, got `{other}`"
            ))),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{s}`: {e}")))
            })
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.opt_str(key).map(PathBuf::from)
    }

    /// Path that must be set and exist.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let p = self
            .path(key)
            .ok_or_else(|| Error::Config(format!("`{key}` is required")))?;
        if !p.exists() {
            return Err(Error::Config(format!(
                "`{key}`: file not found: {}",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    /// Seed for a named pipeline stage, derived from the master seed.
    pub fn stage_seed(&self, stage: &str) -> Result<u64> {
        Ok(derive_seed(self.seed()?, stage))
    }

    /// Manifest text: tool, version, command and every resolved key.
    pub fn manifest(&self, command: &str) -> String {
        let mut s = format!(
            "tool={}\nversion={}\ncommand={command}\n",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION")
        );
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// splitmix64 over the seed xor an FNV-1a hash of the stage name.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = (seed ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
