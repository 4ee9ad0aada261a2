//! Command-line front end: subcommands, flag parsing and run manifests.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use log::info;

use crate::config::{ExperimentConfig, KEYS};
use crate::error::{Error, Result};
use crate::eval::{self, Direction, EvalConfig, RankingReport};
use crate::graph::{load_entity_text, EntityText, KnowledgeGraph, Metadata, Split, TripleSource};
use crate::models::{self, Family, KgcHyperParams, KgcModel};
use crate::sampler::{self, CorruptionMode, HeadTarget, SamplerConfig};
use crate::text::{load_word_embeddings_filtered, tokenize, PhraseKey, WordEmbeddingStore};
use crate::transform::{self, MapHyperParams, MapKind, MapModel, TextEncoder};

pub const COMMANDS: &[(&str, &str)] = &[
    ("train-kgc", "train a closed-world link prediction model"),
    (
        "train-map",
        "fit a map from entity text to graph embeddings",
    ),
    ("eval", "rank test triples, closed- or open-world"),
    (
        "robustness",
        "retrain the map under dropped metadata and evaluate",
    ),
    (
        "neighbors",
        "nearest graph entities of an entity or a piece of text",
    ),
    (
        "sample-owe",
        "carve an open-world split out of a closed-world graph",
    ),
    (
        "drop-metadata",
        "remove names/descriptions from a share of entities",
    ),
];

pub fn command() -> Command {
    let mut cmd = Command::new("owe")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Open-world knowledge graph completion")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in COMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value configuration file; flags override it"),
        );
        for (key, default, help) in KEYS {
            let help = if default.is_empty() {
                (*help).to_owned()
            } else {
                format!("{help} [default: {default}]")
            };
            let mut arg = Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(help);
            if key.contains('_') {
                arg = arg.visible_alias(key.replace('_', "-"));
            }
            sub = sub.arg(arg);
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Defaults, then the `--config` file, then flags.
pub fn resolve(matches: &ArgMatches) -> Result<(String, ExperimentConfig)> {
    let (name, sub) = matches
        .subcommand()
        .ok_or_else(|| Error::Config("no subcommand given".into()))?;
    let mut cfg = match sub.get_one::<String>("config") {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for (key, _, _) in KEYS {
        if let Some(v) = sub.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok((name.to_owned(), cfg))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command()
        .try_get_matches_from(args)
        .map_err(|e| Error::Config(e.to_string()))?;
    let (name, cfg) = resolve(&matches)?;
    execute(&name, &cfg)
}

/// Runs one subcommand on the thread pool sized by `threads`. The manifest
/// is written last, so its presence marks a complete run.
pub fn execute(name: &str, cfg: &ExperimentConfig) -> Result<()> {
    let threads: usize = cfg.parsed("threads")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("`threads`: {e}")))?;
    let out = out_dir(cfg)?;
    let extra = pool.install(|| match name {
        "train-kgc" => cmd_train_kgc(cfg, &out),
        "train-map" => cmd_train_map(cfg, &out),
        "eval" => cmd_eval(cfg, &out),
        "robustness" => cmd_robustness(cfg, &out),
        "neighbors" => cmd_neighbors(cfg, &out),
        "sample-owe" => cmd_sample_owe(cfg, &out),
        "drop-metadata" => cmd_drop_metadata(cfg, &out),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    })?;
    let mut manifest = cfg.manifest(name);
    manifest.push_str(&extra);
    write_file(&out.join("manifest.txt"), &manifest)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = cfg
        .path("out")
        .ok_or_else(|| Error::Config("`out` is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn optional_source(cfg: &ExperimentConfig, key: &str) -> Result<TripleSource> {
    match cfg.path(key) {
        Some(_) => TripleSource::read(cfg.existing_path(key)?),
        None => Ok(TripleSource::in_memory(key, Vec::new())),
    }
}

fn graph(cfg: &ExperimentConfig, open_world: bool) -> Result<KnowledgeGraph> {
    let train = TripleSource::read(cfg.existing_path("train")?)?;
    let valid = optional_source(cfg, "valid")?;
    let test = optional_source(cfg, "test")?;
    let g = KnowledgeGraph::from_sources(&train, &valid, &test, open_world)?;
    info!(
        "graph: {} entities ({} open), {} relations, {}/{}/{} triples",
        g.num_entities(),
        g.num_open_entities(),
        g.num_relations(),
        g.train().len(),
        g.valid().len(),
        g.test().len()
    );
    Ok(g)
}

fn kgc_hyper(cfg: &ExperimentConfig) -> Result<KgcHyperParams> {
    Ok(KgcHyperParams {
        dim: cfg.parsed("dim")?,
        lr: cfg.parsed("lr")?,
        margin: cfg.parsed("margin")?,
        reg: cfg.parsed("reg")?,
        negatives: cfg.parsed("negatives")?,
        epochs: cfg.parsed("epochs")?,
        batch_size: cfg.parsed("batch_size")?,
        validate_every: cfg.parsed("validate_every")?,
        parallel: cfg.flag("parallel")?,
    })
}

fn map_hyper(cfg: &ExperimentConfig) -> Result<MapHyperParams> {
    let hidden: usize = cfg.parsed("mlp_hidden")?;
    Ok(MapHyperParams {
        lr: cfg.parsed("map_lr")?,
        batch_size: cfg.parsed("map_batch_size")?,
        epochs: cfg.parsed("map_epochs")?,
        dropout: cfg.parsed("dropout")?,
        loss: cfg.parsed("map_loss")?,
        hidden: (hidden > 0).then_some(hidden),
        validate_every: cfg.parsed("validate_every")?,
        parallel: cfg.flag("parallel")?,
    })
}

fn eval_config(cfg: &ExperimentConfig) -> Result<EvalConfig> {
    let c = EvalConfig {
        direction: cfg.parsed::<Direction>("direction")?,
        filtered: cfg.flag("filtered")?,
        filter_splits: cfg.list::<Split>("filter_splits")?,
        target_filtering: cfg.flag("target_filtering")?,
        hits_k: cfg.list("hits_k")?,
        split: cfg.parsed("eval_split")?,
    };
    c.validate()?;
    Ok(c)
}

fn load_kgc(cfg: &ExperimentConfig, graph: &KnowledgeGraph) -> Result<KgcModel> {
    let path = cfg.existing_path("kgc_checkpoint")?;
    let model = models::load_checkpoint(&path)?;
    let (ne, nr) = (model.num_entities(), model.embeddings.num_relations());
    if ne != graph.num_entities() || nr != graph.num_relations() {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint has {ne} entities and {nr} relations, graph has {} and {}",
            path.display(),
            graph.num_entities(),
            graph.num_relations()
        )));
    }
    Ok(model)
}

fn load_metadata(cfg: &ExperimentConfig) -> Result<Metadata> {
    let path = cfg.existing_path("metadata")?;
    let meta = load_entity_text(&path)?;
    if meta.is_empty() {
        return Err(Error::Empty(format!(
            "`metadata`: {} has no records",
            path.display()
        )));
    }
    Ok(meta)
}

/// Loads only the words (and phrase keys) that `texts` can ask for.
fn load_store<'a, I>(cfg: &ExperimentConfig, texts: I) -> Result<WordEmbeddingStore>
where
    I: IntoIterator<Item = &'a EntityText>,
{
    let phrase = PhraseKey::new(cfg.str("phrase_template"), cfg.str("phrase_separator"))?;
    let mut wanted = std::collections::HashSet::new();
    for t in texts {
        wanted.extend(phrase.keys(&t.name));
        wanted.extend(tokenize(&t.name));
        wanted.extend(tokenize(&t.description));
    }
    let path = cfg.existing_path("embeddings")?;
    let store =
        load_word_embeddings_filtered(&path, |w| wanted.contains(w))?.with_phrase_key(phrase);
    info!(
        "word store: {} of {} wanted keys, dim {}",
        store.len(),
        wanted.len(),
        store.dim()
    );
    Ok(store)
}

fn check_store(map: &MapModel, store: &WordEmbeddingStore) -> Result<()> {
    if map.input_dim() != store.dim() {
        return Err(Error::Dimension {
            expected: map.input_dim(),
            actual: store.dim(),
        });
    }
    Ok(())
}

fn load_map(
    cfg: &ExperimentConfig,
    kgc: &KgcModel,
    store: &WordEmbeddingStore,
) -> Result<MapModel> {
    let map = transform::load_map(cfg.existing_path("map_checkpoint")?)?;
    check_store(&map, store)?;
    transform::check_map_target(kgc, &map)?;
    Ok(map)
}

fn cmd_train_kgc(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let g = graph(cfg, false)?;
    let family: Family = cfg.parsed("family")?;
    let trained = models::train_kgc(&g, family, &kgc_hyper(cfg)?, cfg.stage_seed("kgc")?)?;
    models::save_checkpoint(&trained.model, out.join("kgc.ckpt"))?;
    models::write_training_log(out.join("kgc_log.tsv"), &trained.log)?;
    info!("kgc: best epoch {}", trained.best_epoch);
    Ok(format!("best_epoch={}\n", trained.best_epoch))
}

fn train_map_for(
    cfg: &ExperimentConfig,
    kgc: &KgcModel,
    g: &KnowledgeGraph,
    meta: &Metadata,
    store: &WordEmbeddingStore,
) -> Result<transform::TrainedMap> {
    let kind: MapKind = cfg.parsed("map_kind")?;
    transform::train_map(
        kgc,
        g,
        meta,
        store,
        kind,
        &map_hyper(cfg)?,
        cfg.stage_seed("map")?,
    )
}

fn cmd_train_map(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let g = graph(cfg, true)?;
    let kgc = load_kgc(cfg, &g)?;
    let meta = load_metadata(cfg)?;
    let store = load_store(cfg, meta.iter().map(|(_, t)| t))?;
    let trained = train_map_for(cfg, &kgc, &g, &meta, &store)?;
    transform::save_map(&trained.model, out.join("map.ckpt"))?;
    transform::write_map_log(out.join("map_log.tsv"), &trained.log)?;
    info!("map: best epoch {}", trained.best_epoch);
    Ok(format!("best_epoch={}\n", trained.best_epoch))
}

fn finish_report(report: &RankingReport, g: &KnowledgeGraph, out: &Path) -> Result<String> {
    report.write_tsv(g, out.join("ranks.tsv"))?;
    let summary = report.summary();
    write_file(&out.join("summary.txt"), &summary)?;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(summary.as_bytes());
    Ok(String::new())
}

fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let ec = eval_config(cfg)?;
    if cfg.opt_str("map_checkpoint").is_none() {
        let g = graph(cfg, false)?;
        let kgc = load_kgc(cfg, &g)?;
        let report = eval::evaluate(&kgc, None, &g, &ec)?;
        return finish_report(&report, &g, out);
    }
    let g = graph(cfg, true)?;
    let kgc = load_kgc(cfg, &g)?;
    let meta = load_metadata(cfg)?;
    let store = load_store(cfg, meta.iter().map(|(_, t)| t))?;
    let map = load_map(cfg, &kgc, &store)?;
    let report = transform::evaluate_map(&kgc, &map, &g, &meta, &store, &ec)?;
    finish_report(&report, &g, out)
}

/// Rounds parameters through `f32` as a checkpoint round trip would.
fn as_checkpointed(mut map: MapModel) -> MapModel {
    let p: Vec<f64> = map.params().iter().map(|&x| x as f32 as f64).collect();
    map.set_params(&p);
    map
}

fn robustness_row(label: &str, fraction: &str, r: &RankingReport, hits_k: &[usize]) -> String {
    let a = &r.aggregate;
    let mut s = format!(
        "{label}\t{fraction}\t{:.6}\t{:.6}\t{:.6}",
        a.mrr_filtered, a.mrr_raw, a.mr
    );
    for k in hits_k {
        s.push_str(&format!("\t{:.6}", a.hits_at(*k).unwrap_or(0.0)));
    }
    s.push_str(&format!("\t{}\t{}\n", a.evaluated, a.skipped));
    s
}

/// Row for a setting where no map could be trained.
fn empty_row(label: &str, fraction: &str, num_hits: usize) -> String {
    let mut s = format!("{label}\t{fraction}\t-\t-\t-");
    for _ in 0..num_hits {
        s.push_str("\t-");
    }
    s.push_str("\t0\t-\n");
    s
}

fn cmd_robustness(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let ec = eval_config(cfg)?;
    let fractions: Vec<f64> = cfg.list("fractions")?;
    let modes: Vec<CorruptionMode> = cfg.list("modes")?;
    let g = graph(cfg, true)?;
    let kgc = load_kgc(cfg, &g)?;
    let meta = load_metadata(cfg)?;
    let store = load_store(cfg, meta.iter().map(|(_, t)| t))?;
    let corrupt_seed = cfg.stage_seed("corrupt")?;
    let is_train_entity = |key: &str| g.entity_id(key).is_some_and(|e| g.is_known(e));

    let mut table = String::from("mode\tfraction\tmrr_filtered\tmrr_raw\tmr");
    for k in &ec.hits_k {
        table.push_str(&format!("\thits@{k}"));
    }
    table.push_str("\tevaluated\tskipped\n");
    for mode in &modes {
        for &f in &fractions {
            let corrupted =
                sampler::corrupt_metadata_where(&meta, *mode, f, corrupt_seed, is_train_entity);
            let trained = match train_map_for(cfg, &kgc, &g, &corrupted, &store) {
                Ok(t) => t,
                Err(Error::Empty(why)) => {
                    log::warn!("robustness {mode} {f}: {why}");
                    table.push_str(&empty_row(
                        &mode.to_string(),
                        &f.to_string(),
                        ec.hits_k.len(),
                    ));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let map = as_checkpointed(trained.model);
            let report = transform::evaluate_map(&kgc, &map, &g, &corrupted, &store, &ec)?;
            info!(
                "robustness {mode} {f}: mrr {:.4}",
                report.aggregate.mrr_filtered
            );
            table.push_str(&robustness_row(
                &mode.to_string(),
                &f.to_string(),
                &report,
                &ec.hits_k,
            ));
        }
    }
    let baseline = eval::random_head_baseline(&kgc, &g, &ec, cfg.stage_seed("baseline")?)?;
    table.push_str(&robustness_row("random_head", "-", &baseline, &ec.hits_k));
    write_file(&out.join("robustness.tsv"), &table)?;
    print!("{table}");
    Ok(String::new())
}

fn cmd_neighbors(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let k: usize = cfg.parsed("k")?;
    let open = cfg.opt_str("map_checkpoint").is_some();
    let g = graph(cfg, open)?;
    let kgc = load_kgc(cfg, &g)?;
    let known = cfg
        .opt_str("entity")
        .and_then(|key| g.entity_id(key))
        .filter(|e| g.is_known(*e));
    let query = match (known, cfg.opt_str("entity"), cfg.opt_str("text")) {
        (Some(e), _, _) => kgc.entity(e).real.to_vec(),
        (None, entity, text) => {
            if !open {
                return Err(Error::Config(match entity {
                    Some(key) => format!(
                        "`entity`: `{key}` is not a training entity and no `map_checkpoint` is set"
                    ),
                    None => "`entity` or `text` with `map_checkpoint` is required".into(),
                }));
            }
            let meta = match (entity, text) {
                (_, Some(name)) => EntityText::new(name, cfg.str("description")),
                (Some(key), None) => load_metadata(cfg)?
                    .get(key)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("`entity`: no metadata for `{key}`")))?,
                (None, None) => return Err(Error::Config("`entity` or `text` is required".into())),
            };
            let store = load_store(cfg, std::iter::once(&meta))?;
            let map = load_map(cfg, &kgc, &store)?;
            let empty = Metadata::new();
            TextEncoder::new(&map, &empty, &store)
                .encode_text(Some(&meta))?
                .real
        }
    };
    let mut table = String::from("rank\tentity\tdistance\n");
    for (i, (e, d)) in eval::nearest_neighbors(&kgc, &query, k)
        .into_iter()
        .enumerate()
    {
        table.push_str(&format!("{}\t{}\t{:.6}\n", i + 1, g.entity_key(e), d));
    }
    write_file(&out.join("neighbors.tsv"), &table)?;
    print!("{table}");
    Ok(String::new())
}

fn cmd_sample_owe(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let g = graph(cfg, false)?;
    let count: usize = cfg.parsed("head_count")?;
    let sc = SamplerConfig {
        seed: cfg.stage_seed("sample")?,
        heads: if count > 0 {
            HeadTarget::Count(count)
        } else {
            HeadTarget::Fraction(cfg.parsed("heads")?)
        },
        open_valid_fraction: cfg.parsed("open_valid_fraction")?,
        closed_valid_fraction: cfg.parsed("closed_valid_fraction")?,
    };
    let split = sampler::sample_open_world(&g, &sc)?;
    let violations = sampler::validate_split(&split);
    if let Some(v) = violations.first() {
        return Err(Error::Sampling(format!(
            "{} invariant violations, first: {} in {}",
            violations.len(),
            v.rule,
            v.set
        )));
    }
    split.write(&g, &sc, out)?;
    Ok(split.manifest(&sc).replace("seed=", "sampler_seed="))
}

fn cmd_drop_metadata(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let meta = load_metadata(cfg)?;
    let mode: CorruptionMode = cfg.parsed("mode")?;
    let fraction: f64 = cfg.parsed("fraction")?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "`fraction` must lie in [0, 1], got {fraction}"
        )));
    }
    let seed = cfg.stage_seed("corrupt")?;
    let corrupted = match cfg.opt_str("train") {
        Some(_) => {
            let train = TripleSource::read(cfg.existing_path("train")?)?;
            let keys: std::collections::HashSet<&str> = train
                .triples
                .iter()
                .flat_map(|t| [t.head.as_str(), t.tail.as_str()])
                .collect();
            sampler::corrupt_metadata_where(&meta, mode, fraction, seed, |k| keys.contains(k))
        }
        None => sampler::corrupt_metadata(&meta, mode, fraction, seed),
    };
    corrupted.write(out.join("metadata.tsv"))?;
    Ok(String::new())
}
