//! Text-to-graph maps Ψ: linear, affine and 4-layer MLP, with an independent
//! second branch for the imaginary part when the graph model is ComplEx.
//!
//! Maps are fitted by mini-batch Adam on (text embedding, graph embedding)
//! pairs of training entities; graph and word embeddings stay frozen.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::{Adam, AdamConfig, Moments};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, RankingReport};
use crate::graph::{EntityId, EntityText, KnowledgeGraph, Metadata, RelationId};
use crate::matrix::Matrix;
use crate::models::{
    read_f32_block, read_header, write_f32_block, Embedding, EmbeddingRef, KgcModel,
};
use crate::text::{aggregate, entity_tokens, Dropout, TokenSequence, WordEmbeddingStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapKind {
    Linear,
    Affine,
    Mlp,
}

impl MapKind {
    pub fn name(self) -> &'static str {
        match self {
            MapKind::Linear => "linear",
            MapKind::Affine => "affine",
            MapKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MapKind::Linear),
            "affine" => Ok(MapKind::Affine),
            "mlp" => Ok(MapKind::Mlp),
            other => Err(Error::Config(format!(
                "unknown transformation kind `{other}`"
            ))),
        }
    }
}

/// Number of affine layers in the MLP map.
pub const MLP_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Layer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        if let Some(b) = &self.bias {
            for (yi, bi) in y.iter_mut().zip(b) {
                *yi += bi;
            }
        }
        y
    }

    fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// A chain of layers with ReLU between them; the last layer is affine
/// (or linear for [`MapKind::Linear`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub layers: Vec<Layer>,
}

impl Branch {
    fn random<R: Rng + ?Sized>(widths: &[usize], bias: bool, rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: Matrix::uniform(fan_out, fan_in, bound, rng),
                    bias: bias.then(|| vec![0.0; fan_out]),
                }
            })
            .collect();
        Branch { layers }
    }

    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut x = v.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x);
            if i < last {
                x.iter_mut().for_each(|a| *a = a.max(0.0));
            }
        }
        x
    }

    /// Forward pass keeping each layer's input (post-activation) for backprop.
    fn forward_cached(&self, v: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = v.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&x);
            inputs.push(x);
            x = y;
            if i < last {
                x.iter_mut().for_each(|a| *a = a.max(0.0));
            }
        }
        (inputs, x)
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output`.
    fn backward(&self, inputs: &[Vec<f64>], mut upstream: Vec<f64>, grad: &mut BranchGrad) {
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &inputs[l];
            let g = &mut grad.layers[l];
            let cols = layer.weight.cols();
            for (o, &u) in upstream.iter().enumerate() {
                if u == 0.0 {
                    continue;
                }
                let row = &mut g.weight[o * cols..(o + 1) * cols];
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += u * xi;
                }
            }
            if let Some(b) = g.bias.as_mut() {
                for (bi, u) in b.iter_mut().zip(&upstream) {
                    *bi += u;
                }
            }
            if l == 0 {
                break;
            }
            // input of layer l is relu(z_{l-1}); relu'(z) = 1 iff output > 0
            let mut down = vec![0.0; cols];
            for (o, &u) in upstream.iter().enumerate() {
                if u == 0.0 {
                    continue;
                }
                for (d, w) in down.iter_mut().zip(layer.weight.row(o)) {
                    *d += u * w;
                }
            }
            for (d, xi) in down.iter_mut().zip(x) {
                if *xi <= 0.0 {
                    *d = 0.0;
                }
            }
            upstream = down;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapModel {
    kind: MapKind,
    input_dim: usize,
    output_dim: usize,
    pub real: Branch,
    pub imag: Option<Branch>,
}

impl MapModel {
    /// Randomly initialized map; `hidden` is the MLP width (ignored otherwise).
    pub fn new<R: Rng + ?Sized>(
        kind: MapKind,
        input_dim: usize,
        output_dim: usize,
        complex: bool,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let widths = Self::widths_for(kind, input_dim, output_dim, hidden);
        let bias = kind != MapKind::Linear;
        let real = Branch::random(&widths, bias, rng);
        let imag = complex.then(|| Branch::random(&widths, bias, rng));
        MapModel {
            kind,
            input_dim,
            output_dim,
            real,
            imag,
        }
    }

    fn widths_for(kind: MapKind, input_dim: usize, output_dim: usize, hidden: usize) -> Vec<usize> {
        match kind {
            MapKind::Linear | MapKind::Affine => vec![input_dim, output_dim],
            MapKind::Mlp => {
                let mut w = vec![input_dim];
                w.extend(std::iter::repeat_n(hidden, MLP_LAYERS - 1));
                w.push(output_dim);
                w
            }
        }
    }

    /// Affine map with the given weight and bias on every branch.
    pub fn affine(weight: Matrix, bias: Vec<f64>, complex: bool) -> Self {
        assert_eq!(weight.rows(), bias.len(), "bias length");
        let branch = Branch {
            layers: vec![Layer {
                weight: weight.clone(),
                bias: Some(bias),
            }],
        };
        MapModel {
            kind: MapKind::Affine,
            input_dim: weight.cols(),
            output_dim: weight.rows(),
            imag: complex.then(|| branch.clone()),
            real: branch,
        }
    }

    pub fn linear(weight: Matrix, complex: bool) -> Self {
        let branch = Branch {
            layers: vec![Layer {
                weight: weight.clone(),
                bias: None,
            }],
        };
        MapModel {
            kind: MapKind::Linear,
            input_dim: weight.cols(),
            output_dim: weight.rows(),
            imag: complex.then(|| branch.clone()),
            real: branch,
        }
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn is_complex(&self) -> bool {
        self.imag.is_some()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(self.real.layers.iter().map(|l| l.weight.rows()));
        w
    }

    pub fn num_params(&self) -> usize {
        self.branches()
            .flat_map(|b| &b.layers)
            .map(Layer::num_params)
            .sum()
    }

    fn branches(&self) -> impl Iterator<Item = &Branch> {
        std::iter::once(&self.real).chain(self.imag.iter())
    }

    /// Ψ(v): the graph-space embedding of a text embedding.
    pub fn map(&self, v: &[f64]) -> Result<Embedding> {
        if v.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: v.len(),
            });
        }
        Ok(Embedding {
            real: self.real.forward(v),
            imag: self.imag.as_ref().map(|b| b.forward(v)),
        })
    }

    /// Flattened parameters in checkpoint order: per branch, per layer,
    /// weight (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.branches().flat_map(|b| &b.layers) {
            out.extend_from_slice(l.weight.as_slice());
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "parameter count");
        let mut at = 0;
        let branches = std::iter::once(&mut self.real).chain(self.imag.iter_mut());
        for l in branches.flat_map(|b| b.layers.iter_mut()) {
            let n = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&values[at..at + n]);
            at += n;
            if let Some(b) = l.bias.as_mut() {
                let n = b.len();
                b.copy_from_slice(&values[at..at + n]);
                at += n;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerGrad {
    weight: Vec<f64>,
    bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
struct BranchGrad {
    layers: Vec<LayerGrad>,
}

impl BranchGrad {
    fn zeros(b: &Branch) -> Self {
        BranchGrad {
            layers: b
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.as_slice().len()],
                    bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
        }
    }

    fn add_scaled(&mut self, other: &BranchGrad, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight
                .iter_mut()
                .zip(&b.weight)
                .for_each(|(x, y)| *x += s * y);
            if let (Some(x), Some(y)) = (a.bias.as_mut(), b.bias.as_ref()) {
                x.iter_mut().zip(y).for_each(|(x, y)| *x += s * y);
            }
        }
    }
}

/// Gradient of the map loss, laid out like [`MapModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapGradient {
    pub loss: f64,
    real: BranchGrad,
    imag: Option<BranchGrad>,
}

impl MapGradient {
    fn zeros(model: &MapModel) -> Self {
        MapGradient {
            loss: 0.0,
            real: BranchGrad::zeros(&model.real),
            imag: model.imag.as_ref().map(BranchGrad::zeros),
        }
    }

    fn add_scaled(&mut self, other: &MapGradient, s: f64) {
        self.loss += s * other.loss;
        self.real.add_scaled(&other.real, s);
        if let (Some(a), Some(b)) = (self.imag.as_mut(), other.imag.as_ref()) {
            a.add_scaled(b, s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in std::iter::once(&self.real)
            .chain(self.imag.iter())
            .flat_map(|b| &b.layers)
        {
            out.extend_from_slice(&l.weight);
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }
}

/// Distance between mapped text embedding and graph embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapLoss {
    /// `‖Ψ(v) − u‖²`
    Squared,
    /// `√(‖Ψ(v) − u‖² + ε)`, ε = 1e-12
    Euclidean,
}

pub const EUCLIDEAN_EPS: f64 = 1e-12;

impl FromStr for MapLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(MapLoss::Squared),
            "euclidean" | "unsquared" => Ok(MapLoss::Euclidean),
            other => Err(Error::Config(format!("unknown map loss `{other}`"))),
        }
    }
}

impl fmt::Display for MapLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapLoss::Squared => "squared",
            MapLoss::Euclidean => "euclidean",
        })
    }
}

impl MapLoss {
    /// Loss value and `∂loss/∂output` for one part.
    fn part(self, output: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = output.iter().zip(target).map(|(y, u)| y - u).collect();
        let sq: f64 = diff.iter().map(|d| d * d).sum();
        match self {
            MapLoss::Squared => (sq, diff.iter().map(|d| 2.0 * d).collect()),
            MapLoss::Euclidean => {
                let n = (sq + EUCLIDEAN_EPS).sqrt();
                (n, diff.iter().map(|d| d / n).collect())
            }
        }
    }
}

fn example_gradient(
    model: &MapModel,
    v: &[f64],
    target: EmbeddingRef<'_>,
    loss: MapLoss,
) -> MapGradient {
    let mut grad = MapGradient::zeros(model);
    let (inputs, out) = model.real.forward_cached(v);
    let (l, up) = loss.part(&out, target.real);
    grad.loss += l;
    model.real.backward(&inputs, up, &mut grad.real);
    if let (Some(branch), Some(g)) = (model.imag.as_ref(), grad.imag.as_mut()) {
        let t_im = target.imag.expect("complex target for complex map");
        let (inputs, out) = branch.forward_cached(v);
        let (l, up) = loss.part(&out, t_im);
        grad.loss += l;
        branch.backward(&inputs, up, g);
    }
    grad
}

/// Mean loss over the batch and its gradient. ComplEx targets contribute the
/// sum of the real-part and imaginary-part losses.
pub fn loss_and_gradient(
    model: &MapModel,
    inputs: &[&[f64]],
    targets: &[EmbeddingRef<'_>],
    loss: MapLoss,
) -> MapGradient {
    assert_eq!(inputs.len(), targets.len());
    let mut grad = MapGradient::zeros(model);
    let s = 1.0 / inputs.len().max(1) as f64;
    for (v, t) in inputs.iter().zip(targets) {
        grad.add_scaled(&example_gradient(model, v, *t, loss), s);
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapHyperParams {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub loss: MapLoss,
    /// MLP hidden width; `None` uses the graph embedding dimension.
    pub hidden: Option<usize>,
    /// Open-world validation every n epochs; 0 disables model selection.
    pub validate_every: usize,
    pub parallel: bool,
}

impl Default for MapHyperParams {
    fn default() -> Self {
        MapHyperParams {
            lr: 1e-3,
            batch_size: 128,
            epochs: 200,
            dropout: 0.0,
            loss: MapLoss::Squared,
            hidden: None,
            validate_every: 10,
            parallel: false,
        }
    }
}

impl MapHyperParams {
    pub fn validate(&self) -> Result<()> {
        AdamConfig::with_lr(self.lr).validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("map batch_size must be positive".into()));
        }
        Dropout::new(self.dropout)?;
        Ok(())
    }
}

/// Training pairs: word sequences (re-aggregated each epoch under dropout)
/// and frozen graph embeddings.
#[derive(Debug, Clone)]
pub struct MapTrainSet {
    pub entities: Vec<EntityId>,
    pub tokens: Vec<TokenSequence>,
    pub targets: Vec<Embedding>,
}

impl MapTrainSet {
    /// Every known entity with usable metadata, in id order.
    pub fn build(
        kgc: &KgcModel,
        graph: &KnowledgeGraph,
        metadata: &Metadata,
        store: &WordEmbeddingStore,
    ) -> Self {
        let mut set = MapTrainSet {
            entities: Vec::new(),
            tokens: Vec::new(),
            targets: Vec::new(),
        };
        for e in 0..graph.num_entities().min(kgc.num_entities()) {
            let id = EntityId(e as u32);
            let seq = entity_tokens(metadata.for_entity(graph, id), store);
            if seq.is_empty() {
                continue;
            }
            set.entities.push(id);
            set.tokens.push(seq);
            set.targets.push(kgc.entity(id).to_owned());
        }
        set
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedMap {
    pub model: MapModel,
    pub log: Vec<MapEpochLog>,
    pub best_epoch: usize,
}

/// Fits a map from text embeddings to the KGC model's entity embeddings.
///
/// The graph's validation split is used for open-world model selection
/// (filtered tail MRR) when it is non-empty and `validate_every > 0`.
pub fn train_map(
    kgc: &KgcModel,
    graph: &KnowledgeGraph,
    metadata: &Metadata,
    store: &WordEmbeddingStore,
    kind: MapKind,
    hyper: &MapHyperParams,
    seed: u64,
) -> Result<TrainedMap> {
    let set = MapTrainSet::build(kgc, graph, metadata, store);
    let valid = graph.valid().to_vec();
    let select = hyper.validate_every > 0 && !valid.is_empty();
    let filter = crate::graph::build_filter_index(graph, &EvalConfig::default().filter_splits);
    let mut validate = |map: &MapModel| -> f64 {
        let enc = TextEncoder::new(map, metadata, store);
        eval::evaluate_triples_with_text(kgc, &enc, graph, &valid, &filter, &EvalConfig::default())
            .aggregate
            .mrr_filtered
    };
    train_map_on(
        &set,
        kgc.family.is_complex(),
        kind,
        hyper,
        seed,
        select.then_some(&mut validate as &mut dyn FnMut(&MapModel) -> f64),
    )
}

/// Training loop over a prepared set; `validate` returns a score to maximize.
pub fn train_map_on(
    set: &MapTrainSet,
    complex: bool,
    kind: MapKind,
    hyper: &MapHyperParams,
    seed: u64,
    mut validate: Option<&mut dyn FnMut(&MapModel) -> f64>,
) -> Result<TrainedMap> {
    hyper.validate()?;
    if set.is_empty() {
        return Err(Error::Empty(
            "no training entity has textual metadata to learn the map from".into(),
        ));
    }
    let input_dim = set.tokens[0].dim();
    let output_dim = set.targets[0].real.len();
    let hidden = hyper.hidden.unwrap_or(output_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MapModel::new(kind, input_dim, output_dim, complex, hidden, &mut rng);
    let mut adam = Adam::new(AdamConfig::with_lr(hyper.lr));
    let mut moments = Moments::zeros(model.num_params());
    let dropout = Dropout::new(hyper.dropout)?;

    let embed_all = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        set.tokens
            .iter()
            .map(|seq| {
                aggregate(seq, dropout, rng)
                    .expect("non-empty sequence")
                    .vector
            })
            .collect()
    };
    let mut inputs = embed_all(&mut rng);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut log = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, MapModel)> = None;

    for epoch in 1..=hyper.epochs {
        if dropout.rate > 0.0 && epoch > 1 {
            inputs = embed_all(&mut rng);
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let grads: Vec<MapGradient> = if hyper.parallel {
                batch
                    .par_iter()
                    .map(|&i| {
                        example_gradient(&model, &inputs[i], set.targets[i].as_ref(), hyper.loss)
                    })
                    .collect()
            } else {
                batch
                    .iter()
                    .map(|&i| {
                        example_gradient(&model, &inputs[i], set.targets[i].as_ref(), hyper.loss)
                    })
                    .collect()
            };
            let mut grad = MapGradient::zeros(&model);
            let s = 1.0 / batch.len() as f64;
            for g in &grads {
                grad.add_scaled(g, s);
            }
            epoch_loss += grad.loss * batch.len() as f64;
            let mut params = model.params();
            adam.begin_step();
            adam.update(&mut params, &grad.flatten(), &mut moments, 0);
            model.set_params(&params);
        }
        let loss = epoch_loss / set.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Config(format!(
                "map training diverged at epoch {epoch}"
            )));
        }
        let valid_mrr = match validate.as_mut() {
            Some(f) if epoch % hyper.validate_every.max(1) == 0 || epoch == hyper.epochs => {
                Some(f(&model))
            }
            _ => None,
        };
        log::info!("map epoch {epoch}: loss {loss:.6} valid_mrr {valid_mrr:?}");
        if let Some(mrr) = valid_mrr {
            if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                best = Some((mrr, epoch, model.clone()));
            }
        }
        log.push(MapEpochLog {
            epoch,
            loss,
            valid_mrr,
        });
    }
    let mut best_epoch = hyper.epochs;
    if let Some((_, epoch, m)) = best {
        model = m;
        best_epoch = epoch;
    }
    Ok(TrainedMap {
        model,
        log,
        best_epoch,
    })
}

/// Mean squared-distance (or Euclidean) loss of `model` over a whole set,
/// evaluated without dropout.
pub fn dataset_loss(model: &MapModel, set: &MapTrainSet, loss: MapLoss) -> f64 {
    let mut total = 0.0;
    for (seq, target) in set.tokens.iter().zip(&set.targets) {
        let v = aggregate(seq, Dropout::NONE, &mut ChaCha8Rng::seed_from_u64(0))
            .expect("non-empty sequence")
            .vector;
        let out = model.map(&v).expect("input dimension");
        total += loss.part(&out.real, &target.real).0;
        if let (Some(o), Some(t)) = (out.imag.as_ref(), target.imag.as_ref()) {
            total += loss.part(o, t).0;
        }
    }
    total / set.len().max(1) as f64
}

/// Turns entity text into graph-space query embeddings (no dropout).
#[derive(Clone, Copy)]
pub struct TextEncoder<'a> {
    pub map: &'a MapModel,
    pub metadata: &'a Metadata,
    pub store: &'a WordEmbeddingStore,
}

impl<'a> TextEncoder<'a> {
    pub fn new(map: &'a MapModel, metadata: &'a Metadata, store: &'a WordEmbeddingStore) -> Self {
        TextEncoder {
            map,
            metadata,
            store,
        }
    }

    pub fn encode_text(&self, meta: Option<&EntityText>) -> Result<Embedding> {
        let seq = entity_tokens(meta, self.store);
        if seq.is_empty() {
            return Err(Error::Empty("no text for open-world entity".into()));
        }
        let v = aggregate(&seq, Dropout::NONE, &mut ChaCha8Rng::seed_from_u64(0))?;
        self.map.map(&v.vector)
    }

    pub fn encode(&self, graph: &KnowledgeGraph, e: EntityId) -> Result<Embedding> {
        self.encode_text(self.metadata.for_entity(graph, e))
    }
}

/// Tail scores for an entity known only by its text: φ(Ψ(v_h), u_r, u_t).
pub fn score_open_world(
    kgc: &KgcModel,
    map: &MapModel,
    meta: Option<&EntityText>,
    store: &WordEmbeddingStore,
    r: RelationId,
) -> Result<Vec<f64>> {
    let empty = Metadata::new();
    let h = TextEncoder::new(map, &empty, store).encode_text(meta)?;
    check_map_target(kgc, map)?;
    Ok(kgc.score_all_tails(h.as_ref(), r))
}

/// Head scores for an open-world tail entity.
pub fn score_open_world_heads(
    kgc: &KgcModel,
    map: &MapModel,
    meta: Option<&EntityText>,
    store: &WordEmbeddingStore,
    r: RelationId,
) -> Result<Vec<f64>> {
    let empty = Metadata::new();
    let t = TextEncoder::new(map, &empty, store).encode_text(meta)?;
    check_map_target(kgc, map)?;
    Ok(kgc.score_all_heads(r, t.as_ref()))
}

pub fn check_map_target(kgc: &KgcModel, map: &MapModel) -> Result<()> {
    if map.output_dim() != kgc.dim() {
        return Err(Error::Dimension {
            expected: kgc.dim(),
            actual: map.output_dim(),
        });
    }
    if map.is_complex() != kgc.family.is_complex() {
        return Err(Error::Config(format!(
            "map complex flag ({}) does not match {} model",
            map.is_complex(),
            kgc.family
        )));
    }
    Ok(())
}

pub fn write_map_log(path: impl AsRef<Path>, log: &[MapEpochLog]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch\tloss\tvalid_mrr").map_err(io)?;
    for e in log {
        let mrr = e
            .valid_mrr
            .map_or_else(|| "-".to_string(), |m| format!("{m:.6}"));
        writeln!(w, "{}\t{:.8}\t{}", e.epoch, e.loss, mrr).map_err(io)?;
    }
    w.flush().map_err(io)
}

const MAP_MAGIC: &str = "owe-map-checkpoint v1";

pub fn save_map(model: &MapModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let widths: Vec<String> = model.widths().iter().map(usize::to_string).collect();
    writeln!(w, "{MAP_MAGIC}").map_err(io)?;
    writeln!(w, "kind {}", model.kind).map_err(io)?;
    writeln!(w, "input_dim {}", model.input_dim).map_err(io)?;
    writeln!(w, "output_dim {}", model.output_dim).map_err(io)?;
    writeln!(w, "complex {}", u8::from(model.is_complex())).map_err(io)?;
    writeln!(w, "widths {}", widths.join(" ")).map_err(io)?;
    writeln!(w, "end").map_err(io)?;
    write_f32_block(&mut w, &model.params()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_map(path: impl AsRef<Path>) -> Result<MapModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header: BTreeMap<String, String> = read_header(&mut r, MAP_MAGIC, path)?;
    let bad = |k: &str| Error::Checkpoint(format!("{}: bad or missing `{k}`", path.display()));
    let get = |k: &str| header.get(k).map(String::as_str).ok_or_else(|| bad(k));
    let kind: MapKind = get("kind")?.parse()?;
    let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(k));
    let (input_dim, output_dim) = (num("input_dim")?, num("output_dim")?);
    let complex = num("complex")? == 1;
    let widths: Vec<usize> = get("widths")?
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| bad("widths")))
        .collect::<Result<_>>()?;
    let expected_layers = if kind == MapKind::Mlp { MLP_LAYERS } else { 1 };
    if widths.len() != expected_layers + 1
        || widths[0] != input_dim
        || widths[widths.len() - 1] != output_dim
    {
        return Err(bad("widths"));
    }
    let hidden = if kind == MapKind::Mlp { widths[1] } else { 0 };
    if kind == MapKind::Mlp && widths[1..MLP_LAYERS].iter().any(|&w| w != hidden) {
        return Err(bad("widths"));
    }
    let mut model = MapModel::new(
        kind,
        input_dim,
        output_dim,
        complex,
        hidden,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let params = read_f32_block(&mut r, model.num_params()).map_err(|e| Error::io(path, e))?;
    model.set_params(&params);
    Ok(model)
}

/// Runs an open-world evaluation of a map on the graph's test split.
pub fn evaluate_map(
    kgc: &KgcModel,
    map: &MapModel,
    graph: &KnowledgeGraph,
    metadata: &Metadata,
    store: &WordEmbeddingStore,
    config: &EvalConfig,
) -> Result<RankingReport> {
    check_map_target(kgc, map)?;
    let enc = TextEncoder::new(map, metadata, store);
    eval::evaluate(kgc, Some(&enc), graph, config)
}
