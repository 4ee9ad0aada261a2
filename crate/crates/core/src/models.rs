//! Closed-world link prediction models: TransE, DistMult and ComplEx.
//!
//! Every scoring path goes through [`phi`], so a full score vector is
//! bit-identical to the per-triple scores it is made of. Scoring takes the
//! head (or tail) as an explicit embedding, which is what lets a mapped text
//! embedding stand in for an entity that has no graph embedding.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::{Adam, AdamConfig, Moments};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    TransE,
    DistMult,
    ComplEx,
}

impl Family {
    pub fn is_complex(self) -> bool {
        matches!(self, Family::ComplEx)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::TransE => "transe",
            Family::DistMult => "distmult",
            Family::ComplEx => "complex",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Family::TransE),
            "distmult" => Ok(Family::DistMult),
            "complex" => Ok(Family::ComplEx),
            other => Err(Error::Config(format!("unknown model family `{other}`"))),
        }
    }
}

/// Borrowed embedding of one entity or relation.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingRef<'a> {
    pub real: &'a [f64],
    pub imag: Option<&'a [f64]>,
}

/// Owned embedding, e.g. the output of a text-to-graph map.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub real: Vec<f64>,
    pub imag: Option<Vec<f64>>,
}

impl Embedding {
    pub fn real(real: Vec<f64>) -> Self {
        Embedding { real, imag: None }
    }

    pub fn complex(real: Vec<f64>, imag: Vec<f64>) -> Self {
        Embedding {
            real,
            imag: Some(imag),
        }
    }

    pub fn as_ref(&self) -> EmbeddingRef<'_> {
        EmbeddingRef {
            real: &self.real,
            imag: self.imag.as_deref(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.real
            .iter()
            .chain(self.imag.iter().flatten())
            .all(|v| v.is_finite())
    }
}

impl<'a> EmbeddingRef<'a> {
    pub fn to_owned(self) -> Embedding {
        Embedding {
            real: self.real.to_vec(),
            imag: self.imag.map(<[f64]>::to_vec),
        }
    }
}

/// Scoring function φ(u_h, u_r, u_t); higher means more plausible.
///
/// Embeddings must already agree in dimension and, for ComplEx, carry
/// imaginary parts.
pub fn phi(family: Family, h: EmbeddingRef<'_>, r: EmbeddingRef<'_>, t: EmbeddingRef<'_>) -> f64 {
    match family {
        Family::TransE => {
            let mut sq = 0.0;
            for i in 0..h.real.len() {
                let x = (h.real[i] + r.real[i]) - t.real[i];
                sq += x * x;
            }
            -sq.sqrt()
        }
        // (h·t)·r keeps the product symmetric in h and t bit for bit.
        Family::DistMult => {
            let mut s = 0.0;
            for i in 0..h.real.len() {
                s += (h.real[i] * t.real[i]) * r.real[i];
            }
            s
        }
        Family::ComplEx => {
            let (hi, ri, ti) = (
                h.imag.expect("complex head"),
                r.imag.expect("complex relation"),
                t.imag.expect("complex tail"),
            );
            let mut s = 0.0;
            for i in 0..h.real.len() {
                let (a, b, c) = (h.real[i], r.real[i], t.real[i]);
                let (a2, b2, c2) = (hi[i], ri[i], ti[i]);
                s += (((a * c) * b + (a2 * c2) * b) + (a * c2) * b2) - (a2 * c) * b2;
            }
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    pub entity_real: Matrix,
    pub relation_real: Matrix,
    pub entity_imag: Option<Matrix>,
    pub relation_imag: Option<Matrix>,
}

impl EmbeddingTable {
    pub fn zeros(num_entities: usize, num_relations: usize, dim: usize, complex: bool) -> Self {
        EmbeddingTable {
            dim,
            entity_real: Matrix::zeros(num_entities, dim),
            relation_real: Matrix::zeros(num_relations, dim),
            entity_imag: complex.then(|| Matrix::zeros(num_entities, dim)),
            relation_imag: complex.then(|| Matrix::zeros(num_relations, dim)),
        }
    }

    /// Uniform init with bound √(3/d), i.e. Xavier-uniform for a d×d fan.
    pub fn random<R: Rng + ?Sized>(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        complex: bool,
        rng: &mut R,
    ) -> Self {
        let bound = (3.0 / dim as f64).sqrt();
        let entity_real = Matrix::uniform(num_entities, dim, bound, rng);
        let relation_real = Matrix::uniform(num_relations, dim, bound, rng);
        let entity_imag = complex.then(|| Matrix::uniform(num_entities, dim, bound, rng));
        let relation_imag = complex.then(|| Matrix::uniform(num_relations, dim, bound, rng));
        EmbeddingTable {
            dim,
            entity_real,
            relation_real,
            entity_imag,
            relation_imag,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entity_real.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_real.rows()
    }

    pub fn is_complex(&self) -> bool {
        self.entity_imag.is_some()
    }

    pub fn entity(&self, e: EntityId) -> EmbeddingRef<'_> {
        EmbeddingRef {
            real: self.entity_real.row(e.index()),
            imag: self.entity_imag.as_ref().map(|m| m.row(e.index())),
        }
    }

    pub fn relation(&self, r: RelationId) -> EmbeddingRef<'_> {
        EmbeddingRef {
            real: self.relation_real.row(r.index()),
            imag: self.relation_imag.as_ref().map(|m| m.row(r.index())),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entity_real.is_finite()
            && self.relation_real.is_finite()
            && self.entity_imag.as_ref().is_none_or(Matrix::is_finite)
            && self.relation_imag.as_ref().is_none_or(Matrix::is_finite)
    }

    pub fn param(&self, p: Param) -> Option<&Matrix> {
        match p {
            Param::EntityReal => Some(&self.entity_real),
            Param::RelationReal => Some(&self.relation_real),
            Param::EntityImag => self.entity_imag.as_ref(),
            Param::RelationImag => self.relation_imag.as_ref(),
        }
    }

    pub fn param_mut(&mut self, p: Param) -> Option<&mut Matrix> {
        match p {
            Param::EntityReal => Some(&mut self.entity_real),
            Param::RelationReal => Some(&mut self.relation_real),
            Param::EntityImag => self.entity_imag.as_mut(),
            Param::RelationImag => self.relation_imag.as_mut(),
        }
    }

    fn normalize_entities(&mut self) {
        for e in 0..self.entity_real.rows() {
            let row = self.entity_real.row_mut(e);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgcHyperParams {
    pub dim: usize,
    pub lr: f64,
    /// Margin of the TransE ranking loss.
    pub margin: f64,
    /// L2 weight for DistMult/ComplEx.
    pub reg: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Closed-world validation every n epochs; 0 disables model selection.
    pub validate_every: usize,
    /// Computes per-example gradients of a batch on the rayon pool. The
    /// reduction is ordered, so results match the sequential mode.
    pub parallel: bool,
}

impl Default for KgcHyperParams {
    fn default() -> Self {
        KgcHyperParams {
            dim: 300,
            lr: 1e-3,
            margin: 1.0,
            reg: 1e-3,
            negatives: 1,
            epochs: 100,
            batch_size: 128,
            validate_every: 10,
            parallel: false,
        }
    }
}

impl KgcHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.margin <= 0.0 {
            return Err(Error::Config("margin must be positive".into()));
        }
        if self.reg < 0.0 {
            return Err(Error::Config("reg must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgcModel {
    pub family: Family,
    pub embeddings: EmbeddingTable,
    pub hyper: KgcHyperParams,
}

impl KgcModel {
    pub fn new<R: Rng + ?Sized>(
        family: Family,
        num_entities: usize,
        num_relations: usize,
        hyper: KgcHyperParams,
        rng: &mut R,
    ) -> Self {
        let mut embeddings = EmbeddingTable::random(
            num_entities,
            num_relations,
            hyper.dim,
            family.is_complex(),
            rng,
        );
        if family == Family::TransE {
            embeddings.normalize_entities();
        }
        KgcModel {
            family,
            embeddings,
            hyper,
        }
    }

    pub fn from_table(family: Family, embeddings: EmbeddingTable) -> Self {
        assert_eq!(
            family.is_complex(),
            embeddings.is_complex(),
            "imag parts iff ComplEx"
        );
        let hyper = KgcHyperParams {
            dim: embeddings.dim(),
            ..KgcHyperParams::default()
        };
        KgcModel {
            family,
            embeddings,
            hyper,
        }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn num_entities(&self) -> usize {
        self.embeddings.num_entities()
    }

    pub fn entity(&self, e: EntityId) -> EmbeddingRef<'_> {
        self.embeddings.entity(e)
    }

    pub fn relation(&self, r: RelationId) -> EmbeddingRef<'_> {
        self.embeddings.relation(r)
    }

    fn check_query(&self, q: EmbeddingRef<'_>) {
        assert_eq!(q.real.len(), self.dim(), "query embedding dimension");
        match (self.family.is_complex(), q.imag) {
            (true, Some(im)) => assert_eq!(im.len(), self.dim(), "query imaginary dimension"),
            (true, None) => panic!("ComplEx query embedding needs an imaginary part"),
            (false, _) => {}
        }
    }

    /// φ(h, u_r, u_t) for an explicit head embedding.
    pub fn score(&self, h: EmbeddingRef<'_>, r: RelationId, t: EntityId) -> f64 {
        self.check_query(h);
        phi(self.family, h, self.relation(r), self.entity(t))
    }

    pub fn score_triple(&self, t: &Triple) -> f64 {
        phi(
            self.family,
            self.entity(t.head),
            self.relation(t.rel),
            self.entity(t.tail),
        )
    }

    /// Scores of `h` against every known entity as tail.
    pub fn score_all_tails(&self, h: EmbeddingRef<'_>, r: RelationId) -> Vec<f64> {
        self.check_query(h);
        let rel = self.relation(r);
        (0..self.num_entities())
            .map(|t| phi(self.family, h, rel, self.entity(EntityId(t as u32))))
            .collect()
    }

    /// Scores of every known entity as head against tail embedding `t`.
    pub fn score_all_heads(&self, r: RelationId, t: EmbeddingRef<'_>) -> Vec<f64> {
        self.check_query(t);
        let rel = self.relation(r);
        (0..self.num_entities())
            .map(|h| phi(self.family, self.entity(EntityId(h as u32)), rel, t))
            .collect()
    }
}

/// Parameter blocks of an [`EmbeddingTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    EntityReal,
    EntityImag,
    RelationReal,
    RelationImag,
}

impl Param {
    pub const ALL: [Param; 4] = [
        Param::EntityReal,
        Param::EntityImag,
        Param::RelationReal,
        Param::RelationImag,
    ];
}

/// Row-sparse gradient of the training loss plus the loss value itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGradient {
    pub loss: f64,
    rows: BTreeMap<(Param, u32), Vec<f64>>,
}

impl SparseGradient {
    pub fn row(&self, p: Param, index: u32) -> Option<&[f64]> {
        self.rows.get(&(p, index)).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = ((Param, u32), &[f64])> {
        self.rows.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    fn add(&mut self, p: Param, index: u32, coeff: f64, values: &[f64]) {
        let row = self
            .rows
            .entry((p, index))
            .or_insert_with(|| vec![0.0; values.len()]);
        for (g, v) in row.iter_mut().zip(values) {
            *g += coeff * v;
        }
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &SparseGradient, scale: f64) {
        self.loss += scale * other.loss;
        for (&(p, i), v) in &other.rows {
            self.add(p, i, scale, v);
        }
    }
}

/// Adds `coeff · ∂φ/∂θ` for the triple to `grad`.
fn add_score_gradient(model: &KgcModel, t: &Triple, coeff: f64, grad: &mut SparseGradient) {
    let d = model.dim();
    let h = model.entity(t.head);
    let r = model.relation(t.rel);
    let tl = model.entity(t.tail);
    let (hi, ri, ti) = (t.head.0, t.rel.0, t.tail.0);
    match model.family {
        Family::TransE => {
            let x: Vec<f64> = (0..d)
                .map(|i| (h.real[i] + r.real[i]) - tl.real[i])
                .collect();
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                // subgradient of the norm at the origin
                return;
            }
            let dir: Vec<f64> = x.iter().map(|v| v / n).collect();
            grad.add(Param::EntityReal, hi, -coeff, &dir);
            grad.add(Param::RelationReal, ri, -coeff, &dir);
            grad.add(Param::EntityReal, ti, coeff, &dir);
        }
        Family::DistMult => {
            let dh: Vec<f64> = (0..d).map(|i| tl.real[i] * r.real[i]).collect();
            let dr: Vec<f64> = (0..d).map(|i| h.real[i] * tl.real[i]).collect();
            let dt: Vec<f64> = (0..d).map(|i| h.real[i] * r.real[i]).collect();
            grad.add(Param::EntityReal, hi, coeff, &dh);
            grad.add(Param::RelationReal, ri, coeff, &dr);
            grad.add(Param::EntityReal, ti, coeff, &dt);
        }
        Family::ComplEx => {
            let (a, b, c) = (h.real, r.real, tl.real);
            let (a2, b2, c2) = (h.imag.unwrap(), r.imag.unwrap(), tl.imag.unwrap());
            let g = |f: &dyn Fn(usize) -> f64| (0..d).map(f).collect::<Vec<f64>>();
            grad.add(
                Param::EntityReal,
                hi,
                coeff,
                &g(&|i| c[i] * b[i] + c2[i] * b2[i]),
            );
            grad.add(
                Param::EntityImag,
                hi,
                coeff,
                &g(&|i| c2[i] * b[i] - c[i] * b2[i]),
            );
            grad.add(
                Param::RelationReal,
                ri,
                coeff,
                &g(&|i| a[i] * c[i] + a2[i] * c2[i]),
            );
            grad.add(
                Param::RelationImag,
                ri,
                coeff,
                &g(&|i| a[i] * c2[i] - a2[i] * c[i]),
            );
            grad.add(
                Param::EntityReal,
                ti,
                coeff,
                &g(&|i| a[i] * b[i] - a2[i] * b2[i]),
            );
            grad.add(
                Param::EntityImag,
                ti,
                coeff,
                &g(&|i| a2[i] * b[i] + a[i] * b2[i]),
            );
        }
    }
}

fn add_l2_gradient(model: &KgcModel, t: &Triple, weight: f64, grad: &mut SparseGradient) -> f64 {
    let mut loss = 0.0;
    let blocks = [
        (Param::EntityReal, t.head.0),
        (Param::EntityImag, t.head.0),
        (Param::RelationReal, t.rel.0),
        (Param::RelationImag, t.rel.0),
        (Param::EntityReal, t.tail.0),
        (Param::EntityImag, t.tail.0),
    ];
    for (p, i) in blocks {
        if let Some(m) = model.embeddings.param(p) {
            let row = m.row(i as usize);
            loss += weight * row.iter().map(|v| v * v).sum::<f64>();
            grad.add(p, i, 2.0 * weight, row);
        }
    }
    loss
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss of one positive against its negatives, and its gradient.
///
/// * TransE: `Σ_j max(0, margin − φ(pos) + φ(neg_j))`.
/// * DistMult / ComplEx: `softplus(−φ(pos)) + Σ_j softplus(φ(neg_j))` plus
///   `reg · ‖θ‖²` over the embeddings of every triple involved.
pub fn gradients(model: &KgcModel, positive: &Triple, negatives: &[Triple]) -> SparseGradient {
    let mut grad = SparseGradient::default();
    match model.family {
        Family::TransE => {
            let pos = model.score_triple(positive);
            for neg in negatives {
                let violation = model.hyper.margin - pos + model.score_triple(neg);
                if violation > 0.0 {
                    grad.loss += violation;
                    add_score_gradient(model, positive, -1.0, &mut grad);
                    add_score_gradient(model, neg, 1.0, &mut grad);
                }
            }
        }
        Family::DistMult | Family::ComplEx => {
            let reg = model.hyper.reg;
            let pos = model.score_triple(positive);
            grad.loss += softplus(-pos);
            add_score_gradient(model, positive, -sigmoid(-pos), &mut grad);
            if reg > 0.0 {
                grad.loss += add_l2_gradient(model, positive, reg, &mut grad);
            }
            for neg in negatives {
                let s = model.score_triple(neg);
                grad.loss += softplus(s);
                add_score_gradient(model, neg, sigmoid(s), &mut grad);
                if reg > 0.0 {
                    grad.loss += add_l2_gradient(model, neg, reg, &mut grad);
                }
            }
        }
    }
    grad
}

/// Corrupts head or tail (fair coin) with a uniformly drawn entity.
pub fn corrupt<R: Rng + ?Sized>(t: &Triple, num_entities: usize, rng: &mut R) -> Triple {
    let corrupt_head = rng.gen_bool(0.5);
    let mut out = *t;
    for _ in 0..16 {
        let e = EntityId(rng.gen_range(0..num_entities) as u32);
        if corrupt_head {
            out.head = e;
        } else {
            out.tail = e;
        }
        if out != *t {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedKgc {
    pub model: KgcModel,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
}

/// Trains a closed-world model with mini-batch Adam and negative sampling.
///
/// When the graph has a validation split and `validate_every > 0`, the
/// parameters with the best filtered validation MRR are returned.
pub fn train_kgc(
    graph: &KnowledgeGraph,
    family: Family,
    hyper: &KgcHyperParams,
    seed: u64,
) -> Result<TrainedKgc> {
    hyper.validate()?;
    if graph.train().is_empty() {
        return Err(Error::Empty("training split has no triples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = KgcModel::new(
        family,
        graph.num_entities(),
        graph.num_relations(),
        hyper.clone(),
        &mut rng,
    );
    let mut adam = Adam::new(AdamConfig::with_lr(hyper.lr));
    let mut moments: BTreeMap<Param, Moments> = Param::ALL
        .iter()
        .filter_map(|&p| {
            model
                .embeddings
                .param(p)
                .map(|m| (p, Moments::zeros(m.as_slice().len())))
        })
        .collect();

    let valid: Vec<Triple> = graph
        .valid()
        .iter()
        .copied()
        .filter(|t| graph.is_known(t.head) && graph.is_known(t.tail))
        .collect();
    let select = hyper.validate_every > 0 && !valid.is_empty();
    let eval_config = EvalConfig::default();
    let filter = crate::graph::build_filter_index(graph, &eval_config.filter_splits);

    let mut best: Option<(f64, usize, EmbeddingTable)> = None;
    let mut log = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<usize> = (0..graph.train().len()).collect();

    for epoch in 1..=hyper.epochs {
        if family == Family::TransE {
            model.embeddings.normalize_entities();
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let samples: Vec<(Triple, Vec<Triple>)> = batch
                .iter()
                .map(|&i| {
                    let pos = graph.train()[i];
                    let negs = (0..hyper.negatives)
                        .map(|_| corrupt(&pos, graph.num_entities(), &mut rng))
                        .collect();
                    (pos, negs)
                })
                .collect();
            let per_example: Vec<SparseGradient> = if hyper.parallel {
                samples
                    .par_iter()
                    .map(|(p, n)| gradients(&model, p, n))
                    .collect()
            } else {
                samples
                    .iter()
                    .map(|(p, n)| gradients(&model, p, n))
                    .collect()
            };
            let scale = 1.0 / batch.len() as f64;
            let mut grad = SparseGradient::default();
            for g in &per_example {
                grad.accumulate(g, scale);
            }
            epoch_loss += grad.loss * batch.len() as f64;
            adam.begin_step();
            for ((p, i), values) in grad.rows() {
                let m = model
                    .embeddings
                    .param_mut(p)
                    .expect("gradient for present block");
                let cols = m.cols();
                let moment = moments.get_mut(&p).expect("moments for present block");
                adam.update(m.row_mut(i as usize), values, moment, i as usize * cols);
            }
        }
        if !model.embeddings.is_finite() {
            return Err(Error::Config(format!(
                "training diverged at epoch {epoch} (non-finite embeddings); lower lr"
            )));
        }
        let loss = epoch_loss / graph.train().len() as f64;
        let valid_mrr = (select && (epoch % hyper.validate_every == 0 || epoch == hyper.epochs))
            .then(|| {
                eval::evaluate_triples(&model, graph, &valid, &filter, &eval_config)
                    .aggregate
                    .mrr_filtered
            });
        log::info!("kgc epoch {epoch}: loss {loss:.6} valid_mrr {valid_mrr:?}");
        if let Some(mrr) = valid_mrr {
            if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                best = Some((mrr, epoch, model.embeddings.clone()));
            }
        }
        log.push(EpochLog {
            epoch,
            loss,
            valid_mrr,
        });
    }

    let mut best_epoch = hyper.epochs;
    if let Some((_, epoch, table)) = best {
        model.embeddings = table;
        best_epoch = epoch;
    }
    Ok(TrainedKgc {
        model,
        log,
        best_epoch,
    })
}

pub fn write_training_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
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

const KGC_MAGIC: &str = "owe-kgc-checkpoint v1";

/// Writes the text header followed by little-endian `f32` blocks:
/// entity real, relation real, then (ComplEx) entity imag, relation imag.
pub fn save_checkpoint(model: &KgcModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let t = &model.embeddings;
    writeln!(w, "{KGC_MAGIC}").map_err(io)?;
    writeln!(w, "family {}", model.family).map_err(io)?;
    writeln!(w, "entities {}", t.num_entities()).map_err(io)?;
    writeln!(w, "relations {}", t.num_relations()).map_err(io)?;
    writeln!(w, "dim {}", t.dim()).map_err(io)?;
    writeln!(w, "complex {}", u8::from(t.is_complex())).map_err(io)?;
    writeln!(w, "end").map_err(io)?;
    let mut blocks = vec![&t.entity_real, &t.relation_real];
    blocks.extend(t.entity_imag.iter());
    blocks.extend(t.relation_imag.iter());
    for m in blocks {
        write_f32_block(&mut w, m.as_slice()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<KgcModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r, KGC_MAGIC, path)?;
    let get = |k: &str| -> Result<&str> {
        header.get(k).map(String::as_str).ok_or_else(|| {
            Error::Checkpoint(format!("{}: missing header key `{k}`", path.display()))
        })
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("{}: bad value for `{k}`", path.display())))
    };
    let family: Family = get("family")?.parse()?;
    let (ne, nr, dim) = (num("entities")?, num("relations")?, num("dim")?);
    let complex = num("complex")? == 1;
    if complex != family.is_complex() {
        return Err(Error::Checkpoint(format!(
            "{}: complex flag disagrees with family {family}",
            path.display()
        )));
    }
    let io = |e| Error::io(path, e);
    let entity_real = Matrix::from_vec(ne, dim, read_f32_block(&mut r, ne * dim).map_err(io)?);
    let relation_real = Matrix::from_vec(nr, dim, read_f32_block(&mut r, nr * dim).map_err(io)?);
    let (entity_imag, relation_imag) = if complex {
        (
            Some(Matrix::from_vec(
                ne,
                dim,
                read_f32_block(&mut r, ne * dim).map_err(io)?,
            )),
            Some(Matrix::from_vec(
                nr,
                dim,
                read_f32_block(&mut r, nr * dim).map_err(io)?,
            )),
        )
    } else {
        (None, None)
    };
    let table = EmbeddingTable {
        dim,
        entity_real,
        relation_real,
        entity_imag,
        relation_imag,
    };
    Ok(KgcModel::from_table(family, table))
}

pub(crate) fn write_f32_block<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f32_block<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Reads `key value` lines after the magic line up to `end`.
pub(crate) fn read_header<R: BufRead>(
    r: &mut R,
    magic: &str,
    path: &Path,
) -> Result<BTreeMap<String, String>> {
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::Checkpoint(format!(
                "{}: truncated header",
                path.display()
            )));
        }
        Ok(())
    };
    read_line(&mut line)?;
    if line.trim_end() != magic {
        return Err(Error::Checkpoint(format!(
            "{}: expected `{magic}` header",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    loop {
        read_line(&mut line)?;
        let l = line.trim_end();
        if l == "end" {
            return Ok(out);
        }
        let (k, v) = l.split_once(' ').unwrap_or((l, ""));
        out.insert(k.to_owned(), v.to_owned());
    }
}
