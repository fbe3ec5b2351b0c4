//! GNN fraud detectors: a message-passing encoder (GCN or mean-aggregator
//! SAGE) followed by an MLP head producing raw 2-class scores.
//!
//! The forward pass is built on the autodiff tape in two propagation modes:
//! `Prop::Clean` uses precomputed sparse operators for a fixed graph, and
//! `Prop::Weighted` treats a set of injected edges as differentiable weights
//! so an attack can push gradients through the perturbed structure. Both
//! modes share the same layer code, so scores agree when every weight is 1.

use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{SparseMat, Tape, Var};

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::graph::{AttributedGraph, Split};
use crate::nn::{Adam, BoundLinear, BoundMlp, Linear, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorArch {
    Gcn,
    Sage,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub architecture: DetectorArch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub head_layers: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            architecture: DetectorArch::Gcn,
            num_layers: 2,
            hidden_dim: 64,
            head_layers: 2,
            learning_rate: 0.01,
            weight_decay: 0.001,
            max_epochs: 1000,
            validate_every: 10,
            patience: 100,
            class_weighting: true,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.head_layers == 0 {
            return Err(Error::Config("detector dims and layer counts must be positive".into()));
        }
        if self.validate_every == 0 {
            return Err(Error::Config("validate_every must be at least 1".into()));
        }
        if self.patience > self.max_epochs && self.max_epochs > 0 {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ValRecord {
    pub epoch: usize,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug)]
enum GnnLayer {
    Gcn(Linear),
    Sage { self_lin: Linear, nbr_lin: Linear },
}

impl GnnLayer {
    fn params(&self) -> Vec<&Array2<f64>> {
        match self {
            GnnLayer::Gcn(l) => l.params(),
            GnnLayer::Sage { self_lin, nbr_lin } => {
                let mut p = self_lin.params();
                p.extend(nbr_lin.params());
                p
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            GnnLayer::Gcn(l) => l.params_mut(),
            GnnLayer::Sage { self_lin, nbr_lin } => {
                let mut p = self_lin.params_mut();
                p.extend(nbr_lin.params_mut());
                p
            }
        }
    }

    fn bind(&self, tape: &Tape, trainable: bool) -> BoundGnnLayer {
        match self {
            GnnLayer::Gcn(l) => BoundGnnLayer::Gcn(l.bind(tape, trainable)),
            GnnLayer::Sage { self_lin, nbr_lin } => BoundGnnLayer::Sage {
                self_lin: self_lin.bind(tape, trainable),
                nbr_lin: nbr_lin.bind(tape, trainable),
            },
        }
    }
}

/// Trained (or fresh) detector. The encoder output before the head is the
/// node representation used by the attack.
#[derive(Clone, Debug)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub input_dim: usize,
    layers: Vec<GnnLayer>,
    head: Mlp,
    pub training_log: Vec<ValRecord>,
}

impl DetectorModel {
    /// Randomly initialized model (deterministic in `config.seed`).
    pub fn new(config: DetectorConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let fan_in = if l == 0 { input_dim } else { config.hidden_dim };
            let layer = match config.architecture {
                DetectorArch::Gcn => GnnLayer::Gcn(Linear::new(&mut rng, fan_in, config.hidden_dim)),
                DetectorArch::Sage => GnnLayer::Sage {
                    self_lin: Linear::new(&mut rng, fan_in, config.hidden_dim),
                    nbr_lin: Linear::new(&mut rng, fan_in, config.hidden_dim),
                },
            };
            layers.push(layer);
        }
        let mut head_dims = vec![config.hidden_dim; config.head_layers];
        head_dims.push(2);
        let head = Mlp::new(&mut rng, &head_dims);
        Ok(DetectorModel {
            config,
            input_dim,
            layers,
            head,
            training_log: Vec::new(),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p: Vec<&Array2<f64>> = self.layers.iter().flat_map(GnnLayer::params).collect();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let (layers, head) = (&mut self.layers, &mut self.head);
        let mut p: Vec<&mut Array2<f64>> =
            layers.iter_mut().flat_map(GnnLayer::params_mut).collect();
        p.extend(head.params_mut());
        p
    }

    /// Registers all parameters on a tape in the same order as `params`.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundDetector {
        BoundDetector {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
            head: self.head.bind(tape, trainable),
        }
    }

    /// Raw 2-class scores for `nodes`; predicted label is the argmax with
    /// ties toward class 0.
    pub fn predict_scores(&self, graph: &AttributedGraph, nodes: &[usize]) -> Result<Array2<f64>> {
        let (_, scores) = self.forward_full(graph)?;
        gather(&scores, nodes, graph.num_nodes())
    }

    /// Encoder representations (before the head) for `nodes`.
    pub fn encode_nodes(&self, graph: &AttributedGraph, nodes: &[usize]) -> Result<Array2<f64>> {
        let (reps, _) = self.forward_full(graph)?;
        gather(&reps, nodes, graph.num_nodes())
    }

    /// Full-graph forward on a concrete graph: (representations, scores).
    pub fn forward_full(&self, graph: &AttributedGraph) -> Result<(Array2<f64>, Array2<f64>)> {
        if graph.attr_dim() != self.input_dim {
            return Err(Error::Input(format!(
                "graph attribute dimension {} does not match model input {}",
                graph.attr_dim(),
                self.input_dim
            )));
        }
        let prop = CleanProp::new(graph);
        let tape = Tape::new();
        let x = tape.constant(graph.attributes().clone());
        let bound = self.bind(&tape, false);
        let (reps, scores) = bound.forward(&tape, &Prop::Clean(&prop), x);
        Ok((tape.value(reps), tape.value(scores)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CheckpointFile {
            magic: MAGIC.into(),
            config: self.config.clone(),
            input_dim: self.input_dim,
            params: self.params().iter().map(|m| MatrixRepr::from(*m)).collect(),
            training_log: self.training_log.clone(),
        };
        let text = serde_json::to_string(&file).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: bad magic {:?}, expected {MAGIC:?}",
                path.display(),
                file.magic
            )));
        }
        let mut model = DetectorModel::new(file.config, file.input_dim)?;
        let mut params = model.params_mut();
        if params.len() != file.params.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} parameter arrays, expected {}",
                path.display(),
                file.params.len(),
                params.len()
            )));
        }
        for (slot, repr) in params.iter_mut().zip(&file.params) {
            let m = repr.to_array().map_err(|e| {
                Error::Checkpoint(format!("{}: {e}", path.display()))
            })?;
            if m.dim() != slot.dim() {
                return Err(Error::Checkpoint(format!(
                    "{}: parameter shape {:?}, expected {:?}",
                    path.display(),
                    m.dim(),
                    slot.dim()
                )));
            }
            **slot = m;
        }
        model.training_log = file.training_log;
        Ok(model)
    }
}

const MAGIC: &str = "GFDET1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    magic: String,
    config: DetectorConfig,
    input_dim: usize,
    params: Vec<MatrixRepr>,
    training_log: Vec<ValRecord>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixRepr {
    pub(crate) fn from(m: &Array2<f64>) -> Self {
        MatrixRepr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().cloned().collect(),
        }
    }

    pub(crate) fn to_array(&self) -> std::result::Result<Array2<f64>, String> {
        if self.data.len() != self.rows * self.cols {
            return Err(format!(
                "matrix data length {} does not match {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            ));
        }
        Ok(Array2::from_shape_vec((self.rows, self.cols), self.data.clone()).unwrap())
    }
}

fn gather(full: &Array2<f64>, nodes: &[usize], n: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((nodes.len(), full.ncols()));
    for (i, &v) in nodes.iter().enumerate() {
        if v >= n {
            return Err(Error::Input(format!("node index {v} outside 0..{n}")));
        }
        out.row_mut(i).assign(&full.row(v));
    }
    Ok(out)
}

/// Precomputed propagation operators for a fixed graph.
pub struct CleanProp {
    /// Symmetric-normalized adjacency with self-loops (GCN).
    pub gcn_norm: Rc<SparseMat>,
    /// Row-normalized adjacency without self-loops (SAGE mean); isolated
    /// nodes get an all-zero row.
    pub nbr_mean: Rc<SparseMat>,
}

impl CleanProp {
    pub fn new(graph: &AttributedGraph) -> Self {
        let n = graph.num_nodes();
        let mut gcn = Vec::with_capacity(2 * graph.num_edges() + n);
        let mut mean = Vec::with_capacity(2 * graph.num_edges());
        let dinv_sqrt: Vec<f64> = (0..n)
            .map(|v| 1.0 / ((graph.degree(v) + 1) as f64).sqrt())
            .collect();
        for v in 0..n {
            gcn.push((v, v, dinv_sqrt[v] * dinv_sqrt[v]));
            let deg = graph.degree(v);
            for &u in graph.neighbors(v) {
                gcn.push((v, u, dinv_sqrt[v] * dinv_sqrt[u]));
                mean.push((v, u, 1.0 / deg as f64));
            }
        }
        CleanProp {
            gcn_norm: Rc::new(SparseMat::from_triplets(n, n, &gcn)),
            nbr_mean: Rc::new(SparseMat::from_triplets(n, n, &mean)),
        }
    }
}

/// Fixed part of a perturbed-graph forward: the base graph embedded in
/// `n_total = n + delta` nodes plus the injected edge list whose weights
/// arrive as a tape variable.
pub struct WeightedBase {
    pub n_total: usize,
    a_plus_i: Rc<SparseMat>,
    a_noself: Rc<SparseMat>,
    /// Base degree + 1 (self-loop), per node.
    deg_plus1: Array2<f64>,
    /// Base degree, per node.
    deg: Array2<f64>,
    /// Node-edge incidence over injected edges: (n_total, e).
    inc: Rc<SparseMat>,
    /// 1 at (src_k, k): routes weighted contributions into source rows.
    s_src: Rc<SparseMat>,
    /// 1 at (dst_k, k).
    s_dst: Rc<SparseMat>,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl WeightedBase {
    /// `base` supplies the original edges; `injected` lists the new edges in
    /// the combined index space (attack node i lives at `base.num_nodes()+i`).
    pub fn new(base: &AttributedGraph, num_attack_nodes: usize, injected: &[(usize, usize)]) -> Self {
        let n_total = base.num_nodes() + num_attack_nodes;
        let mut api = Vec::new();
        let mut ansf = Vec::new();
        let mut deg = Array2::zeros((n_total, 1));
        for v in 0..n_total {
            api.push((v, v, 1.0));
        }
        for &(u, v) in base.edges() {
            api.push((u, v, 1.0));
            api.push((v, u, 1.0));
            ansf.push((u, v, 1.0));
            ansf.push((v, u, 1.0));
            deg[[u, 0]] += 1.0;
            deg[[v, 0]] += 1.0;
        }
        let e = injected.len();
        let mut inc = Vec::with_capacity(2 * e);
        let mut s_src = Vec::with_capacity(e);
        let mut s_dst = Vec::with_capacity(e);
        let mut src = Vec::with_capacity(e);
        let mut dst = Vec::with_capacity(e);
        for (k, &(u, v)) in injected.iter().enumerate() {
            debug_assert!(u < n_total && v < n_total && u != v);
            inc.push((u, k, 1.0));
            inc.push((v, k, 1.0));
            s_src.push((u, k, 1.0));
            s_dst.push((v, k, 1.0));
            src.push(u);
            dst.push(v);
        }
        WeightedBase {
            n_total,
            a_plus_i: Rc::new(SparseMat::from_triplets(n_total, n_total, &api)),
            a_noself: Rc::new(SparseMat::from_triplets(n_total, n_total, &ansf)),
            deg_plus1: &deg + 1.0,
            deg,
            inc: Rc::new(SparseMat::from_triplets(n_total, e, &inc)),
            s_src: Rc::new(SparseMat::from_triplets(n_total, e, &s_src)),
            s_dst: Rc::new(SparseMat::from_triplets(n_total, e, &s_dst)),
            src,
            dst,
        }
    }

    pub fn num_injected(&self) -> usize {
        self.src.len()
    }
}

/// Propagation mode for one forward pass.
pub enum Prop<'a> {
    Clean(&'a CleanProp),
    /// `weights` is an (e, 1) tape variable of injected edge weights.
    Weighted { base: &'a WeightedBase, weights: Var },
}

pub enum BoundGnnLayer {
    Gcn(BoundLinear),
    Sage {
        self_lin: BoundLinear,
        nbr_lin: BoundLinear,
    },
}

pub struct BoundDetector {
    layers: Vec<BoundGnnLayer>,
    pub head: BoundMlp,
}

impl BoundDetector {
    /// Full forward pass: returns (encoder representations, raw scores) for
    /// every node in the propagation's index space.
    pub fn forward(&self, tape: &Tape, prop: &Prop<'_>, x: Var) -> (Var, Var) {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                BoundGnnLayer::Gcn(lin) => {
                    let agg = gcn_aggregate(tape, prop, h);
                    lin.apply(tape, agg)
                }
                BoundGnnLayer::Sage { self_lin, nbr_lin } => {
                    let mean = sage_neighbor_mean(tape, prop, h);
                    tape.add(self_lin.apply(tape, h), nbr_lin.apply(tape, mean))
                }
            };
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        let scores = self.head.apply(tape, h);
        (h, scores)
    }
}

/// Symmetric-normalized aggregation with self-loops. In weighted mode the
/// injected edges contribute through their weight variable, including to the
/// degree normalization.
fn gcn_aggregate(tape: &Tape, prop: &Prop<'_>, x: Var) -> Var {
    match prop {
        Prop::Clean(p) => tape.sparse_matmul(&p.gcn_norm, x),
        Prop::Weighted { base, weights } => {
            let w_deg = tape.sparse_matmul(&base.inc, *weights);
            let deg = tape.add_const(w_deg, &base.deg_plus1);
            let dinv = tape.pow_const(deg, -0.5);
            let xt = tape.mul_col(x, dinv);
            let mut agg = tape.sparse_matmul(&base.a_plus_i, xt);
            if base.num_injected() > 0 {
                let src_rows = tape.gather_rows(xt, &base.src);
                let into_dst = tape.sparse_matmul(&base.s_dst, tape.mul_col(src_rows, *weights));
                let dst_rows = tape.gather_rows(xt, &base.dst);
                let into_src = tape.sparse_matmul(&base.s_src, tape.mul_col(dst_rows, *weights));
                agg = tape.add(tape.add(agg, into_dst), into_src);
            }
            tape.mul_col(agg, dinv)
        }
    }
}

/// Mean over neighbors, excluding self; weighted mode divides by the
/// (weighted) neighbor count with a small floor for isolated nodes.
fn sage_neighbor_mean(tape: &Tape, prop: &Prop<'_>, x: Var) -> Var {
    match prop {
        Prop::Clean(p) => tape.sparse_matmul(&p.nbr_mean, x),
        Prop::Weighted { base, weights } => {
            let w_cnt = tape.sparse_matmul(&base.inc, *weights);
            let cnt = tape.add_const(w_cnt, &base.deg);
            let inv = tape.pow_const(tape.add_scalar(cnt, 1e-12), -1.0);
            let mut nsum = tape.sparse_matmul(&base.a_noself, x);
            if base.num_injected() > 0 {
                let src_rows = tape.gather_rows(x, &base.src);
                let into_dst = tape.sparse_matmul(&base.s_dst, tape.mul_col(src_rows, *weights));
                let dst_rows = tape.gather_rows(x, &base.dst);
                let into_src = tape.sparse_matmul(&base.s_src, tape.mul_col(dst_rows, *weights));
                nsum = tape.add(tape.add(nsum, into_dst), into_src);
            }
            tape.mul_col(nsum, inv)
        }
    }
}

/// Class weights `n_train / (2 * n_train_c)` from train-split labels.
fn class_weights(labeled: &[(usize, usize)], enabled: bool) -> Result<[f64; 2]> {
    let n1 = labeled.iter().filter(|&&(_, c)| c == 1).count();
    let n0 = labeled.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::Config(
            "training split must contain both classes".into(),
        ));
    }
    if !enabled {
        return Ok([1.0, 1.0]);
    }
    let n = labeled.len() as f64;
    Ok([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)])
}

/// Weighted cross-entropy as a tape node: coefficients are baked into a
/// constant so `loss = sum(coeffs .* log_softmax(scores))`.
fn ce_loss(tape: &Tape, scores_subset: Var, labeled: &[(usize, usize)], weights: [f64; 2]) -> Var {
    let total: f64 = labeled.iter().map(|&(_, c)| weights[c]).sum();
    let mut coeffs = Array2::zeros((labeled.len(), 2));
    for (i, &(_, c)) in labeled.iter().enumerate() {
        coeffs[[i, c]] = -weights[c] / total;
    }
    let logp = tape.log_softmax_rows(scores_subset);
    tape.sum_all(tape.mul_const(logp, &coeffs))
}

struct EpochContext<'a> {
    prop: CleanProp,
    x: Array2<f64>,
    train: &'a [(usize, usize)],
    weights: [f64; 2],
}

fn run_train_epoch(model: &mut DetectorModel, ctx: &EpochContext<'_>, opt: &mut Adam) -> f64 {
    let tape = Tape::new();
    let x = tape.constant(ctx.x.clone());
    let bound = model.bind(&tape, true);
    let (_, scores) = bound.forward(&tape, &Prop::Clean(&ctx.prop), x);
    let idx: Vec<usize> = ctx.train.iter().map(|&(v, _)| v).collect();
    let subset = tape.gather_rows(scores, &idx);
    let loss = ce_loss(&tape, subset, ctx.train, ctx.weights);
    let loss_value = tape.with_value(loss, |v| v[[0, 0]]);
    let grads = tape.backward(loss);

    let mut bound_vars = Vec::new();
    for layer in &bound.layers {
        match layer {
            BoundGnnLayer::Gcn(l) => bound_vars.extend(l.vars()),
            BoundGnnLayer::Sage { self_lin, nbr_lin } => {
                bound_vars.extend(self_lin.vars());
                bound_vars.extend(nbr_lin.vars());
            }
        }
    }
    bound_vars.extend(bound.head.vars());

    let grad_arrays: Vec<Array2<f64>> = {
        let params = model.params();
        bound_vars
            .iter()
            .zip(&params)
            .map(|(&v, p)| grads.get_or_zeros(v, p.dim()))
            .collect()
    };
    let mut params = model.params_mut();
    opt.step(&mut params, &grad_arrays);
    loss_value
}

/// Forward-only loss and macro-F1 on a labeled node list.
fn evaluate_split(
    model: &DetectorModel,
    ctx: &EpochContext<'_>,
    labeled: &[(usize, usize)],
) -> (f64, f64) {
    let tape = Tape::new();
    let x = tape.constant(ctx.x.clone());
    let bound = model.bind(&tape, false);
    let (_, scores) = bound.forward(&tape, &Prop::Clean(&ctx.prop), x);
    let idx: Vec<usize> = labeled.iter().map(|&(v, _)| v).collect();
    let subset = tape.gather_rows(scores, &idx);
    let loss = ce_loss(&tape, subset, labeled, ctx.weights);
    let loss_value = tape.with_value(loss, |v| v[[0, 0]]);
    let preds: Vec<usize> = tape.with_value(subset, |s| {
        (0..s.nrows())
            .map(|i| if s[[i, 1]] > s[[i, 0]] { 1 } else { 0 })
            .collect()
    });
    let truth: Vec<usize> = labeled.iter().map(|&(_, c)| c).collect();
    (loss_value, macro_f1(&preds, &truth))
}

/// Trains a detector on the bundle's train split, validating every
/// `validate_every` epochs on macro-F1 with early stopping, and returns the
/// best-validation model. Deterministic given `config.seed`.
pub fn train_detector(bundle: &DatasetBundle, config: &DetectorConfig) -> Result<DetectorModel> {
    config.validate()?;
    let train = bundle.labeled_in(Split::Train);
    let val = bundle.labeled_in(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("train and val splits must be nonempty".into()));
    }
    let weights = class_weights(&train, config.class_weighting)?;
    let mut model = DetectorModel::new(config.clone(), bundle.graph.attr_dim())?;
    let ctx = EpochContext {
        prop: CleanProp::new(&bundle.graph),
        x: bundle.graph.attributes().clone(),
        train: &train,
        weights,
    };
    let mut opt = Adam::new(config.learning_rate, config.weight_decay);
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params: Option<Vec<Array2<f64>>> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        run_train_epoch(&mut model, &ctx, &mut opt);
        if epoch % config.validate_every == 0 {
            let (val_loss, val_f1) = evaluate_split(&model, &ctx, &val);
            model.training_log.push(ValRecord {
                epoch,
                val_loss,
                val_macro_f1: val_f1,
            });
            if val_f1 > best_f1 {
                best_f1 = val_f1;
                best_params = Some(model.params().iter().map(|m| (*m).clone()).collect());
                epochs_since_best = 0;
            } else {
                epochs_since_best += config.validate_every;
            }
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }
    if let Some(best) = best_params {
        for (slot, value) in model.params_mut().iter_mut().zip(best) {
            **slot = value;
        }
    }
    Ok(model)
}

/// Weighted training cross-entropy of a model on a bundle (forward only).
pub fn training_loss(model: &DetectorModel, bundle: &DatasetBundle) -> Result<f64> {
    let train = bundle.labeled_in(Split::Train);
    if train.is_empty() {
        return Err(Error::Input("no labeled training nodes".into()));
    }
    let weights = class_weights(&train, model.config.class_weighting)?;
    let ctx = EpochContext {
        prop: CleanProp::new(&bundle.graph),
        x: bundle.graph.attributes().clone(),
        train: &train,
        weights,
    };
    let tape = Tape::new();
    let x = tape.constant(ctx.x.clone());
    let bound = model.bind(&tape, false);
    let (_, scores) = bound.forward(&tape, &Prop::Clean(&ctx.prop), x);
    let idx: Vec<usize> = train.iter().map(|&(v, _)| v).collect();
    let subset = tape.gather_rows(scores, &idx);
    let loss = ce_loss(&tape, subset, &train, weights);
    Ok(tape.with_value(loss, |v| v[[0, 0]]))
}
