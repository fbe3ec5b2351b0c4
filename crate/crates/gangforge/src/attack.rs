//! The injection attack model: candidate scoring over the K-hop neighborhood,
//! target/candidate/attack-node encoding, a transformer over the combined
//! sequence, and simultaneous attribute and edge generation under the target
//! set's budgets.
//!
//! Discrete choices (candidate subset, discrete attribute bits, edge
//! endpoints) are relaxed with Gumbel noise plus a straight-through
//! estimator: the forward pass commits to hard selections while gradients
//! follow the softmax probabilities. The surrogate detector participates in
//! every forward pass as a frozen constant; its scores on the perturbed
//! graph drive a hinge loss that rewards flipping targets to benign.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, Var};

use crate::ablation::{fixed_quotas, AblationConfig};
use crate::data::DatasetBundle;
use crate::detector::{DetectorModel, MatrixRepr, Prop, WeightedBase};
use crate::error::{Error, Result};
use crate::graph::{
    compute_statistics, k_hop_neighbors, AttributeKind, AttributedGraph, GraphStatistics,
    InjectionPlan, NodeRef, Split, TargetSet,
};
use crate::gumbel::{arg_top_k, gumbel_matrix};
use crate::nn::{xavier, Adam, Linear, Mlp};

const MASKED: f64 = -1e30;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Neighborhood radius K for the candidate pool.
    pub k_hops: usize,
    /// Candidate cap n_c; smaller neighborhoods are taken whole.
    pub max_candidates: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Block attention from target/candidate positions to attack positions.
    pub mask_attack_nodes: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Per-epoch multiplicative decay applied to tau and epsilon.
    pub decay_rate: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            k_hops: 2,
            max_candidates: 128,
            num_layers: 6,
            num_heads: 4,
            hidden_dim: 64,
            ffn_dim: 512,
            dropout: 0.0,
            mask_attack_nodes: true,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            epochs: 100,
            patience: 10,
            tau_start: 10.0,
            tau_end: 0.01,
            epsilon_start: 10.0,
            epsilon_end: 0.01,
            decay_rate: 0.63,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.hidden_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("transformer dims must be positive".into()));
        }
        if self.k_hops == 0 {
            return Err(Error::Config("k_hops must be at least 1".into()));
        }
        if !(self.tau_start > 0.0) || !(self.tau_end > 0.0) {
            return Err(Error::Config("tau must stay positive".into()));
        }
        if self.epsilon_start < 0.0 || self.epsilon_end < 0.0 {
            return Err(Error::Config("epsilon must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.decay_rate) || self.decay_rate == 0.0 {
            return Err(Error::Config("decay_rate must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn tau_at(&self, epoch: usize) -> f64 {
        (self.tau_start * self.decay_rate.powi(epoch as i32)).max(self.tau_end)
    }

    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        (self.epsilon_start * self.decay_rate.powi(epoch as i32)).max(self.epsilon_end)
    }
}

#[derive(Clone, Debug)]
struct NodeEncoder {
    lin_x: Linear,
    lin_d: Linear,
    mlp: Mlp,
}

impl NodeEncoder {
    fn new<R: Rng>(rng: &mut R, attr_dim: usize, surr_dim: usize, d_h: usize) -> Self {
        NodeEncoder {
            lin_x: Linear::new(rng, attr_dim, d_h),
            lin_d: Linear::new(rng, 1, d_h),
            mlp: Mlp::new(rng, &[2 * d_h + surr_dim, d_h, d_h]),
        }
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.lin_x.params();
        p.extend(self.lin_d.params());
        p.extend(self.mlp.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.lin_x.params_mut();
        p.extend(self.lin_d.params_mut());
        p.extend(self.mlp.params_mut());
        p
    }

    fn bind(&self, tape: &Tape, trainable: bool) -> BoundNodeEncoder {
        BoundNodeEncoder {
            lin_x: self.lin_x.bind(tape, trainable),
            lin_d: self.lin_d.bind(tape, trainable),
            mlp: self.mlp.bind(tape, trainable),
        }
    }
}

struct BoundNodeEncoder {
    lin_x: crate::nn::BoundLinear,
    lin_d: crate::nn::BoundLinear,
    mlp: crate::nn::BoundMlp,
}

impl BoundNodeEncoder {
    fn vars(&self) -> Vec<Var> {
        let mut v = self.lin_x.vars();
        v.extend(self.lin_d.vars());
        v.extend(self.mlp.vars());
        v
    }

    /// `x` (r, D), `d` (r, 1), `h` (r, D_s) stacked per node; the degree slot
    /// is zeroed out under the no-degree ablation.
    fn apply(&self, tape: &Tape, x: Var, d: Var, h: Var, no_degree: bool) -> Var {
        let px = self.lin_x.apply(tape, x);
        let pd = if no_degree {
            let shape = tape.shape(px);
            tape.constant(Array2::zeros(shape))
        } else {
            self.lin_d.apply(tape, d)
        };
        let cat = tape.concat_cols(&[px, pd, h]);
        self.mlp.apply(tape, tape.relu(cat))
    }
}

#[derive(Clone, Debug)]
struct LayerNorm {
    g: Array2<f64>,
    b: Array2<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        LayerNorm {
            g: Array2::ones((1, dim)),
            b: Array2::zeros((1, dim)),
        }
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.g, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.g, &mut self.b]
    }

    fn bind(&self, tape: &Tape, trainable: bool) -> BoundLayerNorm {
        let reg = |m: &Array2<f64>| if trainable { tape.var(m.clone()) } else { tape.constant(m.clone()) };
        BoundLayerNorm { g: reg(&self.g), b: reg(&self.b) }
    }
}

struct BoundLayerNorm {
    g: Var,
    b: Var,
}

impl BoundLayerNorm {
    fn vars(&self) -> Vec<Var> {
        vec![self.g, self.b]
    }

    fn apply(&self, tape: &Tape, x: Var) -> Var {
        let shape = tape.shape(x);
        let m = tape.row_mean(x);
        let ones = tape.constant(Array2::ones(shape));
        let centered = tape.sub(x, tape.mul_col(ones, m));
        let var = tape.row_mean(tape.mul(centered, centered));
        let inv = tape.pow_const(tape.add_scalar(var, 1e-5), -0.5);
        let normed = tape.mul_col(centered, inv);
        tape.add_row(tape.mul_row(normed, self.g), self.b)
    }
}

#[derive(Clone, Debug)]
struct TransformerBlock {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
    ln2: LayerNorm,
}

impl TransformerBlock {
    fn new<R: Rng>(rng: &mut R, d_h: usize, ffn_dim: usize) -> Self {
        TransformerBlock {
            wq: Linear::new(rng, d_h, d_h),
            wk: Linear::new(rng, d_h, d_h),
            wv: Linear::new(rng, d_h, d_h),
            wo: Linear::new(rng, d_h, d_h),
            ln1: LayerNorm::new(d_h),
            ffn1: Linear::new(rng, d_h, ffn_dim),
            ffn2: Linear::new(rng, ffn_dim, d_h),
            ln2: LayerNorm::new(d_h),
        }
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = Vec::new();
        for lin in [&self.wq, &self.wk, &self.wv, &self.wo] {
            p.extend(lin.params());
        }
        p.extend(self.ln1.params());
        p.extend(self.ffn1.params());
        p.extend(self.ffn2.params());
        p.extend(self.ln2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.wq.params_mut();
        p.extend(self.wk.params_mut());
        p.extend(self.wv.params_mut());
        p.extend(self.wo.params_mut());
        p.extend(self.ln1.params_mut());
        p.extend(self.ffn1.params_mut());
        p.extend(self.ffn2.params_mut());
        p.extend(self.ln2.params_mut());
        p
    }

    fn bind(&self, tape: &Tape, trainable: bool) -> BoundBlock {
        BoundBlock {
            wq: self.wq.bind(tape, trainable),
            wk: self.wk.bind(tape, trainable),
            wv: self.wv.bind(tape, trainable),
            wo: self.wo.bind(tape, trainable),
            ln1: self.ln1.bind(tape, trainable),
            ffn1: self.ffn1.bind(tape, trainable),
            ffn2: self.ffn2.bind(tape, trainable),
            ln2: self.ln2.bind(tape, trainable),
        }
    }
}

struct BoundBlock {
    wq: crate::nn::BoundLinear,
    wk: crate::nn::BoundLinear,
    wv: crate::nn::BoundLinear,
    wo: crate::nn::BoundLinear,
    ln1: BoundLayerNorm,
    ffn1: crate::nn::BoundLinear,
    ffn2: crate::nn::BoundLinear,
    ln2: BoundLayerNorm,
}

fn dropout_mask(tape: &Tape, x: Var, p: f64, rng: &mut ChaCha12Rng) -> Var {
    let (r, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - p);
    let mut mask = Array2::zeros((r, c));
    for v in mask.iter_mut() {
        if rng.random::<f64>() >= p {
            *v = keep;
        }
    }
    tape.mul_const(x, &mask)
}

impl BoundBlock {
    fn vars(&self) -> Vec<Var> {
        let mut v = self.wq.vars();
        v.extend(self.wk.vars());
        v.extend(self.wv.vars());
        v.extend(self.wo.vars());
        v.extend(self.ln1.vars());
        v.extend(self.ffn1.vars());
        v.extend(self.ffn2.vars());
        v.extend(self.ln2.vars());
        v
    }

    /// Post-norm encoder layer: x + MHA -> LN -> + FFN -> LN.
    #[allow(clippy::too_many_arguments)]
    fn apply(
        &self,
        tape: &Tape,
        x: Var,
        num_heads: usize,
        mask: Option<&Array2<f64>>,
        dropout: f64,
        training: bool,
        rng: &mut ChaCha12Rng,
        attn_sink: &mut Option<&mut Vec<Var>>,
    ) -> Var {
        let d = tape.shape(x).1;
        let dh = d / num_heads;
        let q = self.wq.apply(tape, x);
        let k = self.wk.apply(tape, x);
        let v = self.wv.apply(tape, x);
        let mut heads = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
            let kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
            let vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
            let mut logits = tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / (dh as f64).sqrt());
            if let Some(m) = mask {
                logits = tape.add_const(logits, m);
            }
            let attn = tape.softmax_rows(logits);
            if let Some(sink) = attn_sink.as_deref_mut() {
                sink.push(attn);
            }
            heads.push(tape.matmul(attn, vh));
        }
        let mut att = self.wo.apply(tape, tape.concat_cols(&heads));
        if training && dropout > 0.0 {
            att = dropout_mask(tape, att, dropout, rng);
        }
        let x1 = self.ln1.apply(tape, tape.add(x, att));
        let mut f = self.ffn2.apply(tape, tape.relu(self.ffn1.apply(tape, x1)));
        if training && dropout > 0.0 {
            f = dropout_mask(tape, f, dropout, rng);
        }
        self.ln2.apply(tape, tape.add(x1, f))
    }
}

/// The attack's trainable parameters. The surrogate detector is not stored
/// here; it is passed to every forward pass and always bound as constants.
#[derive(Clone, Debug)]
pub struct AttackModel {
    pub config: AttackConfig,
    pub attr_dim: usize,
    pub surrogate_dim: usize,
    scorer_q: Mlp,
    scorer_m: Mlp,
    scorer_out: Mlp,
    target_enc: NodeEncoder,
    cand_enc: NodeEncoder,
    pos_target: Array2<f64>,
    pos_cand: Array2<f64>,
    pos_attack: Array2<f64>,
    blocks: Vec<TransformerBlock>,
    attr_head: Linear,
    edge_head: Linear,
}

impl AttackModel {
    pub fn new(config: AttackConfig, attr_dim: usize, surrogate_dim: usize) -> Result<Self> {
        config.validate()?;
        if attr_dim == 0 || surrogate_dim == 0 {
            return Err(Error::Config("attribute and surrogate dims must be positive".into()));
        }
        let d_h = config.hidden_dim;
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let scorer_q = Mlp::new(&mut rng, &[attr_dim, d_h, d_h]);
        let scorer_m = Mlp::new(&mut rng, &[2, d_h, d_h]);
        let scorer_out = Mlp::new(&mut rng, &[2 * d_h + 2 * surrogate_dim, d_h, 1]);
        let target_enc = NodeEncoder::new(&mut rng, attr_dim, surrogate_dim, d_h);
        let cand_enc = NodeEncoder::new(&mut rng, attr_dim, surrogate_dim, d_h);
        let pos_target = xavier(&mut rng, 1, d_h);
        let pos_cand = xavier(&mut rng, 1, d_h);
        let pos_attack = xavier(&mut rng, 1, d_h);
        let blocks = (0..config.num_layers)
            .map(|_| TransformerBlock::new(&mut rng, d_h, config.ffn_dim))
            .collect();
        let attr_head = Linear::new(&mut rng, d_h, attr_dim);
        let edge_head = Linear::new(&mut rng, d_h, d_h);
        Ok(AttackModel {
            config,
            attr_dim,
            surrogate_dim,
            scorer_q,
            scorer_m,
            scorer_out,
            target_enc,
            cand_enc,
            pos_target,
            pos_cand,
            pos_attack,
            blocks,
            attr_head,
            edge_head,
        })
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.scorer_q.params();
        p.extend(self.scorer_m.params());
        p.extend(self.scorer_out.params());
        p.extend(self.target_enc.params());
        p.extend(self.cand_enc.params());
        p.push(&self.pos_target);
        p.push(&self.pos_cand);
        p.push(&self.pos_attack);
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.attr_head.params());
        p.extend(self.edge_head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.scorer_q.params_mut();
        p.extend(self.scorer_m.params_mut());
        p.extend(self.scorer_out.params_mut());
        p.extend(self.target_enc.params_mut());
        p.extend(self.cand_enc.params_mut());
        p.push(&mut self.pos_target);
        p.push(&mut self.pos_cand);
        p.push(&mut self.pos_attack);
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.attr_head.params_mut());
        p.extend(self.edge_head.params_mut());
        p
    }

    fn bind(&self, tape: &Tape, trainable: bool) -> BoundAttackModel {
        let reg = |m: &Array2<f64>| if trainable { tape.var(m.clone()) } else { tape.constant(m.clone()) };
        BoundAttackModel {
            scorer_q: self.scorer_q.bind(tape, trainable),
            scorer_m: self.scorer_m.bind(tape, trainable),
            scorer_out: self.scorer_out.bind(tape, trainable),
            target_enc: self.target_enc.bind(tape, trainable),
            cand_enc: self.cand_enc.bind(tape, trainable),
            pos_target: reg(&self.pos_target),
            pos_cand: reg(&self.pos_cand),
            pos_attack: reg(&self.pos_attack),
            blocks: self.blocks.iter().map(|b| b.bind(tape, trainable)).collect(),
            attr_head: self.attr_head.bind(tape, trainable),
            edge_head: self.edge_head.bind(tape, trainable),
        }
    }
}

struct BoundAttackModel {
    scorer_q: crate::nn::BoundMlp,
    scorer_m: crate::nn::BoundMlp,
    scorer_out: crate::nn::BoundMlp,
    target_enc: BoundNodeEncoder,
    cand_enc: BoundNodeEncoder,
    pos_target: Var,
    pos_cand: Var,
    pos_attack: Var,
    blocks: Vec<BoundBlock>,
    attr_head: crate::nn::BoundLinear,
    edge_head: crate::nn::BoundLinear,
}

impl BoundAttackModel {
    /// Same order as `AttackModel::params`.
    fn vars(&self) -> Vec<Var> {
        let mut v = self.scorer_q.vars();
        v.extend(self.scorer_m.vars());
        v.extend(self.scorer_out.vars());
        v.extend(self.target_enc.vars());
        v.extend(self.cand_enc.vars());
        v.push(self.pos_target);
        v.push(self.pos_cand);
        v.push(self.pos_attack);
        for b in &self.blocks {
            v.extend(b.vars());
        }
        v.extend(self.attr_head.vars());
        v.extend(self.edge_head.vars());
        v
    }
}

/// Clean-graph surrogate state shared across forward passes: encoder
/// representations for every node.
pub struct SurrogateContext {
    pub reps: Array2<f64>,
}

impl SurrogateContext {
    pub fn new(detector: &DetectorModel, graph: &AttributedGraph) -> Result<Self> {
        let (reps, _) = detector.forward_full(graph)?;
        Ok(SurrogateContext { reps })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOpts {
    pub training: bool,
    pub tau: f64,
    pub epsilon: f64,
    /// Hard selections forward with soft gradients. Disabled only by the
    /// pure-relaxation gradient tests.
    pub straight_through: bool,
    /// Seeds the per-forward noise stream (Gaussian attack rows, Gumbel
    /// draws, dropout).
    pub seed: u64,
}

impl ForwardOpts {
    pub fn inference(seed: u64, tau: f64) -> Self {
        ForwardOpts {
            training: false,
            tau,
            epsilon: 0.0,
            straight_through: true,
            seed,
        }
    }
}

/// Transformer input/output blocks; `layer` is 0 before encoding and
/// `num_layers` after.
pub struct EncodedSequence {
    pub target_block: Var,
    pub candidate_block: Var,
    pub attack_block: Var,
    pub layer: usize,
}

impl EncodedSequence {
    fn packed(&self, tape: &Tape) -> Var {
        tape.concat_rows(&[self.target_block, self.candidate_block, self.attack_block])
    }
}

pub struct AttrOut {
    pub var: Var,
    pub hard: Array2<f64>,
}

pub struct EdgeOut {
    pub plan_edges: Vec<(NodeRef, NodeRef)>,
    /// Endpoint pairs with attack node i mapped to `num_nodes + i`.
    pub combined: Vec<(usize, usize)>,
    /// (e, 1) edge-weight variable feeding the surrogate forward.
    pub weights: Var,
}

pub struct FinishedForward {
    pub plan: InjectionPlan,
    pub loss: f64,
    /// Aligned with `AttackModel::params`; present when training.
    pub grads: Option<Vec<Array2<f64>>>,
}

/// One forward pass over a single target set. All pipeline stages share this
/// tape so gradients can flow end to end.
pub struct ForwardPass<'a> {
    model: &'a AttackModel,
    graph: &'a AttributedGraph,
    targets: &'a TargetSet,
    stats: &'a GraphStatistics,
    surrogate: &'a DetectorModel,
    reps: &'a Array2<f64>,
    ablation: AblationConfig,
    opts: ForwardOpts,
    tape: Tape,
    bound: BoundAttackModel,
    rng: ChaCha12Rng,
    cand_weights: Option<Var>,
}

fn rows_of(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (i, &v) in idx.iter().enumerate() {
        out.row_mut(i).assign(&x.row(v));
    }
    out
}

fn member_hash(members: &[usize]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &v in members {
        for b in (v as u64).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl AttackModel {
    #[allow(clippy::too_many_arguments)]
    pub fn begin_forward<'a>(
        &'a self,
        graph: &'a AttributedGraph,
        targets: &'a TargetSet,
        stats: &'a GraphStatistics,
        surrogate: &'a DetectorModel,
        ctx: &'a SurrogateContext,
        ablation: &AblationConfig,
        opts: ForwardOpts,
    ) -> Result<ForwardPass<'a>> {
        ablation.validate()?;
        if graph.attr_dim() != self.attr_dim {
            return Err(Error::Input(format!(
                "graph attribute dim {} does not match model {}",
                graph.attr_dim(),
                self.attr_dim
            )));
        }
        if surrogate.hidden_dim() != self.surrogate_dim || ctx.reps.ncols() != self.surrogate_dim {
            return Err(Error::Input(format!(
                "surrogate representation dim {} does not match model {}",
                ctx.reps.ncols(),
                self.surrogate_dim
            )));
        }
        if ctx.reps.nrows() != graph.num_nodes() {
            return Err(Error::Input("surrogate context built for a different graph".into()));
        }
        if !(opts.tau > 0.0) || opts.epsilon < 0.0 {
            return Err(Error::Config("forward needs tau > 0 and epsilon >= 0".into()));
        }
        let tape = Tape::new();
        let bound = self.bind(&tape, opts.training);
        Ok(ForwardPass {
            model: self,
            graph,
            targets,
            stats,
            surrogate,
            reps: &ctx.reps,
            ablation: *ablation,
            opts,
            tape,
            bound,
            rng: ChaCha12Rng::seed_from_u64(opts.seed),
            cand_weights: None,
        })
    }

    /// Full pipeline for one target set: candidates, sequence encoding,
    /// attribute and edge generation, surrogate scoring, hinge loss, and
    /// (when training) gradients for every model parameter.
    #[allow(clippy::too_many_arguments)]
    pub fn attack_forward(
        &self,
        graph: &AttributedGraph,
        targets: &TargetSet,
        stats: &GraphStatistics,
        surrogate: &DetectorModel,
        ctx: &SurrogateContext,
        ablation: &AblationConfig,
        opts: ForwardOpts,
    ) -> Result<FinishedForward> {
        let mut fp = self.begin_forward(graph, targets, stats, surrogate, ctx, ablation, opts)?;
        let cands = fp.select_candidates()?;
        let seq = fp.build_input_sequence(&cands)?;
        let seq = fp.run_structure_encoder(seq)?;
        let attrs = fp.generate_attributes(&seq, graph.attribute_kind())?;
        let edges = fp.generate_edges(&seq, &cands)?;
        fp.finish(attrs, edges)
    }

    /// Deterministic inference: hard selections with zero exploration noise.
    pub fn run_attack(
        &self,
        graph: &AttributedGraph,
        targets: &TargetSet,
        stats: &GraphStatistics,
        surrogate: &DetectorModel,
        ctx: &SurrogateContext,
        ablation: &AblationConfig,
    ) -> Result<InjectionPlan> {
        let seed = self.config.seed ^ member_hash(&targets.members);
        let opts = ForwardOpts::inference(seed, self.config.tau_end);
        Ok(self
            .attack_forward(graph, targets, stats, surrogate, ctx, ablation, opts)?
            .plan)
    }
}

impl<'a> ForwardPass<'a> {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.tape.value(v)
    }

    fn effective_epsilon(&self) -> f64 {
        if self.opts.training {
            self.opts.epsilon
        } else {
            0.0
        }
    }

    /// Candidate pool: the whole K-hop neighborhood when it fits under n_c,
    /// otherwise the top-n_c by learned score (Gumbel-perturbed while
    /// training, with straight-through weights feeding the encoder).
    pub fn select_candidates(&mut self) -> Result<Vec<usize>> {
        if self.ablation.no_candidates {
            return Ok(Vec::new());
        }
        let nk: Vec<usize> =
            k_hop_neighbors(self.graph, &self.targets.members, self.model.config.k_hops)?
                .into_iter()
                .collect();
        let n_c = self.model.config.max_candidates;
        if nk.len() <= n_c {
            return Ok(nk);
        }
        if self.ablation.random_candidates {
            let mut picks: Vec<usize> = sample(&mut self.rng, nk.len(), n_c)
                .into_iter()
                .map(|i| nk[i])
                .collect();
            picks.sort_unstable();
            return Ok(picks);
        }

        let tape = &self.tape;
        let x = tape.constant(rows_of(self.graph.attributes(), &nk));
        let member_set: BTreeSet<usize> = self.targets.members.iter().cloned().collect();
        let mut dm = Array2::zeros((nk.len(), 2));
        for (i, &v) in nk.iter().enumerate() {
            dm[[i, 0]] = self.graph.degree(v) as f64;
            dm[[i, 1]] = self
                .graph
                .neighbors(v)
                .iter()
                .filter(|u| member_set.contains(*u))
                .count() as f64;
        }
        let dm = tape.constant(dm);
        let h = tape.constant(rows_of(self.reps, &nk));
        let target_reps = rows_of(self.reps, &self.targets.members);
        let mean_rep = target_reps.mean_axis(ndarray::Axis(0)).unwrap();
        let mut ht = Array2::zeros((nk.len(), self.model.surrogate_dim));
        for mut row in ht.rows_mut() {
            row.assign(&mean_rep);
        }
        let ht = tape.constant(ht);

        let q = self.bound.scorer_q.apply(tape, x);
        let m = self.bound.scorer_m.apply(tape, dm);
        let cat = tape.relu(tape.concat_cols(&[q, m, h, ht]));
        let scores = self.bound.scorer_out.apply(tape, cat);

        let vals: Vec<f64> = tape.with_value(scores, |s| s.column(0).to_vec());
        let eps = self.effective_epsilon();
        let noise = if eps > 0.0 {
            gumbel_matrix(&mut self.rng, nk.len(), 1)
        } else {
            Array2::zeros((nk.len(), 1))
        };
        let noised: Vec<f64> = vals
            .iter()
            .zip(noise.column(0))
            .map(|(s, g)| s + eps * g)
            .collect();
        let mut chosen: Vec<usize> = arg_top_k(&noised, n_c);
        chosen.sort_by_key(|&p| nk[p]);
        let cands: Vec<usize> = chosen.iter().map(|&p| nk[p]).collect();

        if self.opts.training {
            let noised_var = tape.add_const(scores, &noise.mapv(|g| eps * g));
            let scaled = tape.scale(noised_var, 1.0 / self.opts.tau);
            let soft = tape.transpose(tape.softmax_rows(tape.transpose(scaled)));
            let picked = tape.gather_rows(soft, &chosen);
            let st = if self.opts.straight_through {
                let sv = tape.value(picked);
                tape.add_const(picked, &sv.mapv(|v| 1.0 - v))
            } else {
                picked
            };
            self.cand_weights = Some(st);
        }
        Ok(cands)
    }

    /// Encodes targets and candidates through their projection networks,
    /// draws attack-node rows (zero vector when Δ=1, standard Gaussian
    /// otherwise), and adds the per-block positional encodings.
    pub fn build_input_sequence(&mut self, candidates: &[usize]) -> Result<EncodedSequence> {
        let d_h = self.model.config.hidden_dim;
        let delta = self.targets.node_budget;
        let no_deg = self.ablation.no_degree;

        let inputs = |tape: &Tape, nodes: &[usize], reps: &Array2<f64>, g: &AttributedGraph| {
            let x = tape.constant(rows_of(g.attributes(), nodes));
            let mut d = Array2::zeros((nodes.len(), 1));
            for (i, &v) in nodes.iter().enumerate() {
                d[[i, 0]] = g.degree(v) as f64;
            }
            let d = tape.constant(d);
            let h = tape.constant(rows_of(reps, nodes));
            (x, d, h)
        };

        let (xt, dt, htv) = inputs(&self.tape, &self.targets.members, self.reps, self.graph);
        let mut tgt = self.bound.target_enc.apply(&self.tape, xt, dt, htv, no_deg);

        let (xc, dc, hc) = inputs(&self.tape, candidates, self.reps, self.graph);
        let cand_encoder = if self.ablation.shared_encoder_parameters {
            &self.bound.target_enc
        } else {
            &self.bound.cand_enc
        };
        let mut cnd = cand_encoder.apply(&self.tape, xc, dc, hc, no_deg);
        if let Some(w) = self.cand_weights.take() {
            cnd = self.tape.mul_col(cnd, w);
        }

        let init = if delta == 1 {
            Array2::zeros((1, d_h))
        } else {
            let mut a = Array2::zeros((delta, d_h));
            for v in a.iter_mut() {
                *v = self.rng.sample(StandardNormal);
            }
            a
        };
        let mut atk = self.tape.constant(init);

        if !self.ablation.no_positional_encoding {
            tgt = self.tape.add_row(tgt, self.bound.pos_target);
            cnd = self.tape.add_row(cnd, self.bound.pos_cand);
            atk = self.tape.add_row(atk, self.bound.pos_attack);
        }
        Ok(EncodedSequence {
            target_block: tgt,
            candidate_block: cnd,
            attack_block: atk,
            layer: 0,
        })
    }

    pub fn run_structure_encoder(&mut self, seq: EncodedSequence) -> Result<EncodedSequence> {
        self.encode_seq(seq, None)
    }

    #[cfg(test)]
    pub(crate) fn run_structure_encoder_collect(
        &mut self,
        seq: EncodedSequence,
        sink: &mut Vec<Var>,
    ) -> Result<EncodedSequence> {
        self.encode_seq(seq, Some(sink))
    }

    fn encode_seq(
        &mut self,
        seq: EncodedSequence,
        mut sink: Option<&mut Vec<Var>>,
    ) -> Result<EncodedSequence> {
        if seq.layer != 0 {
            return Err(Error::Input("sequence was already encoded".into()));
        }
        let m = self.tape.shape(seq.target_block).0;
        let alpha = self.tape.shape(seq.candidate_block).0;
        let delta = self.tape.shape(seq.attack_block).0;
        let total = m + alpha + delta;

        let mut z = seq.packed(&self.tape);
        let mask = if self.model.config.mask_attack_nodes && delta > 0 {
            let mut mk = Array2::zeros((total, total));
            for i in 0..m + alpha {
                for j in m + alpha..total {
                    mk[[i, j]] = MASKED;
                }
            }
            Some(mk)
        } else {
            None
        };
        let cfg = &self.model.config;
        for block in &self.bound.blocks {
            z = block.apply(
                &self.tape,
                z,
                cfg.num_heads,
                mask.as_ref(),
                cfg.dropout,
                self.opts.training,
                &mut self.rng,
                &mut sink,
            );
        }
        Ok(EncodedSequence {
            target_block: self.tape.slice_rows(z, 0, m),
            candidate_block: self.tape.slice_rows(z, m, m + alpha),
            attack_block: self.tape.slice_rows(z, m + alpha, total),
            layer: cfg.num_layers,
        })
    }

    /// Attack-node attributes from the encoded attack block: a sigmoid head
    /// rescaled into the observed min/max box (continuous) or a top-λ bit
    /// union via Gumbel-Softmax (discrete).
    pub fn generate_attributes(
        &mut self,
        seq: &EncodedSequence,
        kind: AttributeKind,
    ) -> Result<AttrOut> {
        if kind != self.graph.attribute_kind() {
            return Err(Error::Config(format!(
                "requested {kind:?} attributes for a {:?} graph",
                self.graph.attribute_kind()
            )));
        }
        if seq.layer != self.model.config.num_layers {
            return Err(Error::Input("attributes need the encoded sequence".into()));
        }
        let tape = &self.tape;
        let delta = self.targets.node_budget;
        let d = self.model.attr_dim;

        if self.ablation.random_attributes {
            let mut hard = Array2::zeros((delta, d));
            for i in 0..delta {
                let src = self.rng.random_range(0..self.graph.num_nodes());
                hard.row_mut(i).assign(&self.graph.attributes().row(src));
            }
            return Ok(AttrOut { var: tape.constant(hard.clone()), hard });
        }

        let f = tape.sigmoid(self.bound.attr_head.apply(tape, seq.attack_block));
        match kind {
            AttributeKind::Continuous => {
                let mut range = Array2::zeros((1, d));
                let mut lo = Array2::zeros((1, d));
                for j in 0..d {
                    range[[0, j]] = self.stats.attr_max[j] - self.stats.attr_min[j];
                    lo[[0, j]] = self.stats.attr_min[j];
                }
                let range = tape.constant(range);
                let lo = tape.constant(lo);
                let out = tape.add_row(tape.mul_row(f, range), lo);
                Ok(AttrOut { hard: tape.value(out), var: out })
            }
            AttributeKind::Discrete => {
                let lambda = self.stats.mean_nonzero_attrs.min(d);
                let eps = self.effective_epsilon();
                let noise = if eps > 0.0 {
                    gumbel_matrix(&mut self.rng, delta, d).mapv(|g| eps * g)
                } else {
                    Array2::zeros((delta, d))
                };
                let noised_vals = tape.with_value(f, |fv| fv + &noise);
                let mut hard = Array2::zeros((delta, d));
                for i in 0..delta {
                    let row: Vec<f64> = noised_vals.row(i).to_vec();
                    for j in arg_top_k(&row, lambda) {
                        hard[[i, j]] = 1.0;
                    }
                }
                let soft = tape.softmax_rows(tape.scale(tape.add_const(f, &noise), 1.0 / self.opts.tau));
                let var = if self.opts.straight_through {
                    let sv = tape.value(soft);
                    tape.add_const(soft, &(&hard - &sv))
                } else {
                    soft
                };
                Ok(AttrOut { var, hard })
            }
        }
    }

    /// Edge set under the budget: one mandatory Gumbel-Top-1 target edge per
    /// attack node, then a global Gumbel-Top-(η−Δ) over the masked cosine
    /// score matrix (or fixed per-node quotas under the ablation).
    pub fn generate_edges(
        &mut self,
        seq: &EncodedSequence,
        candidates: &[usize],
    ) -> Result<EdgeOut> {
        let delta = self.targets.node_budget;
        let eta = self.targets.edge_budget;
        if eta < delta {
            return Err(Error::Config(format!(
                "edge budget {eta} below node budget {delta}"
            )));
        }
        if seq.layer != self.model.config.num_layers {
            return Err(Error::Input("edges need the encoded sequence".into()));
        }
        if self.ablation.random_edges {
            return self.random_edge_wiring(candidates);
        }

        let tape = &self.tape;
        let m = self.targets.members.len();
        let alpha = candidates.len();
        let total = m + alpha + delta;
        let n = self.graph.num_nodes();
        let members = &self.targets.members;

        let col_ref = |j: usize| -> NodeRef {
            if j < m {
                NodeRef::Original(members[j])
            } else if j < m + alpha {
                NodeRef::Original(candidates[j - m])
            } else {
                NodeRef::Attack(j - m - alpha)
            }
        };
        let col_combined = |j: usize| -> usize {
            if j < m {
                members[j]
            } else if j < m + alpha {
                candidates[j - m]
            } else {
                n + (j - m - alpha)
            }
        };

        let z = seq.packed(tape);
        let r = self.bound.edge_head.apply(tape, z);
        let sq = tape.row_sum(tape.mul(r, r));
        let inv = tape.pow_const(tape.add_scalar(sq, 1e-12), -0.5);
        let rn = tape.mul_col(r, inv);
        let rhat = tape.slice_rows(rn, m + alpha, total);
        let escore = tape.matmul(rhat, tape.transpose(rn));
        let evals = tape.value(escore);

        let eps = self.effective_epsilon();
        let tau = self.opts.tau;

        // Step 1: mandatory target edge per attack node.
        let noise1 = if eps > 0.0 {
            gumbel_matrix(&mut self.rng, delta, m).mapv(|g| eps * g)
        } else {
            Array2::zeros((delta, m))
        };
        let mut chosen1 = Vec::with_capacity(delta);
        for i in 0..delta {
            let row: Vec<f64> = (0..m).map(|j| evals[[i, j]] + noise1[[i, j]]).collect();
            chosen1.push(arg_top_k(&row, 1)[0]);
        }
        let tslice = tape.slice_cols(escore, 0, m);
        let soft1 = tape.softmax_rows(tape.scale(tape.add_const(tslice, &noise1), 1.0 / tau));
        let soft1_flat = tape.reshape(soft1, delta * m, 1);
        let idx1: Vec<usize> = (0..delta).map(|i| i * m + chosen1[i]).collect();
        let w1 = tape.gather_rows(soft1_flat, &idx1);

        let mut plan_edges: Vec<(NodeRef, NodeRef)> = Vec::with_capacity(eta);
        let mut combined: Vec<(usize, usize)> = Vec::with_capacity(eta);
        for (i, &c) in chosen1.iter().enumerate() {
            plan_edges.push((NodeRef::Attack(i), NodeRef::Original(members[c])));
            combined.push((n + i, members[c]));
        }

        // Shared mask: step-1 picks, and for attack columns keep only the
        // i < j orientation so mirrored attack pairs cannot both appear.
        let mut mask = Array2::zeros((delta, total));
        for i in 0..delta {
            mask[[i, chosen1[i]]] = MASKED;
            for j in 0..delta {
                if (self.ablation.fixed_budget && j != i) || j <= i {
                    mask[[i, m + alpha + j]] = MASKED;
                }
            }
            if self.ablation.fixed_budget {
                mask[[i, m + alpha + i]] = MASKED;
            }
        }

        let w2 = if self.ablation.fixed_budget {
            // Per-row deterministic top-k to the fixed quota.
            let quotas = fixed_quotas(eta, delta);
            let soft_rows = tape.softmax_rows(tape.scale(tape.add_const(escore, &mask), 1.0 / tau));
            let soft_flat = tape.reshape(soft_rows, delta * total, 1);
            let mut picked_flat = Vec::new();
            for i in 0..delta {
                let want = quotas[i].saturating_sub(1);
                let avail = (0..total).filter(|&j| mask[[i, j]] == 0.0).count();
                let row: Vec<f64> = (0..total).map(|j| evals[[i, j]] + mask[[i, j]]).collect();
                for j in arg_top_k(&row, want.min(avail)) {
                    picked_flat.push(i * total + j);
                    plan_edges.push((NodeRef::Attack(i), col_ref(j)));
                    combined.push((n + i, col_combined(j)));
                }
            }
            tape.gather_rows(soft_flat, &picked_flat)
        } else {
            // Step 2: global Gumbel-Top-(η−Δ) over the masked matrix.
            let noise2 = if eps > 0.0 {
                gumbel_matrix(&mut self.rng, delta, total).mapv(|g| eps * g)
            } else {
                Array2::zeros((delta, total))
            };
            let offset = &noise2 + &mask;
            let flat: Vec<f64> = evals
                .iter()
                .zip(offset.iter())
                .map(|(e, o)| e + o)
                .collect();
            let avail = mask.iter().filter(|&&v| v == 0.0).count();
            let k2 = (eta - delta).min(avail);
            let picked = arg_top_k(&flat, k2);
            for &p in &picked {
                let (i, j) = (p / total, p % total);
                plan_edges.push((NodeRef::Attack(i), col_ref(j)));
                combined.push((n + i, col_combined(j)));
            }
            let flat_var = tape.reshape(tape.add_const(escore, &offset), 1, delta * total);
            let soft2 = tape.reshape(tape.softmax_rows(tape.scale(flat_var, 1.0 / tau)), delta * total, 1);
            tape.gather_rows(soft2, &picked)
        };

        let w_soft = tape.concat_rows(&[w1, w2]);
        let weights = if self.opts.straight_through {
            let sv = tape.value(w_soft);
            tape.add_const(w_soft, &sv.mapv(|v| 1.0 - v))
        } else {
            w_soft
        };
        Ok(EdgeOut { plan_edges, combined, weights })
    }

    /// Uniform wiring over target/candidate/attack endpoints; the weight
    /// vector is constant so only the attribute path carries gradients.
    fn random_edge_wiring(&mut self, candidates: &[usize]) -> Result<EdgeOut> {
        let delta = self.targets.node_budget;
        let eta = self.targets.edge_budget;
        let n = self.graph.num_nodes();
        let members = &self.targets.members;

        let mut plan_edges = Vec::with_capacity(eta);
        let mut combined = Vec::with_capacity(eta);
        let mut mandatory = Vec::with_capacity(delta);
        for i in 0..delta {
            let t = members[self.rng.random_range(0..members.len())];
            mandatory.push((i, NodeRef::Original(t)));
            plan_edges.push((NodeRef::Attack(i), NodeRef::Original(t)));
            combined.push((n + i, t));
        }
        let mut pool: Vec<NodeRef> = members.iter().map(|&t| NodeRef::Original(t)).collect();
        pool.extend(candidates.iter().map(|&c| NodeRef::Original(c)));
        let mut allowed: Vec<(usize, NodeRef)> = Vec::new();
        for i in 0..delta {
            for &p in &pool {
                if !mandatory.contains(&(i, p)) {
                    allowed.push((i, p));
                }
            }
            for j in i + 1..delta {
                allowed.push((i, NodeRef::Attack(j)));
            }
        }
        let extra = (eta - delta).min(allowed.len());
        if extra > 0 {
            let mut picks = sample(&mut self.rng, allowed.len(), extra).into_vec();
            picks.sort_unstable();
            for p in picks {
                let (i, other) = allowed[p];
                plan_edges.push((NodeRef::Attack(i), other));
                let c = match other {
                    NodeRef::Original(v) => v,
                    NodeRef::Attack(j) => n + j,
                };
                combined.push((n + i, c));
            }
        }
        let weights = self.tape.constant(Array2::ones((combined.len(), 1)));
        Ok(EdgeOut { plan_edges, combined, weights })
    }

    /// Applies the generated injection to the frozen surrogate and returns
    /// the plan, the hinge loss, and (when training) parameter gradients.
    pub fn finish(self, attrs: AttrOut, edges: EdgeOut) -> Result<FinishedForward> {
        let tape = &self.tape;
        let delta = self.targets.node_budget;
        let xb = tape.constant(self.graph.attributes().clone());
        let x_full = tape.concat_rows(&[xb, attrs.var]);
        let base = WeightedBase::new(self.graph, delta, &edges.combined);
        let bound_surr = self.surrogate.bind(tape, false);
        let (_, scores) = bound_surr.forward(
            tape,
            &Prop::Weighted { base: &base, weights: edges.weights },
            x_full,
        );
        let tscores = tape.gather_rows(scores, &self.targets.members);
        let loss = hinge_mean(tape, tscores);
        let loss_val = tape.with_value(loss, |v| v[[0, 0]]);

        let plan = InjectionPlan::new(delta, attrs.hard, edges.plan_edges);
        plan.validate(self.graph, self.targets)?;

        let grads = if self.opts.training {
            let g = tape.backward(loss);
            let vars = self.bound.vars();
            let shapes: Vec<(usize, usize)> = self.model.params().iter().map(|p| p.dim()).collect();
            Some(
                vars.iter()
                    .zip(shapes)
                    .map(|(&v, s)| g.get_or_zeros(v, s))
                    .collect(),
            )
        } else {
            None
        };
        Ok(FinishedForward { plan, loss: loss_val, grads })
    }
}

fn hinge_mean(tape: &Tape, scores: Var) -> Var {
    let s0 = tape.slice_cols(scores, 0, 1);
    let s1 = tape.slice_cols(scores, 1, 2);
    tape.mean_all(tape.relu(tape.sub(s1, s0)))
}

/// Mean hinge over target rows `(s0, s1)`: zero iff every benign score is at
/// least the fraud score.
pub fn attack_loss(scores: &Array2<f64>) -> Result<f64> {
    if scores.nrows() == 0 {
        return Err(Error::Input("attack loss over an empty target set".into()));
    }
    if scores.ncols() != 2 {
        return Err(Error::Input(format!("expected 2 score columns, got {}", scores.ncols())));
    }
    let sum: f64 = (0..scores.nrows())
        .map(|i| (scores[[i, 1]] - scores[[i, 0]]).max(0.0))
        .sum();
    Ok(sum / scores.nrows() as f64)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainedAttack {
    pub model: AttackModel,
    pub history: Vec<EpochRecord>,
}

/// Trains the attack over the bundle's train-split target sets, one
/// optimization step per set per epoch, with tau/epsilon decaying each epoch
/// and early stopping on the noise-free validation loss.
pub fn train_attack(
    mut model: AttackModel,
    bundle: &DatasetBundle,
    surrogate: &DetectorModel,
    ablation: &AblationConfig,
) -> Result<TrainedAttack> {
    ablation.validate()?;
    model.config.validate()?;
    let train_sets: Vec<&TargetSet> = bundle.sets_in(Split::Train);
    let val_sets: Vec<&TargetSet> = bundle.sets_in(Split::Val);
    if train_sets.is_empty() {
        return Err(Error::Config("no training target sets".into()));
    }
    if val_sets.is_empty() {
        return Err(Error::Config("no validation target sets".into()));
    }
    let stats = compute_statistics(&bundle.graph, &bundle.target_sets)?;
    let ctx = SurrogateContext::new(surrogate, &bundle.graph)?;
    let cfg = model.config.clone();
    let mut opt = Adam::new(cfg.learning_rate, cfg.weight_decay);
    let mut master = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x00a7_7ac4);

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<Array2<f64>>> = None;
    let mut bad = 0usize;

    let validate = |model: &AttackModel| -> Result<f64> {
        let mut total = 0.0;
        for set in &val_sets {
            let opts = ForwardOpts::inference(cfg.seed ^ member_hash(&set.members), cfg.tau_end);
            let out =
                model.attack_forward(&bundle.graph, set, &stats, surrogate, &ctx, ablation, opts)?;
            total += out.loss;
        }
        Ok(total / val_sets.len() as f64)
    };

    for epoch in 0..cfg.epochs {
        let tau = cfg.tau_at(epoch);
        let epsilon = cfg.epsilon_at(epoch);
        let mut order: Vec<usize> = (0..train_sets.len()).collect();
        order.shuffle(&mut master);
        let mut train_loss = 0.0;
        for &si in &order {
            let opts = ForwardOpts {
                training: true,
                tau,
                epsilon,
                straight_through: true,
                seed: master.random(),
            };
            let out = model.attack_forward(
                &bundle.graph,
                train_sets[si],
                &stats,
                surrogate,
                &ctx,
                ablation,
                opts,
            )?;
            train_loss += out.loss;
            let grads = out.grads.expect("training forward returns gradients");
            let mut params = model.params_mut();
            opt.step(&mut params, &grads);
        }
        let val_loss = validate(&model)?;
        history.push(EpochRecord {
            epoch,
            tau,
            epsilon,
            train_loss: train_loss / train_sets.len() as f64,
            val_loss,
        });
        // Ties keep the later snapshot: once the validation hinge saturates
        // at zero the longer-trained weights are the stronger model.
        let improved = val_loss < best_val;
        if val_loss <= best_val {
            best_val = val_loss;
            best_params = Some(model.params().iter().map(|p| (*p).clone()).collect());
        }
        if improved {
            bad = 0;
        } else {
            bad += 1;
            if bad >= cfg.patience.max(1) {
                break;
            }
        }
    }
    if let Some(best) = best_params {
        for (slot, value) in model.params_mut().iter_mut().zip(best) {
            **slot = value;
        }
    }
    Ok(TrainedAttack { model, history })
}

const ATK_MAGIC: &str = "GFATK1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurrogateRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize)]
struct AttackCheckpointFile {
    magic: String,
    config: AttackConfig,
    attr_dim: usize,
    surrogate_dim: usize,
    params: Vec<MatrixRepr>,
    surrogate: SurrogateRef,
}

impl AttackModel {
    pub fn save_checkpoint(&self, path: impl AsRef<Path>, surrogate: &SurrogateRef) -> Result<()> {
        let path = path.as_ref();
        let file = AttackCheckpointFile {
            magic: ATK_MAGIC.into(),
            config: self.config.clone(),
            attr_dim: self.attr_dim,
            surrogate_dim: self.surrogate_dim,
            params: self.params().into_iter().map(MatrixRepr::from).collect(),
            surrogate: surrogate.clone(),
        };
        let text = serde_json::to_string(&file).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Self, SurrogateRef)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: AttackCheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.magic != ATK_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: bad magic {:?}, expected {ATK_MAGIC:?}",
                path.display(),
                file.magic
            )));
        }
        let mut model = AttackModel::new(file.config, file.attr_dim, file.surrogate_dim)?;
        {
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
                let m = repr
                    .to_array()
                    .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
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
        }
        Ok((model, file.surrogate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_dataset;
    use crate::detector::{DetectorArch, DetectorConfig};
    use crate::graph::BudgetParams;
    use crate::synth::{generate_graph_and_gangs, SynthConfig};

    fn synth_bundle(seed: u64, kind: AttributeKind, n: usize) -> DatasetBundle {
        let cfg = SynthConfig {
            num_nodes: n,
            fraud_fraction: 0.25,
            num_gangs: 6,
            gang_size_range: (2, 4),
            intra_gang_edge_prob: 0.8,
            camouflage_edge_prob: 0.05,
            background_edge_prob: 0.05,
            attr_dim: 6,
            attribute_kind: kind,
            class_separation: 2.0,
            seed,
        };
        let (graph, gangs) = generate_graph_and_gangs(&cfg).unwrap();
        split_dataset(graph, &gangs, 0.4, seed + 1, &BudgetParams { rho: 0.4, xi: 1.0 }).unwrap()
    }

    fn quick_surrogate(bundle: &DatasetBundle, seed: u64) -> DetectorModel {
        let cfg = DetectorConfig {
            architecture: DetectorArch::Gcn,
            hidden_dim: 8,
            max_epochs: 20,
            validate_every: 10,
            patience: 20,
            seed,
            ..DetectorConfig::default()
        };
        crate::detector::train_detector(bundle, &cfg).unwrap()
    }

    fn small_config(seed: u64) -> AttackConfig {
        AttackConfig {
            max_candidates: 16,
            num_layers: 2,
            num_heads: 2,
            hidden_dim: 16,
            ffn_dim: 32,
            epochs: 5,
            seed,
            ..AttackConfig::default()
        }
    }

    struct Fixture {
        bundle: DatasetBundle,
        surrogate: DetectorModel,
        ctx: SurrogateContext,
        stats: GraphStatistics,
        model: AttackModel,
    }

    fn fixture(seed: u64, kind: AttributeKind, n: usize) -> Fixture {
        let bundle = synth_bundle(seed, kind, n);
        let surrogate = quick_surrogate(&bundle, seed + 10);
        let ctx = SurrogateContext::new(&surrogate, &bundle.graph).unwrap();
        let stats = compute_statistics(&bundle.graph, &bundle.target_sets).unwrap();
        let model =
            AttackModel::new(small_config(seed + 20), bundle.graph.attr_dim(), surrogate.hidden_dim())
                .unwrap();
        Fixture { bundle, surrogate, ctx, stats, model }
    }

    fn train_opts(seed: u64) -> ForwardOpts {
        ForwardOpts { training: true, tau: 1.0, epsilon: 0.5, straight_through: true, seed }
    }

    #[test]
    fn config_validation_rules() {
        assert!(AttackConfig::default().validate().is_ok());
        assert!(AttackConfig { hidden_dim: 65, ..AttackConfig::default() }.validate().is_err());
        assert!(AttackConfig { dropout: 1.0, ..AttackConfig::default() }.validate().is_err());
        assert!(AttackConfig { tau_end: 0.0, ..AttackConfig::default() }.validate().is_err());
        assert!(AttackConfig { decay_rate: 1.0, ..AttackConfig::default() }.validate().is_err());
    }

    #[test]
    fn schedule_decays_and_clamps() {
        let cfg = AttackConfig::default();
        assert_eq!(cfg.tau_at(0), 10.0);
        assert!((cfg.tau_at(1) - 6.3).abs() < 1e-12);
        // 10 * 0.63^15 ~ 0.0098 drops below the floor.
        assert_eq!(cfg.tau_at(15), 0.01);
        assert_eq!(cfg.epsilon_at(15), 0.01);
    }

    #[test]
    fn forward_produces_valid_plan_and_gradients() {
        let f = fixture(50, AttributeKind::Continuous, 120);
        let set = &f.bundle.target_sets[0];
        let out = f
            .model
            .attack_forward(
                &f.bundle.graph,
                set,
                &f.stats,
                &f.surrogate,
                &f.ctx,
                &AblationConfig::default(),
                train_opts(1),
            )
            .unwrap();
        assert!(out.loss.is_finite());
        out.plan.validate(&f.bundle.graph, set).unwrap();
        let grads = out.grads.unwrap();
        assert_eq!(grads.len(), f.model.params().len());
        assert!(grads.iter().all(|g| g.iter().all(|v| v.is_finite())));
        let nonzero = grads.iter().filter(|g| g.iter().any(|v| *v != 0.0)).count();
        assert!(nonzero > grads.len() / 2, "only {nonzero} gradient arrays nonzero");
    }

    #[test]
    fn small_neighborhood_returns_everything() {
        let f = fixture(51, AttributeKind::Continuous, 120);
        let set = &f.bundle.target_sets[0];
        let mut fp = f
            .model
            .begin_forward(
                &f.bundle.graph,
                set,
                &f.stats,
                &f.surrogate,
                &f.ctx,
                &AblationConfig::default(),
                ForwardOpts::inference(0, 1.0),
            )
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let nk = k_hop_neighbors(&f.bundle.graph, &set.members, 2).unwrap();
        if nk.len() <= 16 {
            assert_eq!(cands, nk.into_iter().collect::<Vec<_>>());
        } else {
            assert_eq!(cands.len(), 16);
        }
    }

    #[test]
    fn candidates_stay_inside_khop_and_outside_targets() {
        let f = fixture(52, AttributeKind::Continuous, 200);
        let mut checked = 0;
        for set in &f.bundle.target_sets {
            for seed in 0..25u64 {
                let opts = ForwardOpts { training: true, tau: 1.0, epsilon: 1.0, straight_through: true, seed };
                let mut fp = f
                    .model
                    .begin_forward(
                        &f.bundle.graph,
                        set,
                        &f.stats,
                        &f.surrogate,
                        &f.ctx,
                        &AblationConfig::default(),
                        opts,
                    )
                    .unwrap();
                let cands = fp.select_candidates().unwrap();
                let nk = k_hop_neighbors(&f.bundle.graph, &set.members, 2).unwrap();
                for c in &cands {
                    assert!(nk.contains(c));
                    assert!(!set.members.contains(c));
                }
                checked += 1;
                if checked >= 100 {
                    return;
                }
            }
        }
    }

    #[test]
    fn candidate_selection_deterministic_at_inference() {
        let f = fixture(53, AttributeKind::Continuous, 200);
        let set = &f.bundle.target_sets[1];
        let pick = |seed| {
            let mut fp = f
                .model
                .begin_forward(
                    &f.bundle.graph,
                    set,
                    &f.stats,
                    &f.surrogate,
                    &f.ctx,
                    &AblationConfig::default(),
                    ForwardOpts::inference(seed, 1.0),
                )
                .unwrap();
            fp.select_candidates().unwrap()
        };
        // The noise seed is irrelevant at inference.
        assert_eq!(pick(1), pick(999));
    }

    fn single_budget_set(f: &Fixture, delta: usize, eta: usize) -> TargetSet {
        let mut set = f.bundle.target_sets[0].clone();
        set.node_budget = delta;
        set.edge_budget = eta;
        set
    }

    #[test]
    fn single_attack_node_block_is_positional_row() {
        let f = fixture(54, AttributeKind::Continuous, 120);
        let set = single_budget_set(&f, 1, 1);
        let mut fp = f
            .model
            .begin_forward(
                &f.bundle.graph,
                &set,
                &f.stats,
                &f.surrogate,
                &f.ctx,
                &AblationConfig::default(),
                ForwardOpts::inference(3, 1.0),
            )
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let atk = fp.value(seq.attack_block);
        assert_eq!(atk.dim(), (1, 16));
        for (a, p) in atk.iter().zip(f.model.pos_attack.iter()) {
            assert!((a - p).abs() < 1e-12);
        }
        // Without positional encodings the row is exactly zero.
        let ab = AblationConfig { no_positional_encoding: true, ..Default::default() };
        let mut fp2 = f
            .model
            .begin_forward(&f.bundle.graph, &set, &f.stats, &f.surrogate, &f.ctx, &ab, ForwardOpts::inference(3, 1.0))
            .unwrap();
        let cands2 = fp2.select_candidates().unwrap();
        let seq2 = fp2.build_input_sequence(&cands2).unwrap();
        assert!(fp2.value(seq2.attack_block).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_target_inputs_encode_identically() {
        // Two isolated fraud nodes with equal attributes get equal surrogate
        // representations, hence equal target rows.
        use crate::graph::{AttributedGraph, NodeLabel};
        let mut attrs = Array2::zeros((4, 3));
        attrs.row_mut(0).assign(&ndarray::arr1(&[0.5, -1.0, 2.0]));
        attrs.row_mut(1).assign(&ndarray::arr1(&[0.5, -1.0, 2.0]));
        attrs.row_mut(2).assign(&ndarray::arr1(&[1.0, 0.0, 0.0]));
        attrs.row_mut(3).assign(&ndarray::arr1(&[0.0, 1.0, 0.0]));
        let g = AttributedGraph::new(
            4,
            vec![(2, 3)],
            attrs,
            AttributeKind::Continuous,
            vec![NodeLabel::Fraud, NodeLabel::Fraud, NodeLabel::Benign, NodeLabel::Benign],
        )
        .unwrap();
        let det = DetectorModel::new(
            DetectorConfig { hidden_dim: 8, seed: 5, ..DetectorConfig::default() },
            3,
        )
        .unwrap();
        let ctx = SurrogateContext::new(&det, &g).unwrap();
        let set = TargetSet {
            id: "g000".into(),
            members: vec![0, 1],
            closed_neighborhood_size: 2,
            node_budget: 1,
            edge_budget: 1,
            split: Split::Test,
        };
        let stats = compute_statistics(&g, std::slice::from_ref(&set)).unwrap();
        let model = AttackModel::new(small_config(9), 3, 8).unwrap();
        let mut fp = model
            .begin_forward(&g, &set, &stats, &det, &ctx, &AblationConfig::default(), ForwardOpts::inference(0, 1.0))
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let t = fp.value(seq.target_block);
        for j in 0..t.ncols() {
            assert!((t[[0, j]] - t[[1, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_layer_encoder_is_identity() {
        let f0 = fixture(55, AttributeKind::Continuous, 120);
        let cfg = AttackConfig { num_layers: 0, ..small_config(7) };
        let model = AttackModel::new(cfg, f0.bundle.graph.attr_dim(), f0.surrogate.hidden_dim()).unwrap();
        let set = &f0.bundle.target_sets[0];
        let mut fp = model
            .begin_forward(
                &f0.bundle.graph,
                set,
                &f0.stats,
                &f0.surrogate,
                &f0.ctx,
                &AblationConfig::default(),
                ForwardOpts::inference(0, 1.0),
            )
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let before = fp.value(seq.target_block);
        let out = fp.run_structure_encoder(seq).unwrap();
        assert_eq!(out.layer, 0);
        assert_eq!(fp.value(out.target_block), before);
    }

    fn encoded_target_block(f: &Fixture, model: &AttackModel, set: &TargetSet, seed: u64) -> Array2<f64> {
        let mut fp = model
            .begin_forward(
                &f.bundle.graph,
                set,
                &f.stats,
                &f.surrogate,
                &f.ctx,
                &AblationConfig::default(),
                ForwardOpts::inference(seed, 1.0),
            )
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let out = fp.run_structure_encoder(seq).unwrap();
        fp.value(out.target_block)
    }

    #[test]
    fn masking_blocks_attack_rows_from_influencing_targets() {
        let f = fixture(56, AttributeKind::Continuous, 120);
        // Δ≥2 so different seeds draw different Gaussian attack rows.
        let set = single_budget_set(&f, 3, 3);
        let a = encoded_target_block(&f, &f.model, &set, 1);
        let b = encoded_target_block(&f, &f.model, &set, 2);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9, "masked targets moved with attack inputs");
        }
        // Same experiment with masking off: the targets must move.
        let cfg = AttackConfig { mask_attack_nodes: false, ..small_config(76) };
        let open = AttackModel::new(cfg, f.bundle.graph.attr_dim(), f.surrogate.hidden_dim()).unwrap();
        let c = encoded_target_block(&f, &open, &set, 1);
        let d = encoded_target_block(&f, &open, &set, 2);
        assert!(c.iter().zip(d.iter()).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn attention_rows_sum_to_one_at_every_layer() {
        let f = fixture(57, AttributeKind::Continuous, 120);
        let set = single_budget_set(&f, 2, 4);
        let mut fp = f
            .model
            .begin_forward(
                &f.bundle.graph,
                &set,
                &f.stats,
                &f.surrogate,
                &f.ctx,
                &AblationConfig::default(),
                ForwardOpts::inference(1, 1.0),
            )
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let mut attn = Vec::new();
        fp.run_structure_encoder_collect(seq, &mut attn).unwrap();
        // num_layers * num_heads matrices.
        assert_eq!(attn.len(), 2 * 2);
        for a in attn {
            let m = fp.value(a);
            for i in 0..m.nrows() {
                let s: f64 = m.row(i).sum();
                assert!((s - 1.0).abs() < 1e-6, "row sums to {s}");
            }
        }
    }

    #[test]
    fn continuous_attributes_stay_in_range_and_hit_midpoint() {
        let mut f = fixture(58, AttributeKind::Continuous, 120);
        let set = f.bundle.target_sets[0].clone();
        // Zeroed head: sigmoid(0) = 0.5 maps to the box midpoint.
        for p in f.model.attr_head.params_mut() {
            p.fill(0.0);
        }
        let mut fp = f
            .model
            .begin_forward(
                &f.bundle.graph,
                &set,
                &f.stats,
                &f.surrogate,
                &f.ctx,
                &AblationConfig::default(),
                ForwardOpts::inference(0, 1.0),
            )
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let seq = fp.run_structure_encoder(seq).unwrap();
        let attrs = fp.generate_attributes(&seq, AttributeKind::Continuous).unwrap();
        for (i, row) in attrs.hard.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let mid = 0.5 * (f.stats.attr_min[j] + f.stats.attr_max[j]);
                assert!((v - mid).abs() < 1e-9, "row {i} col {j}: {v} vs mid {mid}");
            }
        }
        // Random head: still inside the observed box.
        let f2 = fixture(59, AttributeKind::Continuous, 120);
        let set2 = f2.bundle.target_sets[0].clone();
        let out = f2
            .model
            .attack_forward(
                &f2.bundle.graph,
                &set2,
                &f2.stats,
                &f2.surrogate,
                &f2.ctx,
                &AblationConfig::default(),
                train_opts(4),
            )
            .unwrap();
        for row in out.plan.attack_attributes.rows() {
            for (j, v) in row.iter().enumerate() {
                assert!(*v >= f2.stats.attr_min[j] - 1e-12);
                assert!(*v <= f2.stats.attr_max[j] + 1e-12);
            }
        }
    }

    #[test]
    fn discrete_attributes_select_top_lambda_bits() {
        let mut f = fixture(60, AttributeKind::Discrete, 150);
        let set = f.bundle.target_sets[0].clone();
        let lambda = f.stats.mean_nonzero_attrs;
        // Pin F per column via the bias with zero weights:
        // sigmoid(logit(p)) = p. Highest entries at columns 0 and 2.
        let probs: [f64; 6] = [0.9, 0.1, 0.8, 0.2, 0.15, 0.05];
        {
            let mut params = f.model.attr_head.params_mut();
            params[0].fill(0.0);
            for (j, p) in probs.iter().enumerate() {
                params[1][[0, j]] = (p / (1.0 - p)).ln();
            }
        }
        let mut fp = f
            .model
            .begin_forward(
                &f.bundle.graph,
                &set,
                &f.stats,
                &f.surrogate,
                &f.ctx,
                &AblationConfig::default(),
                ForwardOpts::inference(0, 1.0),
            )
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let seq = fp.run_structure_encoder(seq).unwrap();
        let attrs = fp.generate_attributes(&seq, AttributeKind::Discrete).unwrap();
        // Noise-free selection keeps exactly the lambda highest-probability
        // columns in every row.
        let expect: BTreeSet<usize> = arg_top_k(&probs.to_vec(), lambda).into_iter().collect();
        for row in attrs.hard.rows() {
            let got: BTreeSet<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v == 1.0)
                .map(|(j, _)| j)
                .collect();
            assert_eq!(got, expect);
        }
        // Every row carries exactly lambda ones across many noisy draws.
        for seed in 0..25 {
            let out = f
                .model
                .attack_forward(
                    &f.bundle.graph,
                    &set,
                    &f.stats,
                    &f.surrogate,
                    &f.ctx,
                    &AblationConfig::default(),
                    ForwardOpts { training: true, tau: 2.0, epsilon: 1.0, straight_through: true, seed },
                )
                .unwrap();
            for row in out.plan.attack_attributes.rows() {
                let ones = row.iter().filter(|v| **v == 1.0).count();
                let zeros = row.iter().filter(|v| **v == 0.0).count();
                assert_eq!(ones, lambda);
                assert_eq!(ones + zeros, row.len());
            }
        }
    }

    #[test]
    fn gumbel_softmax_rows_sum_to_one() {
        let f = fixture(61, AttributeKind::Discrete, 150);
        let set = f.bundle.target_sets[0].clone();
        for (tau, eps) in [(10.0, 10.0), (1.0, 0.5), (0.01, 0.0)] {
            let mut fp = f
                .model
                .begin_forward(
                    &f.bundle.graph,
                    &set,
                    &f.stats,
                    &f.surrogate,
                    &f.ctx,
                    &AblationConfig::default(),
                    ForwardOpts { training: true, tau, epsilon: eps, straight_through: false, seed: 11 },
                )
                .unwrap();
            let cands = fp.select_candidates().unwrap();
            let seq = fp.build_input_sequence(&cands).unwrap();
            let seq = fp.run_structure_encoder(seq).unwrap();
            let attrs = fp.generate_attributes(&seq, AttributeKind::Discrete).unwrap();
            let soft = fp.value(attrs.var);
            for i in 0..soft.nrows() {
                let s: f64 = soft.row(i).sum();
                assert!((s - 1.0).abs() < 1e-6, "tau {tau} eps {eps}: row sums to {s}");
            }
        }
    }

    fn forward_edges(f: &Fixture, set: &TargetSet, ab: &AblationConfig, opts: ForwardOpts) -> InjectionPlan {
        f.model
            .attack_forward(&f.bundle.graph, set, &f.stats, &f.surrogate, &f.ctx, ab, opts)
            .unwrap()
            .plan
    }

    fn attack_degrees(plan: &InjectionPlan) -> Vec<usize> {
        let mut deg = vec![0usize; plan.num_attack_nodes];
        for &(a, b) in &plan.adversarial_edges {
            if let NodeRef::Attack(i) = a {
                deg[i] += 1;
            }
            if let NodeRef::Attack(i) = b {
                deg[i] += 1;
            }
        }
        deg
    }

    #[test]
    fn minimal_edge_budget_keeps_only_mandatory_edges() {
        let f = fixture(62, AttributeKind::Continuous, 120);
        let set = single_budget_set(&f, 2, 2);
        let plan = forward_edges(&f, &set, &AblationConfig::default(), train_opts(5));
        assert_eq!(plan.adversarial_edges.len(), 2);
        let member_set: BTreeSet<usize> = set.members.iter().cloned().collect();
        for &(a, b) in &plan.adversarial_edges {
            let original = match (a, b) {
                (NodeRef::Original(v), NodeRef::Attack(_)) => v,
                (NodeRef::Attack(_), NodeRef::Original(v)) => v,
                other => panic!("unexpected endpoints {other:?}"),
            };
            assert!(member_set.contains(&original));
        }
        assert_eq!(attack_degrees(&plan), vec![1, 1]);
    }

    #[test]
    fn edge_invariants_hold_across_many_draws() {
        let f = fixture(63, AttributeKind::Continuous, 150);
        let mut runs = 0;
        'outer: for set in &f.bundle.target_sets {
            for seed in 0..20 {
                let opts = ForwardOpts { training: true, tau: 1.0, epsilon: 2.0, straight_through: true, seed };
                let plan = forward_edges(&f, set, &AblationConfig::default(), opts);
                plan.validate(&f.bundle.graph, set).unwrap();
                assert!(plan.adversarial_edges.len() <= set.edge_budget);
                runs += 1;
                if runs >= 100 {
                    break 'outer;
                }
            }
        }
        assert!(runs >= 100);
    }

    #[test]
    fn adaptive_budget_allows_unequal_degrees() {
        let f = fixture(64, AttributeKind::Continuous, 150);
        let set = single_budget_set(&f, 2, 6);
        let mut witnessed = false;
        for seed in 0..50 {
            let opts = ForwardOpts { training: true, tau: 1.0, epsilon: 3.0, straight_through: true, seed };
            let plan = forward_edges(&f, &set, &AblationConfig::default(), opts);
            let deg = attack_degrees(&plan);
            if deg[0] != deg[1] {
                witnessed = true;
                break;
            }
        }
        assert!(witnessed, "no unequal-degree plan in 50 draws");
    }

    #[test]
    fn fixed_budget_forces_equal_degrees() {
        let f = fixture(65, AttributeKind::Continuous, 150);
        let set = single_budget_set(&f, 2, 6);
        let ab = AblationConfig { fixed_budget: true, ..Default::default() };
        for seed in 0..10 {
            let opts = ForwardOpts { training: true, tau: 1.0, epsilon: 3.0, straight_through: true, seed };
            let plan = forward_edges(&f, &set, &ab, opts);
            assert_eq!(attack_degrees(&plan), vec![3, 3]);
        }
    }

    #[test]
    fn attack_loss_hand_cases() {
        let one = Array2::from_shape_vec((1, 2), vec![0.2, 0.8]).unwrap();
        assert!((attack_loss(&one).unwrap() - 0.6).abs() < 1e-12);
        let clamped = Array2::from_shape_vec((1, 2), vec![0.9, 0.1]).unwrap();
        assert_eq!(attack_loss(&clamped).unwrap(), 0.0);
        let two = Array2::from_shape_vec((2, 2), vec![0.2, 0.8, 0.9, 0.1]).unwrap();
        assert!((attack_loss(&two).unwrap() - 0.3).abs() < 1e-12);
        assert!(attack_loss(&Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn cosine_scores_are_one_for_identical_representations() {
        let mut f = fixture(66, AttributeKind::Continuous, 120);
        let set = single_budget_set(&f, 2, 4);
        // Constant edge head: every projected representation is the same row,
        // so every cosine score is 1 and selections fall back to index order.
        {
            let mut params = f.model.edge_head.params_mut();
            params[0].fill(0.0);
            params[1].fill(1.0);
        }
        let mut fp = f
            .model
            .begin_forward(
                &f.bundle.graph,
                &set,
                &f.stats,
                &f.surrogate,
                &f.ctx,
                &AblationConfig::default(),
                ForwardOpts::inference(0, 1.0),
            )
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let seq = fp.run_structure_encoder(seq).unwrap();
        // Recompute the score matrix exactly as generate_edges does.
        let tape = fp.tape();
        let z = seq.packed(tape);
        let r = fp.bound.edge_head.apply(tape, z);
        let sq = tape.row_sum(tape.mul(r, r));
        let invn = tape.pow_const(tape.add_scalar(sq, 1e-12), -0.5);
        let rn = tape.mul_col(r, invn);
        let mtot = tape.shape(z).0;
        let rhat = tape.slice_rows(rn, mtot - 2, mtot);
        let scores = fp.value(tape.matmul(rhat, tape.transpose(rn)));
        for v in scores.iter() {
            assert!((v - 1.0).abs() < 1e-9);
            assert!(*v <= 1.0 + 1e-9 && *v >= -1.0 - 1e-9);
        }
    }

    #[test]
    fn training_reduces_loss_below_clean_graph() {
        let f = fixture(67, AttributeKind::Continuous, 100);
        let cfg = AttackConfig { epochs: 50, patience: 50, ..small_config(31) };
        let model = AttackModel::new(cfg, f.bundle.graph.attr_dim(), f.surrogate.hidden_dim()).unwrap();
        let trained = train_attack(model, &f.bundle, &f.surrogate, &AblationConfig::default())
            .unwrap();
        let train_sets = f.bundle.sets_in(Split::Train);
        let mut clean = 0.0;
        let mut attacked = 0.0;
        for set in &train_sets {
            let scores = f.surrogate.predict_scores(&f.bundle.graph, &set.members).unwrap();
            clean += attack_loss(&scores).unwrap();
            let opts = ForwardOpts::inference(trained.model.config.seed ^ member_hash(&set.members), 0.01);
            attacked += trained
                .model
                .attack_forward(&f.bundle.graph, set, &f.stats, &f.surrogate, &f.ctx, &AblationConfig::default(), opts)
                .unwrap()
                .loss;
        }
        assert!(
            attacked <= clean + 1e-9,
            "attacked loss {attacked} vs clean {clean}"
        );
        assert!(!trained.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let f = fixture(68, AttributeKind::Continuous, 90);
        let cfg = AttackConfig { epochs: 3, ..small_config(41) };
        let run = || {
            let model =
                AttackModel::new(cfg.clone(), f.bundle.graph.attr_dim(), f.surrogate.hidden_dim())
                    .unwrap();
            train_attack(model, &f.bundle, &f.surrogate, &AblationConfig::default()).unwrap()
        };
        let a = run();
        let b = run();
        for (x, y) in a.model.params().iter().zip(b.model.params().iter()) {
            assert_eq!(x, y);
        }
        assert_eq!(a.history.len(), b.history.len());
    }

    #[test]
    fn zero_patience_stops_at_first_plateau() {
        let f = fixture(69, AttributeKind::Continuous, 90);
        // lr so small the validation loss cannot improve measurably.
        let cfg = AttackConfig {
            epochs: 30,
            patience: 0,
            learning_rate: 1e-30,
            ..small_config(47)
        };
        let model = AttackModel::new(cfg, f.bundle.graph.attr_dim(), f.surrogate.hidden_dim()).unwrap();
        let trained = train_attack(model, &f.bundle, &f.surrogate, &AblationConfig::default())
            .unwrap();
        assert_eq!(trained.history.len(), 2, "history: {:?}", trained.history);
    }

    #[test]
    fn run_attack_is_deterministic_and_handles_single_target() {
        let f = fixture(70, AttributeKind::Continuous, 120);
        let set = &f.bundle.target_sets[0];
        let ab = AblationConfig::default();
        let a = f.model.run_attack(&f.bundle.graph, set, &f.stats, &f.surrogate, &f.ctx, &ab).unwrap();
        let b = f.model.run_attack(&f.bundle.graph, set, &f.stats, &f.surrogate, &f.ctx, &ab).unwrap();
        assert_eq!(a.adversarial_edges, b.adversarial_edges);
        assert_eq!(a.attack_attributes, b.attack_attributes);

        // Single target, Δ=η=1: one attack node with one edge to the target.
        let fraud = set.members[0];
        let single = TargetSet {
            id: "solo".into(),
            members: vec![fraud],
            closed_neighborhood_size: 1 + f.bundle.graph.degree(fraud),
            node_budget: 1,
            edge_budget: 1,
            split: Split::Test,
        };
        let plan = f
            .model
            .run_attack(&f.bundle.graph, &single, &f.stats, &f.surrogate, &f.ctx, &ab)
            .unwrap();
        assert_eq!(plan.num_attack_nodes, 1);
        assert_eq!(plan.adversarial_edges.len(), 1);
        let (x, y) = plan.adversarial_edges[0];
        assert!(
            (x == NodeRef::Original(fraud) && y == NodeRef::Attack(0))
                || (x == NodeRef::Attack(0) && y == NodeRef::Original(fraud))
        );
    }

    #[test]
    fn soft_relaxation_gradients_match_finite_differences() {
        // Straight-through off, tau=1, no noise: the loss is smooth in the
        // heads as long as the hard selections stay fixed under perturbation.
        let f = fixture(71, AttributeKind::Continuous, 60);
        let set = f.bundle.target_sets[0].clone();
        let mut model = f.model.clone();
        let opts = ForwardOpts { training: true, tau: 1.0, epsilon: 0.0, straight_through: false, seed: 13 };
        let run = |m: &AttackModel| -> (f64, Option<Vec<Array2<f64>>>) {
            let out = m
                .attack_forward(&f.bundle.graph, &set, &f.stats, &f.surrogate, &f.ctx, &AblationConfig::default(), opts)
                .unwrap();
            (out.loss, out.grads)
        };
        let (_, grads) = run(&model);
        let grads = grads.unwrap();
        let num_params = model.params().len();
        // attr_head weight is params[n-4], edge_head weight is params[n-2].
        let entries: Vec<(usize, usize, usize)> = (0..5)
            .flat_map(|t| {
                [(num_params - 4, t * 2, t), (num_params - 2, t * 3, t + 1)]
            })
            .map(|(p, r, c)| {
                let dims = model.params()[p].dim();
                (p, r % dims.0, c % dims.1)
            })
            .collect();
        let h = 1e-4;
        for (p, r, c) in entries {
            let orig = model.params()[p][[r, c]];
            {
                model.params_mut()[p][[r, c]] = orig + h;
            }
            let (plus, _) = run(&model);
            {
                model.params_mut()[p][[r, c]] = orig - h;
            }
            let (minus, _) = run(&model);
            {
                model.params_mut()[p][[r, c]] = orig;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[p][[r, c]];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom < 1e-3,
                "param {p} ({r},{c}): analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_parameters_and_reference() {
        let f = fixture(72, AttributeKind::Continuous, 90);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attack.ckpt");
        let sref = SurrogateRef { path: "detector_surrogate.ckpt".into(), sha256: "ab12".into() };
        f.model.save_checkpoint(&path, &sref).unwrap();
        let (loaded, loaded_ref) = AttackModel::load_checkpoint(&path).unwrap();
        assert_eq!(loaded_ref.path, sref.path);
        assert_eq!(loaded_ref.sha256, sref.sha256);
        for (a, b) in f.model.params().iter().zip(loaded.params().iter()) {
            assert_eq!(a, b);
        }
        std::fs::write(&path, "{\"magic\":\"WRONG\"}").unwrap();
        assert!(AttackModel::load_checkpoint(&path).is_err());
    }

    #[test]
    fn random_attribute_ablation_copies_rows() {
        let f = fixture(73, AttributeKind::Continuous, 120);
        let set = &f.bundle.target_sets[0];
        let ab = AblationConfig { random_attributes: true, ..Default::default() };
        let plan = forward_edges(&f, set, &ab, train_opts(3));
        let x = f.bundle.graph.attributes();
        for row in plan.attack_attributes.rows() {
            let found = (0..f.bundle.graph.num_nodes())
                .any(|v| x.row(v).iter().zip(row.iter()).all(|(a, b)| a == b));
            assert!(found);
        }
    }

    #[test]
    fn random_edges_stay_in_allowed_pool() {
        let f = fixture(74, AttributeKind::Continuous, 150);
        let set = &f.bundle.target_sets[1];
        let ab = AblationConfig { random_edges: true, ..Default::default() };
        let nk = k_hop_neighbors(&f.bundle.graph, &set.members, 2).unwrap();
        for seed in 0..10 {
            let opts = ForwardOpts { training: true, tau: 1.0, epsilon: 1.0, straight_through: true, seed };
            let plan = forward_edges(&f, set, &ab, opts);
            plan.validate(&f.bundle.graph, set).unwrap();
            for &(a, b) in &plan.adversarial_edges {
                for e in [a, b] {
                    if let NodeRef::Original(v) = e {
                        assert!(
                            set.members.contains(&v) || nk.contains(&v),
                            "endpoint {v} outside target/candidate pool"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn no_degree_ablation_ignores_degree_encoder() {
        let mut f = fixture(75, AttributeKind::Continuous, 120);
        let set = f.bundle.target_sets[0].clone();
        let ab = AblationConfig { no_degree: true, ..Default::default() };
        let encode = |model: &AttackModel| {
            let mut fp = model
                .begin_forward(&f.bundle.graph, &set, &f.stats, &f.surrogate, &f.ctx, &ab, ForwardOpts::inference(0, 1.0))
                .unwrap();
            let cands = fp.select_candidates().unwrap();
            let seq = fp.build_input_sequence(&cands).unwrap();
            fp.value(seq.target_block)
        };
        let before = encode(&f.model);
        // Scrambling the degree projection must not change anything.
        for p in f.model.target_enc.lin_d.params_mut() {
            p.fill(123.0);
        }
        let after = encode(&f.model);
        assert_eq!(before, after);
    }

    #[test]
    fn shared_encoder_ablation_ties_parameters() {
        use crate::graph::{AttributedGraph, NodeLabel};
        // Target 0 and candidate 2 have identical attributes, degree, and
        // surrogate representation by symmetry: 0-1 and 2-3 are twin edges.
        let mut attrs = Array2::zeros((4, 3));
        for i in [0, 2] {
            attrs.row_mut(i).assign(&ndarray::arr1(&[0.5, -1.0, 2.0]));
        }
        for i in [1, 3] {
            attrs.row_mut(i).assign(&ndarray::arr1(&[1.0, 1.0, 0.0]));
        }
        let g = AttributedGraph::new(
            4,
            vec![(0, 1), (1, 2), (2, 3), (0, 3)],
            attrs,
            AttributeKind::Continuous,
            vec![NodeLabel::Fraud, NodeLabel::Benign, NodeLabel::Benign, NodeLabel::Benign],
        )
        .unwrap();
        let det = DetectorModel::new(
            DetectorConfig { hidden_dim: 8, seed: 3, ..DetectorConfig::default() },
            3,
        )
        .unwrap();
        let ctx = SurrogateContext::new(&det, &g).unwrap();
        let set = TargetSet {
            id: "g000".into(),
            members: vec![0],
            closed_neighborhood_size: 3,
            node_budget: 1,
            edge_budget: 1,
            split: Split::Test,
        };
        let stats = compute_statistics(&g, std::slice::from_ref(&set)).unwrap();
        let model = AttackModel::new(small_config(8), 3, 8).unwrap();
        let reps = ctx.reps.clone();
        // Symmetry check first: node 0 and node 2 really are twins.
        for j in 0..reps.ncols() {
            assert!((reps[[0, j]] - reps[[2, j]]).abs() < 1e-9);
        }
        let ab = AblationConfig {
            shared_encoder_parameters: true,
            no_positional_encoding: true,
            ..Default::default()
        };
        let mut fp = model
            .begin_forward(&g, &set, &stats, &det, &ctx, &ab, ForwardOpts::inference(0, 1.0))
            .unwrap();
        let cands = fp.select_candidates().unwrap();
        let c2 = cands.iter().position(|&c| c == 2).unwrap();
        let seq = fp.build_input_sequence(&cands).unwrap();
        let t = fp.value(seq.target_block);
        let c = fp.value(seq.candidate_block);
        for j in 0..t.ncols() {
            assert!((t[[0, j]] - c[[c2, j]]).abs() < 1e-9);
        }
    }

    #[test]
    fn no_candidates_ablation_wires_targets_and_attacks_only() {
        let f = fixture(76, AttributeKind::Continuous, 150);
        let set = &f.bundle.target_sets[0];
        let ab = AblationConfig { no_candidates: true, ..Default::default() };
        let plan = forward_edges(&f, set, &ab, train_opts(9));
        plan.validate(&f.bundle.graph, set).unwrap();
        for &(a, b) in &plan.adversarial_edges {
            for e in [a, b] {
                if let NodeRef::Original(v) = e {
                    assert!(set.members.contains(&v), "endpoint {v} is not a target");
                }
            }
        }
    }

    #[test]
    fn random_candidates_sample_from_neighborhood() {
        let f = fixture(77, AttributeKind::Continuous, 250);
        let ab = AblationConfig { random_candidates: true, ..Default::default() };
        for set in &f.bundle.target_sets {
            let nk = k_hop_neighbors(&f.bundle.graph, &set.members, 2).unwrap();
            let mut fp = f
                .model
                .begin_forward(&f.bundle.graph, set, &f.stats, &f.surrogate, &f.ctx, &ab, ForwardOpts::inference(5, 1.0))
                .unwrap();
            let cands = fp.select_candidates().unwrap();
            assert_eq!(cands.len(), nk.len().min(16));
            for c in &cands {
                assert!(nk.contains(c));
            }
            let mut fp2 = f
                .model
                .begin_forward(&f.bundle.graph, set, &f.stats, &f.surrogate, &f.ctx, &ab, ForwardOpts::inference(5, 1.0))
                .unwrap();
            assert_eq!(cands, fp2.select_candidates().unwrap());
        }
    }
}
