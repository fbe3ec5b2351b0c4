//! Synthetic fraud-gang graph generator.
//!
//! Fraud nodes are grouped into gangs that are densely wired internally,
//! camouflaged through fraud-benign edges, and embedded in a sparse benign
//! background. Attributes come from class-conditional distributions whose
//! separation is a config knob. Output is deterministic given the seed.

use ndarray::Array2;
use rand::prelude::*;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, DatasetBundle};
use crate::error::{Error, Result};
use crate::graph::{AttributeKind, AttributedGraph, BudgetParams, NodeLabel};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_nodes: usize,
    /// Fraction of nodes labeled fraud, in (0, 1).
    pub fraud_fraction: f64,
    pub num_gangs: usize,
    /// Inclusive (min, max) gang sizes; min must be at least 2 unless the
    /// graph is built for single-target experiments (min 1 is allowed there).
    pub gang_size_range: (usize, usize),
    /// Edge probability within a gang.
    pub intra_gang_edge_prob: f64,
    /// Fraud-benign edge probability (camouflage, the heterophily source).
    pub camouflage_edge_prob: f64,
    /// Everything else: benign-benign and cross-gang fraud pairs.
    pub background_edge_prob: f64,
    pub attr_dim: usize,
    pub attribute_kind: AttributeKind,
    /// Distance between class attribute means (continuous) or Bernoulli
    /// profile shift strength (discrete).
    pub class_separation: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 4 {
            return Err(Error::Config("num_nodes must be at least 4".into()));
        }
        if !(self.fraud_fraction > 0.0 && self.fraud_fraction < 1.0) {
            return Err(Error::Config(format!(
                "fraud_fraction must be in (0, 1), got {}",
                self.fraud_fraction
            )));
        }
        if self.num_gangs == 0 {
            return Err(Error::Config("num_gangs must be at least 1".into()));
        }
        let (lo, hi) = self.gang_size_range;
        if lo < 1 || hi < lo {
            return Err(Error::Config(format!(
                "gang_size_range ({lo}, {hi}) must satisfy 1 <= min <= max"
            )));
        }
        for (name, p) in [
            ("intra_gang_edge_prob", self.intra_gang_edge_prob),
            ("camouflage_edge_prob", self.camouflage_edge_prob),
            ("background_edge_prob", self.background_edge_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.attr_dim < 2 {
            return Err(Error::Config("attr_dim must be at least 2".into()));
        }
        if !(self.class_separation >= 0.0) {
            return Err(Error::Config("class_separation must be nonnegative".into()));
        }
        let n_fraud = self.num_fraud();
        if self.num_gangs * lo > n_fraud {
            return Err(Error::Config(format!(
                "{} gangs of at least {lo} members exceed the {n_fraud} fraud nodes",
                self.num_gangs
            )));
        }
        if n_fraud >= self.num_nodes {
            return Err(Error::Config("fraud_fraction leaves no benign nodes".into()));
        }
        Ok(())
    }

    pub fn num_fraud(&self) -> usize {
        ((self.num_nodes as f64) * self.fraud_fraction).round() as usize
    }
}

/// Raw generator output: the graph plus gang membership (node indices per
/// gang, in gang construction order).
pub fn generate_graph_and_gangs(
    config: &SynthConfig,
) -> Result<(AttributedGraph, Vec<Vec<usize>>)> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let n = config.num_nodes;
    let n_fraud = config.num_fraud();

    // Fraud identities: a random subset so labels are uncorrelated with index.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let fraud_nodes: Vec<usize> = order[..n_fraud].to_vec();
    let mut labels = vec![NodeLabel::Benign; n];
    for &v in &fraud_nodes {
        labels[v] = NodeLabel::Fraud;
    }

    // Gang sizes drawn from the range, constrained so every remaining gang
    // can still reach the minimum size.
    let (lo, hi) = config.gang_size_range;
    let mut gangs: Vec<Vec<usize>> = Vec::with_capacity(config.num_gangs);
    let mut cursor = 0usize;
    for g in 0..config.num_gangs {
        let gangs_after = config.num_gangs - g - 1;
        let available = n_fraud - cursor;
        let cap = available - lo * gangs_after;
        let size = rng.random_range(lo..=hi).min(cap);
        gangs.push(fraud_nodes[cursor..cursor + size].to_vec());
        cursor += size;
    }
    // Fraud nodes beyond the gangs stay labeled fraud but untargeted.

    let mut gang_of = vec![usize::MAX; n];
    for (g, members) in gangs.iter().enumerate() {
        for &v in members {
            gang_of[v] = g;
        }
    }

    // One uniform draw per unordered pair, in fixed (u, v) order, so the edge
    // set depends only on the seed.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if gang_of[u] != usize::MAX && gang_of[u] == gang_of[v] {
                config.intra_gang_edge_prob
            } else if (labels[u] == NodeLabel::Fraud) != (labels[v] == NodeLabel::Fraud) {
                config.camouflage_edge_prob
            } else {
                config.background_edge_prob
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    // Connect components with a chain over their smallest members.
    let mut uf = UnionFind::new(n);
    for &(u, v) in &edges {
        uf.union(u, v);
    }
    let mut reps: Vec<usize> = Vec::new();
    let mut seen_root = std::collections::BTreeMap::new();
    for v in 0..n {
        let root = uf.find(v);
        seen_root.entry(root).or_insert(v);
    }
    for (_, &min_member) in seen_root.iter() {
        reps.push(min_member);
    }
    reps.sort_unstable();
    for w in reps.windows(2) {
        edges.push((w[0], w[1]));
    }

    let attributes = generate_attributes(config, &labels, &mut rng);
    let graph = AttributedGraph::new(n, edges, attributes, config.attribute_kind, labels)?;
    Ok((graph, gangs))
}

fn generate_attributes(
    config: &SynthConfig,
    labels: &[NodeLabel],
    rng: &mut ChaCha12Rng,
) -> Array2<f64> {
    let n = labels.len();
    let d = config.attr_dim;
    let mut x = Array2::zeros((n, d));
    match config.attribute_kind {
        AttributeKind::Continuous => {
            // Fraud mean sits class_separation away from the benign mean
            // (origin) along a random unit direction; unit per-dim noise.
            let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut dir {
                *v *= config.class_separation / norm;
            }
            for i in 0..n {
                let fraud = labels[i] == NodeLabel::Fraud;
                for j in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    x[[i, j]] = noise + if fraud { dir[j] } else { 0.0 };
                }
            }
        }
        AttributeKind::Discrete => {
            // Benign Bernoulli profile, with a shifted subset of dimensions
            // for fraud nodes.
            let base: Vec<f64> = (0..d).map(|_| rng.random_range(0.03..0.15)).collect();
            let mut dims: Vec<usize> = (0..d).collect();
            dims.shuffle(rng);
            let shifted = &dims[..d.div_ceil(4)];
            let shift = (0.12 * config.class_separation).clamp(0.0, 0.8);
            let mut fraud_p = base.clone();
            for &j in shifted {
                fraud_p[j] = (base[j] + shift).min(0.95);
            }
            for i in 0..n {
                let p = if labels[i] == NodeLabel::Fraud {
                    &fraud_p
                } else {
                    &base
                };
                for j in 0..d {
                    if rng.random::<f64>() < p[j] {
                        x[[i, j]] = 1.0;
                    }
                }
            }
        }
    }
    x
}

/// Generates a graph, assigns gangs to splits, and attaches budgets: the
/// one-call path from a config to a ready dataset.
pub fn generate_synthetic_fraud_graph(
    config: &SynthConfig,
    train_fraction: f64,
    budgets: &BudgetParams,
) -> Result<DatasetBundle> {
    let (graph, gangs) = generate_graph_and_gangs(config)?;
    // Distinct stream from the generator so structure and split draws do not
    // alias.
    split_dataset(graph, &gangs, train_fraction, config.seed.wrapping_add(1), budgets)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, v: usize) -> usize {
        if self.parent[v] != v {
            let root = self.find(self.parent[v]);
            self.parent[v] = root;
        }
        self.parent[v]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
