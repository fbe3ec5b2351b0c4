//! Ablation switches for the attack and the no-learning random-injection
//! baseline. Each flag disables or replaces one piece of the pipeline so
//! variants stay comparable under identical budgets.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    k_hop_neighbors, AttributedGraph, GraphStatistics, InjectionPlan, NodeRef, TargetSet,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Copy attribute rows from random original nodes instead of generating.
    pub random_attributes: bool,
    /// Wire edges uniformly among target/candidate/attack nodes.
    pub random_edges: bool,
    /// Drop the learned positional encodings from the input sequence.
    pub no_positional_encoding: bool,
    /// Drop the degree term from the target/candidate encoders.
    pub no_degree: bool,
    /// Tie the candidate encoder to the target encoder's parameters.
    pub shared_encoder_parameters: bool,
    /// Use no candidate nodes at all.
    pub no_candidates: bool,
    /// Sample candidates uniformly instead of scoring them.
    pub random_candidates: bool,
    /// Force every attack node to the same edge quota instead of the
    /// adaptive global selection.
    pub fixed_budget: bool,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.no_candidates && self.random_candidates {
            return Err(Error::Config(
                "no_candidates and random_candidates are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    pub fn any_enabled(&self) -> bool {
        self.random_attributes
            || self.random_edges
            || self.no_positional_encoding
            || self.no_degree
            || self.shared_encoder_parameters
            || self.no_candidates
            || self.random_candidates
            || self.fixed_budget
    }

    /// (flag name, singleton config) for each enabled flag, in a fixed order.
    pub fn enabled_variants(&self) -> Vec<(&'static str, AblationConfig)> {
        let mut out = Vec::new();
        let mut push = |name, cfg| out.push((name, cfg));
        if self.random_attributes {
            push("random_attributes", AblationConfig { random_attributes: true, ..Default::default() });
        }
        if self.random_edges {
            push("random_edges", AblationConfig { random_edges: true, ..Default::default() });
        }
        if self.no_positional_encoding {
            push("no_positional_encoding", AblationConfig { no_positional_encoding: true, ..Default::default() });
        }
        if self.no_degree {
            push("no_degree", AblationConfig { no_degree: true, ..Default::default() });
        }
        if self.shared_encoder_parameters {
            push("shared_encoder_parameters", AblationConfig { shared_encoder_parameters: true, ..Default::default() });
        }
        if self.no_candidates {
            push("no_candidates", AblationConfig { no_candidates: true, ..Default::default() });
        }
        if self.random_candidates {
            push("random_candidates", AblationConfig { random_candidates: true, ..Default::default() });
        }
        if self.fixed_budget {
            push("fixed_budget", AblationConfig { fixed_budget: true, ..Default::default() });
        }
        out
    }
}

/// Per-attack-node edge quotas summing to `eta`, with the remainder going to
/// the lowest-indexed nodes.
pub(crate) fn fixed_quotas(eta: usize, delta: usize) -> Vec<usize> {
    let q = eta / delta;
    let rem = eta % delta;
    (0..delta).map(|i| q + usize::from(i < rem)).collect()
}

/// No-learning baseline: attack-node attributes are copied (with
/// replacement) from uniformly sampled original nodes; each attack node gets
/// one uniform target edge, and the remaining budget is spent uniformly over
/// target/K-hop-neighbor/attack endpoints without duplicates.
pub fn random_injection(
    graph: &AttributedGraph,
    targets: &TargetSet,
    stats: &GraphStatistics,
    k_hops: usize,
    seed: u64,
) -> Result<InjectionPlan> {
    let _ = stats;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = graph.num_nodes();
    let delta = targets.node_budget;
    let eta = targets.edge_budget;

    let mut attrs = ndarray::Array2::zeros((delta, graph.attr_dim()));
    for i in 0..delta {
        let src = rng.random_range(0..n);
        attrs.row_mut(i).assign(&graph.attributes().row(src));
    }

    let mut edges: Vec<(NodeRef, NodeRef)> = Vec::with_capacity(eta);
    let mut mandatory = Vec::with_capacity(delta);
    for i in 0..delta {
        let t = targets.members[rng.random_range(0..targets.members.len())];
        mandatory.push((i, NodeRef::Original(t)));
        edges.push((NodeRef::Attack(i), NodeRef::Original(t)));
    }

    let neighborhood = k_hop_neighbors(graph, &targets.members, k_hops)?;
    let mut pool: Vec<NodeRef> = targets.members.iter().map(|&t| NodeRef::Original(t)).collect();
    pool.extend(neighborhood.iter().map(|&v| NodeRef::Original(v)));

    let mut allowed: Vec<(usize, NodeRef)> = Vec::new();
    for i in 0..delta {
        for &p in &pool {
            if !mandatory.contains(&(i, p)) {
                allowed.push((i, p));
            }
        }
        // One orientation per attack pair avoids mirrored duplicates.
        for j in i + 1..delta {
            allowed.push((i, NodeRef::Attack(j)));
        }
    }
    let extra = (eta - delta).min(allowed.len());
    if extra > 0 {
        let mut picks = sample(&mut rng, allowed.len(), extra).into_vec();
        picks.sort_unstable();
        for p in picks {
            let (i, other) = allowed[p];
            edges.push((NodeRef::Attack(i), other));
        }
    }

    let plan = InjectionPlan::new(delta, attrs, edges);
    plan.validate(graph, targets)?;
    Ok(plan)
}
