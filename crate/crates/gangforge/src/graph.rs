//! Attributed-graph data model, neighborhood queries, injection budgets, and
//! application of injection plans.
//!
//! Graphs are immutable after construction; applying an injection plan yields
//! a new graph with the attack nodes appended after the original indices.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Continuous,
    Discrete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeLabel {
    Benign,
    Fraud,
    Unlabeled,
}

impl NodeLabel {
    pub fn from_int(v: i64) -> Option<NodeLabel> {
        match v {
            0 => Some(NodeLabel::Benign),
            1 => Some(NodeLabel::Fraud),
            _ => None,
        }
    }

    /// Class index for labeled nodes (0 benign, 1 fraud).
    pub fn class(self) -> Option<usize> {
        match self {
            NodeLabel::Benign => Some(0),
            NodeLabel::Fraud => Some(1),
            NodeLabel::Unlabeled => None,
        }
    }
}

/// Undirected attributed graph with optional fraud labels.
#[derive(Clone, Debug)]
pub struct AttributedGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    attributes: Array2<f64>,
    attribute_kind: AttributeKind,
    labels: Vec<NodeLabel>,
    adj: Vec<Vec<usize>>,
}

impl AttributedGraph {
    /// Validates and builds a graph. Edges may arrive in any order and
    /// orientation; they are stored canonically as `u < v`, sorted, with
    /// per-node adjacency lists built once.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        attributes: Array2<f64>,
        attribute_kind: AttributeKind,
        labels: Vec<NodeLabel>,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Graph("graph must have at least one node".into()));
        }
        if attributes.nrows() != num_nodes {
            return Err(Error::Graph(format!(
                "attribute matrix has {} rows for {} nodes",
                attributes.nrows(),
                num_nodes
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::Graph(format!(
                "label vector has {} entries for {} nodes",
                labels.len(),
                num_nodes
            )));
        }
        if attribute_kind == AttributeKind::Discrete
            && attributes.iter().any(|&x| x != 0.0 && x != 1.0)
        {
            return Err(Error::Graph(
                "discrete attribute matrix contains non-binary entries".into(),
            ));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) references a node outside 0..{num_nodes}"
                )));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if canon.windows(2).any(|w| w[0] == w[1]) {
            let dup = canon.windows(2).find(|w| w[0] == w[1]).unwrap()[0];
            return Err(Error::Graph(format!("duplicate edge ({}, {})", dup.0, dup.1)));
        }
        let mut adj = vec![Vec::new(); num_nodes];
        for &(u, v) in &canon {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(AttributedGraph {
            num_nodes,
            edges: canon,
            attributes,
            attribute_kind,
            labels,
            adj,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical sorted edge list, each pair stored once as `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn attributes(&self) -> &Array2<f64> {
        &self.attributes
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn attribute_kind(&self) -> AttributeKind {
        self.attribute_kind
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> NodeLabel {
        self.labels[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.num_nodes as f64
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.num_nodes {
            Err(Error::Input(format!(
                "node index {v} outside 0..{}",
                self.num_nodes
            )))
        } else {
            Ok(())
        }
    }
}

/// Nodes at shortest-path distance 1..K from any target, excluding the
/// targets themselves.
pub fn k_hop_neighbors(
    graph: &AttributedGraph,
    targets: &[usize],
    k: usize,
) -> Result<BTreeSet<usize>> {
    if k == 0 {
        return Err(Error::Input("neighborhood radius K must be at least 1".into()));
    }
    let target_set: BTreeSet<usize> = targets.iter().copied().collect();
    for &t in &target_set {
        graph.check_node(t)?;
    }
    let mut seen: BTreeSet<usize> = target_set.clone();
    let mut frontier: Vec<usize> = target_set.iter().copied().collect();
    let mut out = BTreeSet::new();
    for _ in 0..k {
        let mut next = Vec::new();
        for &u in &frontier {
            for &w in graph.neighbors(u) {
                if seen.insert(w) {
                    out.insert(w);
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(out)
}

/// Node budget: round-half-up of `rho * min(B, mean_B)`, at least 1.
pub fn compute_node_budget(b: usize, mean_b: f64, rho: f64) -> Result<usize> {
    if b == 0 {
        return Err(Error::Input("closed neighborhood size must be positive".into()));
    }
    if !(mean_b > 0.0) {
        return Err(Error::Input("mean closed neighborhood size must be positive".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho must be in (0, 1], got {rho}")));
    }
    let inner = (rho * (b as f64).min(mean_b) + 0.5).floor() as usize;
    Ok(inner.max(1))
}

/// Edge budget: `delta` times the round-half-up of `min(d_T, xi * mean
/// degree)`, per-node factor at least 1. Always an exact multiple of `delta`.
pub fn compute_edge_budget(
    delta: usize,
    target_mean_degree: f64,
    graph_mean_degree: f64,
    xi: f64,
) -> Result<usize> {
    if delta == 0 {
        return Err(Error::Input("node budget must be at least 1".into()));
    }
    if !(target_mean_degree > 0.0) || !(graph_mean_degree > 0.0) {
        return Err(Error::Input("degrees must be positive".into()));
    }
    if !(xi > 0.0) {
        return Err(Error::Config(format!("xi must be positive, got {xi}")));
    }
    let per_node = (target_mean_degree.min(xi * graph_mean_degree) + 0.5).floor() as usize;
    Ok(delta * per_node.max(1))
}

/// Injection-rate knobs shared by every budget computation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BudgetParams {
    pub rho: f64,
    pub xi: f64,
}

impl BudgetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must be in (0, 1], got {}", self.rho)));
        }
        if !(self.xi > 0.0) {
            return Err(Error::Config(format!("xi must be positive, got {}", self.xi)));
        }
        Ok(())
    }
}

/// One fraud gang with its per-set injection budgets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSet {
    pub id: String,
    /// Sorted, deduplicated member node indices.
    pub members: Vec<usize>,
    /// B: size of the closed 1-hop neighborhood of the members.
    pub closed_neighborhood_size: usize,
    /// Delta: number of nodes the attacker may inject.
    pub node_budget: usize,
    /// Eta: total number of adversarial edges, always a multiple of Delta.
    pub edge_budget: usize,
    pub split: Split,
}

impl TargetSet {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn mean_member_degree(&self, graph: &AttributedGraph) -> f64 {
        let total: usize = self.members.iter().map(|&t| graph.degree(t)).sum();
        total as f64 / self.members.len() as f64
    }
}

/// Size of the closed 1-hop neighborhood `|N^1(T) ∪ T|`.
pub fn closed_neighborhood_size(graph: &AttributedGraph, members: &[usize]) -> Result<usize> {
    let hop1 = k_hop_neighbors(graph, members, 1)?;
    let member_set: BTreeSet<usize> = members.iter().copied().collect();
    Ok(hop1.len() + member_set.len())
}

/// Builds target sets with budgets attached. The mean closed-neighborhood
/// size is taken over all provided gangs (every split), so budgets are
/// consistent across splits.
pub fn build_target_sets(
    graph: &AttributedGraph,
    gangs: &[(String, Vec<usize>, Split)],
    params: &BudgetParams,
) -> Result<Vec<TargetSet>> {
    params.validate()?;
    if gangs.is_empty() {
        return Err(Error::Config("at least one target set is required".into()));
    }
    let mut sizes = Vec::with_capacity(gangs.len());
    for (id, members, _) in gangs {
        if members.is_empty() {
            return Err(Error::Config(format!("target set {id} is empty")));
        }
        let mut sorted = members.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != members.len() {
            return Err(Error::Config(format!("target set {id} has duplicate members")));
        }
        for &t in &sorted {
            graph.check_node(t)?;
            if graph.label(t) != NodeLabel::Fraud {
                return Err(Error::Config(format!(
                    "target set {id} member {t} is not labeled fraud"
                )));
            }
        }
        sizes.push(closed_neighborhood_size(graph, &sorted)?);
    }
    let mean_b = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    let d_bar = graph.mean_degree();
    let mut out = Vec::with_capacity(gangs.len());
    for ((id, members, split), &b) in gangs.iter().zip(&sizes) {
        let mut sorted = members.clone();
        sorted.sort_unstable();
        let delta = compute_node_budget(b, mean_b, params.rho)?;
        let d_t = sorted.iter().map(|&t| graph.degree(t)).sum::<usize>() as f64
            / sorted.len() as f64;
        let eta = compute_edge_budget(delta, d_t, d_bar, params.xi)?;
        out.push(TargetSet {
            id: id.clone(),
            members: sorted,
            closed_neighborhood_size: b,
            node_budget: delta,
            edge_budget: eta,
            split: *split,
        });
    }
    Ok(out)
}

/// Endpoint of an adversarial edge: an original node or one of the plan's
/// attack nodes (indexed 0..Delta).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeRef {
    Original(usize),
    Attack(usize),
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Original(u) => write!(f, "{u}"),
            NodeRef::Attack(i) => write!(f, "a{i}"),
        }
    }
}

// JSON form: original nodes are plain integers, attack nodes are "a<i>".
impl Serialize for NodeRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NodeRef::Original(u) => s.serialize_u64(*u as u64),
            NodeRef::Attack(i) => s.serialize_str(&format!("a{i}")),
        }
    }
}

impl<'de> Deserialize<'de> for NodeRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = NodeRef;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a node index or an \"a<i>\" attack-node reference")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<NodeRef, E> {
                Ok(NodeRef::Original(v as usize))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<NodeRef, E> {
                if v < 0 {
                    return Err(E::custom("negative node index"));
                }
                Ok(NodeRef::Original(v as usize))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<NodeRef, E> {
                let idx = v
                    .strip_prefix('a')
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .ok_or_else(|| E::custom(format!("malformed attack-node reference {v:?}")))?;
                Ok(NodeRef::Attack(idx))
            }
        }
        d.deserialize_any(V)
    }
}

/// Canonical unordered form: endpoints sorted (originals before attacks,
/// each kind by index).
pub fn canonical_edge(a: NodeRef, b: NodeRef) -> (NodeRef, NodeRef) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Generated attack nodes, their attributes, and adversarial edges.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionPlan {
    pub num_attack_nodes: usize,
    /// Delta x D attribute matrix, one row per attack node.
    pub attack_attributes: Array2<f64>,
    /// Canonically ordered, sorted unordered pairs.
    pub adversarial_edges: Vec<(NodeRef, NodeRef)>,
}

impl InjectionPlan {
    pub fn new(
        num_attack_nodes: usize,
        attack_attributes: Array2<f64>,
        edges: Vec<(NodeRef, NodeRef)>,
    ) -> Self {
        let mut adversarial_edges: Vec<(NodeRef, NodeRef)> = edges
            .into_iter()
            .map(|(a, b)| canonical_edge(a, b))
            .collect();
        adversarial_edges.sort_unstable();
        InjectionPlan {
            num_attack_nodes,
            attack_attributes,
            adversarial_edges,
        }
    }

    /// Checks every structural and budget invariant against a target set.
    /// The error message names the violated invariant.
    pub fn validate(&self, graph: &AttributedGraph, targets: &TargetSet) -> Result<()> {
        if self.num_attack_nodes != targets.node_budget {
            return Err(Error::Plan(format!(
                "node budget mismatch: plan has {} attack nodes, budget is {}",
                self.num_attack_nodes, targets.node_budget
            )));
        }
        if self.attack_attributes.nrows() != self.num_attack_nodes {
            return Err(Error::Plan(format!(
                "attribute matrix has {} rows for {} attack nodes",
                self.attack_attributes.nrows(),
                self.num_attack_nodes
            )));
        }
        if self.attack_attributes.ncols() != graph.attr_dim() {
            return Err(Error::Plan(format!(
                "attribute dimension {} does not match graph dimension {}",
                self.attack_attributes.ncols(),
                graph.attr_dim()
            )));
        }
        if self.adversarial_edges.len() > targets.edge_budget {
            return Err(Error::Plan(format!(
                "edge budget exceeded: {} edges over budget {}",
                self.adversarial_edges.len(),
                targets.edge_budget
            )));
        }
        if graph.attribute_kind() == AttributeKind::Discrete
            && self.attack_attributes.iter().any(|&x| x != 0.0 && x != 1.0)
        {
            return Err(Error::Plan(
                "discrete attack attributes contain non-binary entries".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        let mut target_touched = vec![false; self.num_attack_nodes];
        for &(a, b) in &self.adversarial_edges {
            if a == b {
                return Err(Error::Plan(format!("self-loop on {a}")));
            }
            if !seen.insert(canonical_edge(a, b)) {
                return Err(Error::Plan(format!("duplicate edge ({a}, {b})")));
            }
            let mut has_attack = false;
            for end in [a, b] {
                match end {
                    NodeRef::Original(u) => {
                        if u >= graph.num_nodes() {
                            return Err(Error::Plan(format!(
                                "edge endpoint {u} outside the original graph"
                            )));
                        }
                    }
                    NodeRef::Attack(i) => {
                        if i >= self.num_attack_nodes {
                            return Err(Error::Plan(format!(
                                "edge endpoint a{i} outside 0..{}",
                                self.num_attack_nodes
                            )));
                        }
                        has_attack = true;
                    }
                }
            }
            if !has_attack {
                return Err(Error::Plan(format!(
                    "edge ({a}, {b}) has no attack-node endpoint"
                )));
            }
            for (x, y) in [(a, b), (b, a)] {
                if let (NodeRef::Attack(i), NodeRef::Original(u)) = (x, y) {
                    if targets.members.binary_search(&u).is_ok() {
                        target_touched[i] = true;
                    }
                }
            }
        }
        if let Some(i) = target_touched.iter().position(|&t| !t) {
            return Err(Error::Plan(format!(
                "attack node a{i} has no edge to a target node"
            )));
        }
        Ok(())
    }
}

/// New graph with the plan's attack nodes appended after the original
/// indices. Attack nodes are unlabeled; original edges and attributes are
/// untouched. The plan is validated first.
pub fn apply_injection(
    graph: &AttributedGraph,
    plan: &InjectionPlan,
    targets: &TargetSet,
) -> Result<AttributedGraph> {
    plan.validate(graph, targets)?;
    let n = graph.num_nodes();
    let delta = plan.num_attack_nodes;
    let map = |r: NodeRef| -> usize {
        match r {
            NodeRef::Original(u) => u,
            NodeRef::Attack(i) => n + i,
        }
    };
    let mut edges = graph.edges().to_vec();
    edges.extend(plan.adversarial_edges.iter().map(|&(a, b)| (map(a), map(b))));
    let d = graph.attr_dim();
    let mut attributes = Array2::zeros((n + delta, d));
    attributes
        .slice_mut(ndarray::s![..n, ..])
        .assign(graph.attributes());
    attributes
        .slice_mut(ndarray::s![n.., ..])
        .assign(&plan.attack_attributes);
    let mut labels = graph.labels().to_vec();
    labels.extend(std::iter::repeat(NodeLabel::Unlabeled).take(delta));
    AttributedGraph::new(n + delta, edges, attributes, graph.attribute_kind(), labels)
}

/// Aggregate statistics used by budget formulas and attribute generation.
#[derive(Clone, Debug)]
pub struct GraphStatistics {
    /// Mean closed-neighborhood size over the provided target sets.
    pub mean_closed_neighborhood: f64,
    /// Mean simple degree 2|E|/n.
    pub mean_degree: f64,
    pub attr_min: Vec<f64>,
    pub attr_max: Vec<f64>,
    /// Rounded mean count of nonzero attributes per node, at least 1.
    pub mean_nonzero_attrs: usize,
}

pub fn compute_statistics(
    graph: &AttributedGraph,
    target_sets: &[TargetSet],
) -> Result<GraphStatistics> {
    if target_sets.is_empty() {
        return Err(Error::Config(
            "statistics require at least one target set".into(),
        ));
    }
    let x = graph.attributes();
    let d = x.ncols();
    let mut attr_min = vec![f64::INFINITY; d];
    let mut attr_max = vec![f64::NEG_INFINITY; d];
    let mut nonzero_total = 0usize;
    for row in x.rows() {
        for (j, &v) in row.iter().enumerate() {
            attr_min[j] = attr_min[j].min(v);
            attr_max[j] = attr_max[j].max(v);
            if v != 0.0 {
                nonzero_total += 1;
            }
        }
    }
    let mean_nonzero = nonzero_total as f64 / graph.num_nodes() as f64;
    let lambda = ((mean_nonzero + 0.5).floor() as usize).max(1);
    let mean_b = target_sets
        .iter()
        .map(|t| t.closed_neighborhood_size as f64)
        .sum::<f64>()
        / target_sets.len() as f64;
    Ok(GraphStatistics {
        mean_closed_neighborhood: mean_b,
        mean_degree: graph.mean_degree(),
        attr_min,
        attr_max,
        mean_nonzero_attrs: lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> AttributedGraph {
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        AttributedGraph::new(
            n,
            edges,
            Array2::zeros((n, 2)),
            AttributeKind::Continuous,
            vec![NodeLabel::Benign; n],
        )
        .unwrap()
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let attrs = Array2::zeros((3, 2));
        let labels = vec![NodeLabel::Benign; 3];
        let err = AttributedGraph::new(
            3,
            vec![(0, 0)],
            attrs.clone(),
            AttributeKind::Continuous,
            labels.clone(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("self-loop"));
        let err = AttributedGraph::new(
            3,
            vec![(0, 1), (1, 0)],
            attrs,
            AttributeKind::Continuous,
            labels,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn rejects_non_binary_discrete() {
        let mut attrs = Array2::zeros((2, 2));
        attrs[[0, 1]] = 0.5;
        let err = AttributedGraph::new(
            2,
            vec![(0, 1)],
            attrs,
            AttributeKind::Discrete,
            vec![NodeLabel::Benign; 2],
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-binary"));
    }

    #[test]
    fn k_hop_on_path_graph() {
        let g = path_graph(4);
        let got = k_hop_neighbors(&g, &[0], 2).unwrap();
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn k_hop_all_targets_is_empty() {
        let g = path_graph(5);
        let got = k_hop_neighbors(&g, &[0, 1, 2, 3, 4], 1).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn k_hop_rejects_bad_index() {
        let g = path_graph(3);
        assert!(k_hop_neighbors(&g, &[7], 1).is_err());
    }

    #[test]
    fn node_budget_hand_cases() {
        assert_eq!(compute_node_budget(100, 50.0, 0.05).unwrap(), 3);
        assert_eq!(compute_node_budget(1, 1000.0, 0.05).unwrap(), 1);
        assert_eq!(compute_node_budget(40, 100.0, 0.2).unwrap(), 8);
    }

    #[test]
    fn node_budget_rejects_bad_rho() {
        assert!(compute_node_budget(10, 10.0, 0.0).is_err());
        assert!(compute_node_budget(10, 10.0, 1.5).is_err());
    }

    #[test]
    fn edge_budget_hand_cases() {
        assert_eq!(compute_edge_budget(3, 10.0, 8.0, 0.5).unwrap(), 12);
        assert_eq!(compute_edge_budget(5, 0.4, 100.0, 0.5).unwrap(), 5);
        assert_eq!(compute_edge_budget(2, 3.2, 4.0, 0.5).unwrap(), 4);
    }

    fn tiny_fixture() -> (AttributedGraph, TargetSet) {
        // Path 0-1-2-3 with node 1 fraud; rho=0.1, xi=0.5 give the minimal
        // budgets Delta=1, eta=1.
        let mut labels = vec![NodeLabel::Benign; 4];
        labels[1] = NodeLabel::Fraud;
        let g = AttributedGraph::new(
            4,
            vec![(0, 1), (1, 2), (2, 3)],
            Array2::zeros((4, 2)),
            AttributeKind::Continuous,
            labels,
        )
        .unwrap();
        let sets = build_target_sets(
            &g,
            &[("g0".into(), vec![1], Split::Test)],
            &BudgetParams { rho: 0.1, xi: 0.5 },
        )
        .unwrap();
        let t = sets.into_iter().next().unwrap();
        assert_eq!(t.closed_neighborhood_size, 3);
        assert_eq!(t.node_budget, 1);
        assert_eq!(t.edge_budget, 1);
        (g, t)
    }

    #[test]
    fn minimal_injection_adds_node_and_edge() {
        let (g, t) = tiny_fixture();
        let plan = InjectionPlan::new(
            1,
            Array2::zeros((1, 2)),
            vec![(NodeRef::Attack(0), NodeRef::Original(1))],
        );
        let g2 = apply_injection(&g, &plan, &t).unwrap();
        assert_eq!(g2.num_nodes(), 5);
        assert_eq!(g2.num_edges(), 4);
        assert_eq!(g2.label(4), NodeLabel::Unlabeled);
        assert!(g2.has_edge(1, 4));
    }

    #[test]
    fn edge_budget_violation_is_named() {
        let (g, t) = tiny_fixture();
        let plan = InjectionPlan::new(
            1,
            Array2::zeros((1, 2)),
            vec![
                (NodeRef::Attack(0), NodeRef::Original(1)),
                (NodeRef::Attack(0), NodeRef::Original(2)),
            ],
        );
        let err = apply_injection(&g, &plan, &t).unwrap_err();
        assert!(err.to_string().contains("edge budget exceeded"));
    }

    #[test]
    fn dangling_attack_node_is_rejected() {
        let (g, t) = tiny_fixture();
        // Edge to a non-target original node only.
        let plan = InjectionPlan::new(
            1,
            Array2::zeros((1, 2)),
            vec![(NodeRef::Attack(0), NodeRef::Original(0))],
        );
        let err = apply_injection(&g, &plan, &t).unwrap_err();
        assert!(err.to_string().contains("no edge to a target"));
    }

    #[test]
    fn plan_rejects_duplicates_in_both_orientations() {
        let (g, t) = tiny_fixture();
        let plan = InjectionPlan::new(
            1,
            Array2::zeros((1, 2)),
            vec![
                (NodeRef::Attack(0), NodeRef::Original(1)),
                (NodeRef::Original(1), NodeRef::Attack(0)),
            ],
        );
        assert!(plan.validate(&g, &t).is_err());
    }

    #[test]
    fn removing_attack_nodes_restores_the_graph() {
        let (g, t) = tiny_fixture();
        let plan = InjectionPlan::new(
            1,
            Array2::zeros((1, 2)),
            vec![(NodeRef::Attack(0), NodeRef::Original(1))],
        );
        let g2 = apply_injection(&g, &plan, &t).unwrap();
        let restored_edges: Vec<(usize, usize)> = g2
            .edges()
            .iter()
            .copied()
            .filter(|&(u, v)| u < g.num_nodes() && v < g.num_nodes())
            .collect();
        assert_eq!(restored_edges, g.edges());
        assert_eq!(
            g2.attributes().slice(ndarray::s![..g.num_nodes(), ..]),
            g.attributes()
        );
    }

    #[test]
    fn statistics_extrema_and_lambda() {
        let x = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let mut labels = vec![NodeLabel::Benign; 2];
        labels[0] = NodeLabel::Fraud;
        let g = AttributedGraph::new(2, vec![(0, 1)], x, AttributeKind::Continuous, labels)
            .unwrap();
        let sets = build_target_sets(
            &g,
            &[("g0".into(), vec![0], Split::Train)],
            &BudgetParams { rho: 0.5, xi: 0.5 },
        )
        .unwrap();
        let stats = compute_statistics(&g, &sets).unwrap();
        assert_eq!(stats.attr_min, vec![0.0, 1.0]);
        assert_eq!(stats.attr_max, vec![2.0, 3.0]);
        // Rows have 1 and 2 nonzeros; mean 1.5 rounds half up to 2.
        assert_eq!(stats.mean_nonzero_attrs, 2);
        assert_eq!(stats.mean_closed_neighborhood, 2.0);
    }

    #[test]
    fn lambda_rounds_mean_of_two_and_four_to_three() {
        let mut x = Array2::zeros((2, 5));
        for j in 0..2 {
            x[[0, j]] = 1.0;
        }
        for j in 0..4 {
            x[[1, j]] = 1.0;
        }
        let mut labels = vec![NodeLabel::Benign; 2];
        labels[0] = NodeLabel::Fraud;
        let g =
            AttributedGraph::new(2, vec![(0, 1)], x, AttributeKind::Discrete, labels).unwrap();
        let sets = build_target_sets(
            &g,
            &[("g0".into(), vec![0], Split::Train)],
            &BudgetParams { rho: 0.5, xi: 0.5 },
        )
        .unwrap();
        assert_eq!(compute_statistics(&g, &sets).unwrap().mean_nonzero_attrs, 3);
    }

    #[test]
    fn statistics_need_target_sets() {
        let g = path_graph(3);
        assert!(compute_statistics(&g, &[]).is_err());
    }
}
