//! On-disk dataset format, deterministic splitting, and injection-plan files.
//!
//! A dataset directory holds `meta.json`, `edges.txt`, `features.csv`,
//! `labels.csv`, `target_sets.json`, and `splits.json`. Text files are UTF-8
//! with `#` comment lines allowed. Budgets are recomputed at load time from
//! the caller's rho and xi, so the same directory serves any budget setting.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_target_sets, AttributeKind, AttributedGraph, BudgetParams, InjectionPlan, NodeLabel,
    NodeRef, Split, TargetSet,
};

/// A graph, its target sets with budgets, and the node-level splits.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub graph: AttributedGraph,
    pub target_sets: Vec<TargetSet>,
    pub train_nodes: Vec<usize>,
    pub val_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
}

impl DatasetBundle {
    /// Checks split disjointness/coverage and target-set containment.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        let mut assignment: Vec<Option<Split>> = vec![None; n];
        for (split, nodes) in [
            (Split::Train, &self.train_nodes),
            (Split::Val, &self.val_nodes),
            (Split::Test, &self.test_nodes),
        ] {
            for &v in nodes {
                if v >= n {
                    return Err(Error::Graph(format!("split node {v} outside 0..{n}")));
                }
                if assignment[v].is_some() {
                    return Err(Error::Graph(format!("node {v} appears in two splits")));
                }
                assignment[v] = Some(split);
            }
        }
        for v in 0..n {
            let labeled = self.graph.label(v) != NodeLabel::Unlabeled;
            if labeled && assignment[v].is_none() {
                return Err(Error::Graph(format!("labeled node {v} is in no split")));
            }
        }
        if self.target_sets.is_empty() {
            return Err(Error::Graph("bundle has no target sets".into()));
        }
        for set in &self.target_sets {
            if set.members.is_empty() {
                return Err(Error::Graph(format!("target set {} is empty", set.id)));
            }
            for &t in &set.members {
                if assignment[t] != Some(set.split) {
                    return Err(Error::Graph(format!(
                        "target set {} member {t} is not in split {}",
                        set.id, set.split
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sets_in(&self, split: Split) -> Vec<&TargetSet> {
        self.target_sets.iter().filter(|s| s.split == split).collect()
    }

    pub fn split_nodes(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_nodes,
            Split::Val => &self.val_nodes,
            Split::Test => &self.test_nodes,
        }
    }

    /// (node, class) pairs for the labeled nodes of a split, in node order.
    pub fn labeled_in(&self, split: Split) -> Vec<(usize, usize)> {
        self.split_nodes(split)
            .iter()
            .filter_map(|&v| self.graph.label(v).class().map(|c| (v, c)))
            .collect()
    }
}

/// Partitions labeled nodes into train / val / test with fractions
/// `p, (1-p)/3, 2(1-p)/3`, keeping each gang intact inside one split, and
/// attaches budgets. Deterministic given the seed.
pub fn split_dataset(
    graph: AttributedGraph,
    gangs: &[Vec<usize>],
    p: f64,
    seed: u64,
    budgets: &BudgetParams,
) -> Result<DatasetBundle> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1), got {p}")));
    }
    if gangs.is_empty() {
        return Err(Error::Config("at least one gang is required".into()));
    }
    let mut in_gang = vec![false; graph.num_nodes()];
    for gang in gangs {
        if gang.is_empty() {
            return Err(Error::Config("empty gang".into()));
        }
        for &v in gang {
            if v >= graph.num_nodes() {
                return Err(Error::Config(format!("gang member {v} outside the graph")));
            }
            if in_gang[v] {
                return Err(Error::Config(format!("node {v} belongs to two gangs")));
            }
            in_gang[v] = true;
        }
    }

    let labeled: Vec<usize> = (0..graph.num_nodes())
        .filter(|&v| graph.label(v) != NodeLabel::Unlabeled)
        .collect();
    let n_l = labeled.len() as f64;
    let train_q = (p * n_l).round() as i64;
    let val_q = ((1.0 - p) / 3.0 * n_l).round() as i64;
    let test_q = labeled.len() as i64 - train_q - val_q;
    let mut remaining = [train_q, val_q, test_q];

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut gang_order: Vec<usize> = (0..gangs.len()).collect();
    gang_order.shuffle(&mut rng);

    // First three shuffled gangs seed one split each so every split has at
    // least one target set whenever possible; the rest go wherever the most
    // quota is left (ties broken train < val < test).
    let mut gang_split: Vec<Split> = vec![Split::Train; gangs.len()];
    let splits = [Split::Train, Split::Val, Split::Test];
    for (pos, &g) in gang_order.iter().enumerate() {
        let size = gangs[g].len() as i64;
        let k = if pos < 3 && gangs.len() >= 3 {
            pos
        } else {
            let mut best = 0;
            for k in 1..3 {
                if remaining[k] > remaining[best] {
                    best = k;
                }
            }
            best
        };
        gang_split[g] = splits[k];
        remaining[k] -= size;
    }

    // Fill the rest of the quotas with the non-gang labeled nodes.
    let mut loose: Vec<usize> = labeled.iter().copied().filter(|&v| !in_gang[v]).collect();
    loose.shuffle(&mut rng);
    let mut split_members: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (g, gang) in gangs.iter().enumerate() {
        let k = splits.iter().position(|&s| s == gang_split[g]).unwrap();
        split_members[k].extend(gang.iter().copied());
    }
    let mut cursor = 0;
    for k in 0..3 {
        while remaining[k] > 0 && cursor < loose.len() {
            split_members[k].push(loose[cursor]);
            cursor += 1;
            remaining[k] -= 1;
        }
    }
    // Quota overshoot elsewhere can leave stragglers; they join test.
    split_members[2].extend(loose[cursor..].iter().copied());

    for members in &mut split_members {
        members.sort_unstable();
    }
    let [train_nodes, val_nodes, test_nodes] = split_members;

    let triples: Vec<(String, Vec<usize>, Split)> = gangs
        .iter()
        .enumerate()
        .map(|(g, members)| (format!("g{g:03}"), members.clone(), gang_split[g]))
        .collect();
    let target_sets = build_target_sets(&graph, &triples, budgets)?;

    let bundle = DatasetBundle {
        graph,
        target_sets,
        train_nodes,
        val_nodes,
        test_nodes,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    num_nodes: usize,
    attr_dim: usize,
    attribute_kind: AttributeKind,
}

#[derive(Serialize, Deserialize)]
struct TargetSetFile {
    members: Vec<usize>,
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json_from_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Lines with their 1-based numbers, comments and blanks stripped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Loads a dataset directory and computes budgets with the given parameters.
pub fn load_dataset(dir: impl AsRef<Path>, budgets: &BudgetParams) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let meta: MetaFile = json_from_file(&dir.join("meta.json"))?;
    let n = meta.num_nodes;
    if n == 0 {
        return Err(Error::parse(dir.join("meta.json"), 1, "num_nodes must be positive"));
    }

    let edges_path = dir.join("edges.txt");
    let edges_text = read_to_string(&edges_path)?;
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(&edges_text) {
        let mut it = line.split_whitespace();
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => {
                let u: usize = a.parse().map_err(|_| {
                    Error::parse(&edges_path, line_no, format!("bad node index {a:?}"))
                })?;
                let v: usize = b.parse().map_err(|_| {
                    Error::parse(&edges_path, line_no, format!("bad node index {b:?}"))
                })?;
                (u, v)
            }
            _ => {
                return Err(Error::parse(
                    &edges_path,
                    line_no,
                    format!("expected \"u v\", got {line:?}"),
                ))
            }
        };
        if u >= v {
            return Err(Error::parse(
                &edges_path,
                line_no,
                format!("edges must satisfy u < v, got {u} {v}"),
            ));
        }
        edges.push((u, v));
    }

    let features_path = dir.join("features.csv");
    let features_text = read_to_string(&features_path)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (line_no, line) in content_lines(&features_text) {
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::parse(&features_path, line_no, format!("bad number {cell:?}"))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != meta.attr_dim {
            return Err(Error::parse(
                &features_path,
                line_no,
                format!("expected {} values, got {}", meta.attr_dim, row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::parse(
            &features_path,
            rows.len() + 1,
            format!("expected {n} feature rows, got {}", rows.len()),
        ));
    }
    let mut attributes = Array2::zeros((n, meta.attr_dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            attributes[[i, j]] = v;
        }
    }

    let labels_path = dir.join("labels.csv");
    let labels_text = read_to_string(&labels_path)?;
    let mut labels = vec![None; n];
    for (line_no, line) in content_lines(&labels_text) {
        let mut it = line.split(',');
        let (node, label) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a.trim(), b.trim()),
            _ => {
                return Err(Error::parse(
                    &labels_path,
                    line_no,
                    format!("expected \"node,label\", got {line:?}"),
                ))
            }
        };
        let node: usize = node.parse().map_err(|_| {
            Error::parse(&labels_path, line_no, format!("bad node index {node:?}"))
        })?;
        if node >= n {
            return Err(Error::parse(
                &labels_path,
                line_no,
                format!("node {node} outside 0..{n}"),
            ));
        }
        let value: i64 = label.parse().map_err(|_| {
            Error::parse(&labels_path, line_no, format!("bad label {label:?}"))
        })?;
        let parsed = NodeLabel::from_int(value).ok_or_else(|| {
            Error::parse(&labels_path, line_no, format!("label {value} outside {{0,1}}"))
        })?;
        if labels[node].replace(parsed).is_some() {
            return Err(Error::parse(
                &labels_path,
                line_no,
                format!("node {node} labeled twice"),
            ));
        }
    }
    let labels: Vec<NodeLabel> = labels
        .into_iter()
        .enumerate()
        .map(|(v, l)| l.ok_or_else(|| Error::parse(&labels_path, 0, format!("node {v} has no label"))))
        .collect::<Result<_>>()?;

    let graph = AttributedGraph::new(n, edges, attributes, meta.attribute_kind, labels)?;

    let sets_path = dir.join("target_sets.json");
    let raw_sets: Vec<TargetSetFile> = json_from_file(&sets_path)?;
    let triples: Vec<(String, Vec<usize>, Split)> = raw_sets
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("g{i:03}"), s.members, s.split))
        .collect();
    let target_sets = build_target_sets(&graph, &triples, budgets)?;

    let splits: SplitsFile = json_from_file(&dir.join("splits.json"))?;
    let bundle = DatasetBundle {
        graph,
        target_sets,
        train_nodes: splits.train,
        val_nodes: splits.val,
        test_nodes: splits.test,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(content.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes a bundle as a dataset directory (creating it if needed).
pub fn save_dataset(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &bundle.graph;

    let meta = MetaFile {
        num_nodes: g.num_nodes(),
        attr_dim: g.attr_dim(),
        attribute_kind: g.attribute_kind(),
    };
    write_file(
        &dir.join("meta.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;

    let mut edges = String::from("# u v (0-based, u < v)\n");
    for &(u, v) in g.edges() {
        edges.push_str(&format!("{u} {v}\n"));
    }
    write_file(&dir.join("edges.txt"), &edges)?;

    let mut features = String::new();
    for row in g.attributes().rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        features.push_str(&cells.join(","));
        features.push('\n');
    }
    write_file(&dir.join("features.csv"), &features)?;

    let mut labels = String::from("# node,label\n");
    for v in 0..g.num_nodes() {
        if let Some(c) = g.label(v).class() {
            labels.push_str(&format!("{v},{c}\n"));
        }
    }
    write_file(&dir.join("labels.csv"), &labels)?;

    let sets: Vec<TargetSetFile> = bundle
        .target_sets
        .iter()
        .map(|s| TargetSetFile {
            members: s.members.clone(),
            split: s.split,
        })
        .collect();
    write_file(
        &dir.join("target_sets.json"),
        &serde_json::to_string_pretty(&sets).expect("target sets serialize"),
    )?;

    let splits = SplitsFile {
        train: bundle.train_nodes.clone(),
        val: bundle.val_nodes.clone(),
        test: bundle.test_nodes.clone(),
    };
    write_file(
        &dir.join("splits.json"),
        &serde_json::to_string_pretty(&splits).expect("splits serialize"),
    )?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    num_attack_nodes: usize,
    attributes: Vec<Vec<f64>>,
    edges: Vec<(NodeRef, NodeRef)>,
}

/// Writes an injection plan as `injection.json`.
pub fn save_injection(plan: &InjectionPlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = PlanFile {
        num_attack_nodes: plan.num_attack_nodes,
        attributes: plan
            .attack_attributes
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        edges: plan.adversarial_edges.clone(),
    };
    write_file(path, &serde_json::to_string_pretty(&file).expect("plan serializes"))
}

/// Reads an injection plan, checking internal consistency (attack indices
/// within range, attribute rows matching the node count).
pub fn load_injection(path: impl AsRef<Path>) -> Result<InjectionPlan> {
    let path = path.as_ref();
    let file: PlanFile = json_from_file(path)?;
    if file.attributes.len() != file.num_attack_nodes {
        return Err(Error::parse(
            path,
            0,
            format!(
                "{} attribute rows for {} attack nodes",
                file.attributes.len(),
                file.num_attack_nodes
            ),
        ));
    }
    let d = file.attributes.first().map_or(0, Vec::len);
    let mut attrs = Array2::zeros((file.num_attack_nodes, d));
    for (i, row) in file.attributes.iter().enumerate() {
        if row.len() != d {
            return Err(Error::parse(path, 0, format!("ragged attribute row {i}")));
        }
        for (j, &v) in row.iter().enumerate() {
            attrs[[i, j]] = v;
        }
    }
    for &(a, b) in &file.edges {
        for end in [a, b] {
            if let NodeRef::Attack(i) = end {
                if i >= file.num_attack_nodes {
                    return Err(Error::parse(
                        path,
                        0,
                        format!("edge references attack node a{i} of {}", file.num_attack_nodes),
                    ));
                }
            }
        }
    }
    Ok(InjectionPlan::new(file.num_attack_nodes, attrs, file.edges))
}
