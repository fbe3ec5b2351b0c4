//! Attack-effectiveness metrics: size-weighted misclassification rates over
//! target sets, neighborhood-size category breakdowns, and collateral impact
//! on non-target nodes.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::graph::{apply_injection, AttributedGraph, InjectionPlan, Split, TargetSet};

/// Macro-averaged F1 over the two classes. A class absent from both
/// predictions and truth contributes 0.
pub fn macro_f1(preds: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(preds.len(), truth.len());
    let mut sum = 0.0;
    for class in 0..2 {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &t) in preds.iter().zip(truth) {
            match (p == class, t == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rec = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        sum += f1;
    }
    sum / 2.0
}

/// Predicted class per row: argmax with ties toward class 0.
pub(crate) fn predicted_classes(scores: &Array2<f64>) -> Vec<usize> {
    (0..scores.nrows())
        .map(|i| if scores[[i, 1]] > scores[[i, 0]] { 1 } else { 0 })
        .collect()
}

pub(crate) fn rate_from_scores(scores: &Array2<f64>, labels: &[usize]) -> f64 {
    let preds = predicted_classes(scores);
    let wrong = preds.iter().zip(labels).filter(|&(p, t)| p != t).count();
    wrong as f64 / labels.len() as f64
}

/// Fraction of `nodes` whose predicted class differs from the paired label.
pub fn misclassification_rate(
    detector: &DetectorModel,
    graph: &AttributedGraph,
    nodes: &[usize],
    labels: &[usize],
) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Input("misclassification over an empty node set".into()));
    }
    if nodes.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} nodes but {} labels",
            nodes.len(),
            labels.len()
        )));
    }
    let scores = detector.predict_scores(graph, nodes)?;
    Ok(rate_from_scores(&scores, labels))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerSetRow {
    pub set_id: String,
    pub size: usize,
    pub closed_neighborhood_size: usize,
    pub clean_misclassification: f64,
    pub attacked_misclassification: f64,
    /// Present when the row could not be fully evaluated (e.g. no plan was
    /// supplied); the attacked rate then repeats the clean rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BucketRates {
    pub total_size: usize,
    pub clean: f64,
    pub attacked: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackReport {
    pub per_set: Vec<PerSetRow>,
    pub weighted_clean: f64,
    pub weighted_attacked: f64,
    /// Buckets keyed by closed-neighborhood-size range; empty buckets are
    /// absent.
    pub category_breakdown: BTreeMap<String, BucketRates>,
    pub non_target_clean: f64,
    pub non_target_attacked: f64,
}

pub const CATEGORY_THRESHOLDS: [usize; 2] = [10, 1000];

fn weighted_rate(rows: &[PerSetRow], pick: impl Fn(&PerSetRow) -> f64) -> f64 {
    let total: usize = rows.iter().map(|r| r.size).sum();
    if total == 0 {
        return 0.0;
    }
    rows.iter().map(|r| r.size as f64 * pick(r)).sum::<f64>() / total as f64
}

/// Groups rows by closed-neighborhood size into `(≤ t0, (t0, t1], > t1)` and
/// computes size-weighted rates per nonempty bucket.
pub fn category_breakdown(
    rows: &[PerSetRow],
    thresholds: [usize; 2],
) -> BTreeMap<String, BucketRates> {
    let [t0, t1] = thresholds;
    assert!(t0 < t1, "thresholds must be increasing");
    let names = [
        format!("B<={t0}"),
        format!("{t0}<B<={t1}"),
        format!("B>{t1}"),
    ];
    let mut out = BTreeMap::new();
    for (bucket, name) in names.iter().enumerate() {
        let members: Vec<PerSetRow> = rows
            .iter()
            .filter(|r| {
                let b = r.closed_neighborhood_size;
                match bucket {
                    0 => b <= t0,
                    1 => b > t0 && b <= t1,
                    _ => b > t1,
                }
            })
            .cloned()
            .collect();
        if members.is_empty() {
            continue;
        }
        out.insert(
            name.clone(),
            BucketRates {
                total_size: members.iter().map(|r| r.size).sum(),
                clean: weighted_rate(&members, |r| r.clean_misclassification),
                attacked: weighted_rate(&members, |r| r.attacked_misclassification),
            },
        );
    }
    out
}

fn labels_for(graph: &AttributedGraph, nodes: &[usize]) -> Result<Vec<usize>> {
    nodes
        .iter()
        .map(|&v| {
            graph.label(v).class().ok_or_else(|| {
                Error::Input(format!("node {v} is unlabeled and cannot be scored"))
            })
        })
        .collect()
}

/// Evaluates each test-split target set's plan independently against the
/// victim detector. Clean predictions are computed once on the unperturbed
/// graph; each plan is applied to a fresh copy. Non-target rates cover every
/// labeled test node outside all evaluated sets, with the attacked figure
/// averaged over the per-set perturbations.
pub fn evaluate_attack(
    detector: &DetectorModel,
    bundle: &DatasetBundle,
    plans: &BTreeMap<String, InjectionPlan>,
) -> Result<AttackReport> {
    let sets: Vec<&TargetSet> = bundle.sets_in(Split::Test);
    if sets.is_empty() {
        return Err(Error::Input("no test-split target sets to evaluate".into()));
    }
    let graph = &bundle.graph;
    let in_target: std::collections::BTreeSet<usize> =
        sets.iter().flat_map(|s| s.members.iter().cloned()).collect();
    let non_target: Vec<usize> = bundle
        .labeled_in(Split::Test)
        .into_iter()
        .map(|(v, _)| v)
        .filter(|v| !in_target.contains(v))
        .collect();
    let non_target_labels = labels_for(graph, &non_target)?;

    let (_, clean_scores) = detector.forward_full(graph)?;
    let clean_rate_of = |nodes: &[usize], labels: &[usize]| -> f64 {
        let preds = predicted_classes(&clean_scores);
        let wrong = nodes
            .iter()
            .zip(labels)
            .filter(|&(&v, t)| preds[v] != *t)
            .count();
        wrong as f64 / nodes.len() as f64
    };

    struct SetOutcome {
        row: PerSetRow,
        non_target_attacked: Option<f64>,
    }

    let outcomes: Vec<SetOutcome> = sets
        .iter()
        .map(|set| -> Result<SetOutcome> {
            let members = &set.members;
            let member_labels = labels_for(graph, members)?;
            let clean = clean_rate_of(members, &member_labels);
            let (attacked, nt_attacked, warning) = match plans.get(&set.id) {
                Some(plan) => {
                    let perturbed = apply_injection(graph, plan, set)?;
                    let (_, scores) = detector.forward_full(&perturbed)?;
                    let preds = predicted_classes(&scores);
                    let wrong = members
                        .iter()
                        .zip(&member_labels)
                        .filter(|&(&v, t)| preds[v] != *t)
                        .count();
                    let rate = wrong as f64 / members.len() as f64;
                    let nt = if non_target.is_empty() {
                        None
                    } else {
                        let nt_wrong = non_target
                            .iter()
                            .zip(&non_target_labels)
                            .filter(|&(&v, t)| preds[v] != *t)
                            .count();
                        Some(nt_wrong as f64 / non_target.len() as f64)
                    };
                    (rate, nt, None)
                }
                None => (clean, None, Some("missing plan".to_string())),
            };
            Ok(SetOutcome {
                row: PerSetRow {
                    set_id: set.id.clone(),
                    size: set.size(),
                    closed_neighborhood_size: set.closed_neighborhood_size,
                    clean_misclassification: clean,
                    attacked_misclassification: attacked,
                    warning,
                },
                non_target_attacked: nt_attacked,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_set: Vec<PerSetRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    let non_target_clean = if non_target.is_empty() {
        0.0
    } else {
        clean_rate_of(&non_target, &non_target_labels)
    };
    let attacked_samples: Vec<f64> =
        outcomes.iter().filter_map(|o| o.non_target_attacked).collect();
    let non_target_attacked = if attacked_samples.is_empty() {
        non_target_clean
    } else {
        attacked_samples.iter().sum::<f64>() / attacked_samples.len() as f64
    };

    Ok(AttackReport {
        weighted_clean: weighted_rate(&per_set, |r| r.clean_misclassification),
        weighted_attacked: weighted_rate(&per_set, |r| r.attacked_misclassification),
        category_breakdown: category_breakdown(&per_set, CATEGORY_THRESHOLDS),
        per_set,
        non_target_clean,
        non_target_attacked,
    })
}

impl AttackReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per target set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "set_id,size,closed_neighborhood_size,clean_misclassification,attacked_misclassification,warning\n",
        );
        for r in &self.per_set {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.set_id,
                r.size,
                r.closed_neighborhood_size,
                r.clean_misclassification,
                r.attacked_misclassification,
                r.warning.as_deref().unwrap_or("")
            ));
        }
        out
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}
