//! Evaluates a set of injection plans against a victim detector and prints
//! the resulting report as JSON and CSV.
//!
//! Uses random-injection plans so the example stays fast; the report format
//! is identical for trained attacks.

use std::collections::BTreeMap;

use gangforge::ablation::random_injection;
use gangforge::detector::{train_detector, DetectorConfig};
use gangforge::eval::evaluate_attack;
use gangforge::graph::{compute_statistics, AttributeKind, BudgetParams, InjectionPlan, Split};
use gangforge::synth::{generate_synthetic_fraud_graph, SynthConfig};

fn main() {
    let synth = SynthConfig {
        num_nodes: 400,
        fraud_fraction: 0.15,
        num_gangs: 12,
        gang_size_range: (3, 5),
        intra_gang_edge_prob: 0.8,
        camouflage_edge_prob: 0.02,
        background_edge_prob: 0.008,
        attr_dim: 8,
        attribute_kind: AttributeKind::Continuous,
        class_separation: 2.0,
        seed: 29,
    };
    let bundle =
        generate_synthetic_fraud_graph(&synth, 0.4, &BudgetParams { rho: 0.3, xi: 1.0 })
            .expect("bundle");
    let victim = train_detector(
        &bundle,
        &DetectorConfig { hidden_dim: 16, max_epochs: 200, patience: 40, seed: 2, ..DetectorConfig::default() },
    )
    .expect("victim");
    let stats = compute_statistics(&bundle.graph, &bundle.target_sets).expect("stats");

    let plans: BTreeMap<String, InjectionPlan> = bundle
        .sets_in(Split::Test)
        .iter()
        .enumerate()
        .map(|(i, set)| {
            let plan = random_injection(&bundle.graph, set, &stats, 2, 100 + i as u64)
                .expect("random plan");
            (set.id.clone(), plan)
        })
        .collect();

    let report = evaluate_attack(&victim, &bundle, &plans).expect("report");
    println!("{}", report.to_json());
    println!();
    println!("{}", report.to_csv());
}
