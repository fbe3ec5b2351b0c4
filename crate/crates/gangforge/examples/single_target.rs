//! Single-target attacks: every target set is one fraud node, and budgets
//! are forced to one attack node with one edge. Prints how many individual
//! targets the trained attack flips on the victim versus the random
//! baseline.

use std::collections::BTreeMap;

use gangforge::ablation::{random_injection, AblationConfig};
use gangforge::attack::{train_attack, AttackConfig, AttackModel, SurrogateContext};
use gangforge::detector::{train_detector, DetectorConfig};
use gangforge::eval::evaluate_attack;
use gangforge::graph::{compute_statistics, AttributeKind, BudgetParams, InjectionPlan, Split};
use gangforge::synth::{generate_synthetic_fraud_graph, SynthConfig};

fn main() {
    // Size-1 gangs make every target set a single fraud node.
    let synth = SynthConfig {
        num_nodes: 500,
        fraud_fraction: 0.10,
        num_gangs: 50,
        gang_size_range: (1, 1),
        intra_gang_edge_prob: 0.8,
        camouflage_edge_prob: 0.005,
        background_edge_prob: 0.008,
        attr_dim: 8,
        attribute_kind: AttributeKind::Continuous,
        class_separation: 2.5,
        seed: 21,
    };
    let mut bundle =
        generate_synthetic_fraud_graph(&synth, 0.4, &BudgetParams { rho: 0.5, xi: 1.0 })
            .expect("bundle");
    for set in &mut bundle.target_sets {
        set.node_budget = 1;
        set.edge_budget = 1;
    }
    let stats = compute_statistics(&bundle.graph, &bundle.target_sets).expect("stats");

    let surrogate = train_detector(
        &bundle,
        &DetectorConfig { hidden_dim: 16, max_epochs: 300, patience: 50, seed: 31, ..DetectorConfig::default() },
    )
    .expect("surrogate");
    let victim = train_detector(
        &bundle,
        &DetectorConfig { hidden_dim: 16, max_epochs: 300, patience: 50, seed: 32, ..DetectorConfig::default() },
    )
    .expect("victim");
    let ctx = SurrogateContext::new(&surrogate, &bundle.graph).expect("context");

    let config = AttackConfig {
        max_candidates: 16,
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 16,
        ffn_dim: 32,
        dropout: 0.2,
        epochs: 50,
        patience: 50,
        seed: 200,
        ..AttackConfig::default()
    };
    let model = AttackModel::new(config, bundle.graph.attr_dim(), surrogate.hidden_dim())
        .expect("attack model");
    let trained = train_attack(model, &bundle, &surrogate, &AblationConfig::default())
        .expect("attack training");

    let test_sets = bundle.sets_in(Split::Test);
    let trained_plans: BTreeMap<String, InjectionPlan> = test_sets
        .iter()
        .map(|set| {
            let plan = trained
                .model
                .run_attack(&bundle.graph, set, &stats, &surrogate, &ctx,
                            &AblationConfig::default())
                .expect("plan");
            (set.id.clone(), plan)
        })
        .collect();
    let random_plans: BTreeMap<String, InjectionPlan> = test_sets
        .iter()
        .enumerate()
        .map(|(i, set)| {
            let plan = random_injection(&bundle.graph, set, &stats, 2, 700 + i as u64)
                .expect("random plan");
            (set.id.clone(), plan)
        })
        .collect();

    let trained_report = evaluate_attack(&victim, &bundle, &trained_plans).expect("report");
    let random_report = evaluate_attack(&victim, &bundle, &random_plans).expect("report");
    // Every set has size 1, so the weighted rate is the fraction of targets
    // misclassified after injection.
    println!("{} single-node targets, budgets delta=1 eta=1", test_sets.len());
    println!("clean misclassification    {:.4}", trained_report.weighted_clean);
    println!("trained attack             {:.4}", trained_report.weighted_attacked);
    println!("random injection baseline  {:.4}", random_report.weighted_attacked);
}
