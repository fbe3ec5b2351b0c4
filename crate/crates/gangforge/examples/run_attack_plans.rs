//! Produces deterministic injection plans for every test-split target set
//! and dumps the first plan in full: generated attack-node attributes and
//! the adversarial edge list.
//!
//! Plans come from a briefly trained model, so the point here is the shape
//! of the output rather than attack strength; see `end_to_end` for a run
//! whose plans actually flip targets.

use gangforge::ablation::AblationConfig;
use gangforge::attack::{train_attack, AttackConfig, AttackModel, SurrogateContext};
use gangforge::detector::{train_detector, DetectorConfig};
use gangforge::graph::{compute_statistics, AttributeKind, BudgetParams, Split};
use gangforge::synth::{generate_synthetic_fraud_graph, SynthConfig};

fn main() {
    let synth = SynthConfig {
        num_nodes: 300,
        fraud_fraction: 0.2,
        num_gangs: 10,
        gang_size_range: (3, 5),
        intra_gang_edge_prob: 0.8,
        camouflage_edge_prob: 0.03,
        background_edge_prob: 0.01,
        attr_dim: 8,
        attribute_kind: AttributeKind::Continuous,
        class_separation: 2.0,
        seed: 17,
    };
    let bundle =
        generate_synthetic_fraud_graph(&synth, 0.4, &BudgetParams { rho: 0.3, xi: 1.0 })
            .expect("bundle");
    let surrogate = train_detector(
        &bundle,
        &DetectorConfig { hidden_dim: 16, max_epochs: 200, patience: 40, seed: 1, ..DetectorConfig::default() },
    )
    .expect("surrogate");
    let stats = compute_statistics(&bundle.graph, &bundle.target_sets).expect("stats");
    let ctx = SurrogateContext::new(&surrogate, &bundle.graph).expect("surrogate context");

    let config = AttackConfig {
        max_candidates: 32,
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 16,
        ffn_dim: 32,
        epochs: 10,
        patience: 5,
        seed: 42,
        ..AttackConfig::default()
    };
    let model = AttackModel::new(config, bundle.graph.attr_dim(), surrogate.hidden_dim())
        .expect("attack model");
    let trained = train_attack(model, &bundle, &surrogate, &AblationConfig::default())
        .expect("attack training");

    let ablation = AblationConfig::default();
    let mut first = true;
    for set in bundle.sets_in(Split::Test) {
        let plan = trained
            .model
            .run_attack(&bundle.graph, set, &stats, &surrogate, &ctx, &ablation)
            .expect("plan");
        println!(
            "{}: {} attack nodes, {} edges (budget {} nodes / {} edges)",
            set.id,
            plan.num_attack_nodes,
            plan.adversarial_edges.len(),
            set.node_budget,
            set.edge_budget
        );
        if first {
            first = false;
            for i in 0..plan.attack_attributes.nrows() {
                let row: Vec<String> = plan
                    .attack_attributes
                    .row(i)
                    .iter()
                    .map(|v| format!("{v:.3}"))
                    .collect();
                println!("  attack node {i} attrs [{}]", row.join(", "));
            }
            for (a, b) in &plan.adversarial_edges {
                println!("  edge {a} - {b}");
            }
        }
    }
}
