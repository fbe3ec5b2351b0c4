//! Generates a synthetic fraud graph, splits its gangs into train / val /
//! test target sets, attaches injection budgets, and writes the dataset
//! directory (`graph.json`, `sets.json`, `meta.json`).
//!
//! ```text
//! cargo run --example generate_dataset -- /tmp/fraud-demo
//! ```

use gangforge::data::save_dataset;
use gangforge::graph::{AttributeKind, BudgetParams, Split};
use gangforge::synth::{generate_synthetic_fraud_graph, SynthConfig};

fn main() {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "/tmp/gangforge-dataset".to_string());
    let config = SynthConfig {
        num_nodes: 600,
        fraud_fraction: 0.15,
        num_gangs: 16,
        gang_size_range: (3, 6),
        intra_gang_edge_prob: 0.8,
        camouflage_edge_prob: 0.02,
        background_edge_prob: 0.006,
        attr_dim: 8,
        attribute_kind: AttributeKind::Continuous,
        class_separation: 2.0,
        seed: 11,
    };
    let budgets = BudgetParams { rho: 0.3, xi: 1.0 };
    let bundle = generate_synthetic_fraud_graph(&config, 0.4, &budgets).expect("generation");

    println!(
        "{} nodes, {} edges, {} target sets",
        bundle.graph.num_nodes(),
        bundle.graph.num_edges(),
        bundle.target_sets.len()
    );
    for split in [Split::Train, Split::Val, Split::Test] {
        for set in bundle.sets_in(split) {
            println!(
                "{} [{split}] members={} closed_neighborhood={} node_budget={} edge_budget={}",
                set.id,
                set.size(),
                set.closed_neighborhood_size,
                set.node_budget,
                set.edge_budget
            );
        }
    }

    save_dataset(&bundle, &dir).expect("save dataset");
    println!("written to {dir}");
}
