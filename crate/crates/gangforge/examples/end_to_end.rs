//! The whole pipeline in one run: synthesize a fraud graph, train surrogate
//! and victim GCNs from different seeds, train the injection attack against
//! the surrogate, and evaluate the resulting plans on both detectors next to
//! the random-injection baseline.
//!
//! Every scale knob is a flag, so this doubles as a quick way to probe how
//! attack strength and surrogate-to-victim transfer respond to budget and
//! model size:
//!
//! ```text
//! cargo run --example end_to_end -- --num-nodes 800 --num-gangs 16 --epochs 60
//! ```

use std::collections::BTreeMap;
use std::time::Instant;

use clap::Parser;

use gangforge::ablation::{random_injection, AblationConfig};
use gangforge::attack::{train_attack, AttackConfig, AttackModel, SurrogateContext};
use gangforge::detector::{train_detector, DetectorConfig, DetectorModel};
use gangforge::eval::evaluate_attack;
use gangforge::graph::{compute_statistics, AttributeKind, BudgetParams, InjectionPlan, Split};
use gangforge::synth::{generate_synthetic_fraud_graph, SynthConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 2000)]
    num_nodes: usize,
    #[arg(long, default_value_t = 40)]
    num_gangs: usize,
    #[arg(long, default_value_t = 0.10)]
    fraud_fraction: f64,
    #[arg(long, default_value_t = 0.9)]
    intra_gang_edge_prob: f64,
    #[arg(long, default_value_t = 0.008)]
    camouflage_edge_prob: f64,
    #[arg(long, default_value_t = 0.002)]
    background_edge_prob: f64,
    #[arg(long, default_value_t = 3.0)]
    class_separation: f64,
    #[arg(long, default_value_t = 7)]
    graph_seed: u64,
    #[arg(long, default_value_t = 0.25)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    #[arg(long, default_value_t = 32)]
    detector_hidden: usize,
    #[arg(long, default_value_t = 11)]
    surrogate_seed: u64,
    #[arg(long, default_value_t = 12)]
    victim_seed: u64,
    #[arg(long, default_value_t = 64)]
    max_candidates: usize,
    #[arg(long, default_value_t = 2)]
    num_layers: usize,
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 64)]
    ffn_dim: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    patience: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 101)]
    attack_seed: u64,
}

fn weighted_rates(
    detector: &DetectorModel,
    bundle: &gangforge::data::DatasetBundle,
    plans: &BTreeMap<String, InjectionPlan>,
) -> (f64, f64) {
    let report = evaluate_attack(detector, bundle, plans).expect("report");
    (report.weighted_clean, report.weighted_attacked)
}

fn main() {
    let args = Args::parse();
    let total = Instant::now();
    let synth = SynthConfig {
        num_nodes: args.num_nodes,
        fraud_fraction: args.fraud_fraction,
        num_gangs: args.num_gangs,
        gang_size_range: (3, 8),
        intra_gang_edge_prob: args.intra_gang_edge_prob,
        camouflage_edge_prob: args.camouflage_edge_prob,
        background_edge_prob: args.background_edge_prob,
        attr_dim: 10,
        attribute_kind: AttributeKind::Continuous,
        class_separation: args.class_separation,
        seed: args.graph_seed,
    };
    let budgets = BudgetParams { rho: args.rho, xi: args.xi };
    let bundle = generate_synthetic_fraud_graph(&synth, 0.4, &budgets).expect("bundle");
    let stats = compute_statistics(&bundle.graph, &bundle.target_sets).expect("stats");
    let test_sets = bundle.sets_in(Split::Test);
    let mean_delta = test_sets.iter().map(|s| s.node_budget as f64).sum::<f64>()
        / test_sets.len() as f64;
    let mean_eta = test_sets.iter().map(|s| s.edge_budget as f64).sum::<f64>()
        / test_sets.len() as f64;
    println!(
        "graph: {} nodes, {} edges; {} test sets, mean delta {:.1}, mean eta {:.1}",
        bundle.graph.num_nodes(),
        bundle.graph.num_edges(),
        test_sets.len(),
        mean_delta,
        mean_eta
    );

    let det = |seed: u64| DetectorConfig {
        hidden_dim: args.detector_hidden,
        max_epochs: 400,
        patience: 60,
        seed,
        ..DetectorConfig::default()
    };
    let stage = Instant::now();
    let surrogate = train_detector(&bundle, &det(args.surrogate_seed)).expect("surrogate");
    let victim = train_detector(&bundle, &det(args.victim_seed)).expect("victim");
    println!("detectors trained in {:.1}s", stage.elapsed().as_secs_f64());

    let attack_cfg = AttackConfig {
        max_candidates: args.max_candidates,
        num_layers: args.num_layers,
        num_heads: 4,
        hidden_dim: args.hidden_dim,
        ffn_dim: args.ffn_dim,
        dropout: args.dropout,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        patience: args.patience,
        seed: args.attack_seed,
        ..AttackConfig::default()
    };
    let stage = Instant::now();
    let model = AttackModel::new(attack_cfg, bundle.graph.attr_dim(), surrogate.hidden_dim())
        .expect("attack model");
    let trained = train_attack(model, &bundle, &surrogate, &AblationConfig::default())
        .expect("attack training");
    println!(
        "attack trained in {:.1}s over {} epochs",
        stage.elapsed().as_secs_f64(),
        trained.history.len()
    );
    for rec in &trained.history {
        println!(
            "  epoch {:>3} tau {:>7.4} eps {:>7.4} train {:.5} val {:.5}",
            rec.epoch, rec.tau, rec.epsilon, rec.train_loss, rec.val_loss
        );
    }

    let ctx = SurrogateContext::new(&surrogate, &bundle.graph).expect("context");
    let plans: BTreeMap<String, InjectionPlan> = test_sets
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
            let plan = random_injection(&bundle.graph, set, &stats, 2, 9000 + i as u64)
                .expect("random plan");
            (set.id.clone(), plan)
        })
        .collect();

    let (sur_clean, sur_attacked) = weighted_rates(&surrogate, &bundle, &plans);
    let (vic_clean, vic_attacked) = weighted_rates(&victim, &bundle, &plans);
    let (_, sur_random) = weighted_rates(&surrogate, &bundle, &random_plans);
    let (_, vic_random) = weighted_rates(&victim, &bundle, &random_plans);
    println!("surrogate: clean {sur_clean:.4} attacked {sur_attacked:.4} random {sur_random:.4}");
    println!("victim:    clean {vic_clean:.4} attacked {vic_attacked:.4} random {vic_random:.4}");
    println!("total {:.1}s", total.elapsed().as_secs_f64());
}
