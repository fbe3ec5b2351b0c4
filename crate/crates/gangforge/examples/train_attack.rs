//! Trains the injection attack against a GCN surrogate on a small synthetic
//! bundle and prints the epoch-by-epoch loss curve together with the decayed
//! temperature and noise scales.

use gangforge::ablation::AblationConfig;
use gangforge::attack::{train_attack, AttackConfig, AttackModel};
use gangforge::detector::{train_detector, DetectorConfig};
use gangforge::graph::{AttributeKind, BudgetParams};
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

    let config = AttackConfig {
        max_candidates: 32,
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 16,
        ffn_dim: 32,
        epochs: 25,
        patience: 6,
        seed: 42,
        ..AttackConfig::default()
    };
    let model = AttackModel::new(config, bundle.graph.attr_dim(), surrogate.hidden_dim())
        .expect("attack model");
    let trained = train_attack(model, &bundle, &surrogate, &AblationConfig::default())
        .expect("attack training");

    println!("epoch  tau      epsilon  train_loss  val_loss");
    for rec in &trained.history {
        println!(
            "{:<5}  {:<7.4}  {:<7.4}  {:<10.6}  {:<10.6}",
            rec.epoch, rec.tau, rec.epsilon, rec.train_loss, rec.val_loss
        );
    }
    let best = trained
        .history
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    println!("best validation loss {best:.6}");
}
