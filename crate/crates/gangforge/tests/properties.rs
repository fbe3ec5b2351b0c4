//! Property tests for the library's "for all inputs" guarantees: budget
//! formula shape, neighborhood nesting, injection round trips, selection
//! semantics, report arithmetic, and loader robustness against malformed
//! files.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;

use gangforge::ablation::AblationConfig;
use gangforge::attack::{AttackConfig, AttackModel, SurrogateContext};
use gangforge::detector::{DetectorConfig, DetectorModel};
use gangforge::eval::{evaluate_attack, AttackReport};
use gangforge::graph::{
    apply_injection, compute_edge_budget, compute_node_budget, compute_statistics,
    k_hop_neighbors, AttributeKind, BudgetParams, InjectionPlan, Split,
};
use gangforge::synth::{generate_synthetic_fraud_graph, SynthConfig};

fn small_bundle(seed: u64, kind: AttributeKind, rho: f64) -> gangforge::data::DatasetBundle {
    let synth = SynthConfig {
        num_nodes: 90,
        fraud_fraction: 0.2,
        num_gangs: 6,
        gang_size_range: (2, 4),
        intra_gang_edge_prob: 0.8,
        camouflage_edge_prob: 0.06,
        background_edge_prob: 0.05,
        attr_dim: 5,
        attribute_kind: kind,
        class_separation: 1.5,
        seed,
    };
    generate_synthetic_fraud_graph(&synth, 0.4, &BudgetParams { rho, xi: 1.0 })
        .expect("bundle")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Node budget is at least 1 and nondecreasing in the neighborhood size.
    #[test]
    fn node_budget_monotone_in_neighborhood(
        b in 1usize..300,
        grow in 0usize..100,
        mean_b in 0.5f64..120.0,
        rho in 0.01f64..=1.0,
    ) {
        let small = compute_node_budget(b, mean_b, rho).unwrap();
        let large = compute_node_budget(b + grow, mean_b, rho).unwrap();
        prop_assert!(small >= 1);
        prop_assert!(large >= small);
    }

    /// Edge budget is a positive multiple of the node budget.
    #[test]
    fn edge_budget_multiple_of_delta(
        delta in 1usize..60,
        d_t in 0.0f64..40.0,
        d_bar in 0.1f64..25.0,
        xi in 0.1f64..3.0,
    ) {
        let eta = compute_edge_budget(delta, d_t, d_bar, xi).unwrap();
        prop_assert!(eta >= delta);
        prop_assert_eq!(eta % delta, 0);
    }

    /// Larger radius never shrinks the neighborhood, and the target nodes
    /// themselves are always excluded.
    #[test]
    fn k_hop_neighborhoods_nest(seed in 0u64..40, k in 1usize..4) {
        let bundle = small_bundle(seed, AttributeKind::Continuous, 0.3);
        let set = &bundle.target_sets[0];
        let inner = k_hop_neighbors(&bundle.graph, &set.members, k).unwrap();
        let outer = k_hop_neighbors(&bundle.graph, &set.members, k + 1).unwrap();
        prop_assert!(inner.is_subset(&outer));
        for &v in &set.members {
            prop_assert!(!inner.contains(&v));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Selection returns exactly k distinct in-range indices, and with zero
    /// noise it picks a maximal-score subset with index-stable tie breaks.
    #[test]
    fn top_k_selection_semantics(
        raw in prop::collection::vec(-3i32..=3, 1..12),
        k_frac in 0.0f64..1.0,
        epsilon in 0.0f64..2.0,
        seed in 0u64..1000,
    ) {
        // Integer-derived scores produce frequent exact ties.
        let scores: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        let k = 1 + ((scores.len() - 1) as f64 * k_frac) as usize;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let picked = gangforge::gumbel::select_top_k(&scores, k, epsilon, &mut rng);
        prop_assert_eq!(picked.len(), k);
        let distinct: BTreeSet<usize> = picked.iter().copied().collect();
        prop_assert_eq!(distinct.len(), k);
        prop_assert!(picked.iter().all(|&i| i < scores.len()));

        let exact = gangforge::gumbel::arg_top_k(&scores, k);
        let chosen: BTreeSet<usize> = exact.iter().copied().collect();
        // Defining property: no unchosen score beats a chosen one, and ties
        // resolve toward the lower index.
        for &i in &exact {
            for j in 0..scores.len() {
                if !chosen.contains(&j) {
                    prop_assert!(
                        scores[j] < scores[i] || (scores[j] == scores[i] && j > i)
                    );
                }
            }
        }
        if epsilon == 0.0 {
            let mut noise_free = picked.clone();
            noise_free.sort_unstable();
            let mut expect = exact.clone();
            expect.sort_unstable();
            prop_assert_eq!(noise_free, expect);
        }
    }

    /// Reports survive a JSON round trip bit for bit, and with equal-size
    /// sets the weighted rate collapses to the plain mean.
    #[test]
    fn report_roundtrip_and_weighting(seed in 0u64..30) {
        let synth = SynthConfig {
            num_nodes: 90,
            fraud_fraction: 0.2,
            num_gangs: 6,
            gang_size_range: (3, 3),
            intra_gang_edge_prob: 0.8,
            camouflage_edge_prob: 0.06,
            background_edge_prob: 0.05,
            attr_dim: 5,
            attribute_kind: AttributeKind::Continuous,
            class_separation: 1.5,
            seed,
        };
        let bundle =
            generate_synthetic_fraud_graph(&synth, 0.4, &BudgetParams { rho: 0.3, xi: 1.0 })
                .unwrap();
        let victim = DetectorModel::new(
            DetectorConfig { hidden_dim: 8, seed, ..DetectorConfig::default() },
            bundle.graph.attr_dim(),
        )
        .unwrap();
        let report = evaluate_attack(&victim, &bundle, &Default::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.save_json(&path).unwrap();
        let loaded = AttackReport::load_json(&path).unwrap();
        prop_assert_eq!(report.to_json(), loaded.to_json());

        // All gangs have 3 members, so weighting by size changes nothing.
        let mean = report
            .per_set
            .iter()
            .map(|r| r.clean_misclassification)
            .sum::<f64>()
            / report.per_set.len() as f64;
        prop_assert!((report.weighted_clean - mean).abs() < 1e-12);
    }

    /// Malformed dataset files produce structured errors, never panics.
    #[test]
    fn loader_survives_garbage(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("graph.json"), &bytes).unwrap();
        std::fs::write(dir.path().join("sets.json"), &bytes).unwrap();
        std::fs::write(dir.path().join("meta.json"), &bytes).unwrap();
        let out = gangforge::data::load_dataset(
            dir.path(),
            &BudgetParams { rho: 0.3, xi: 1.0 },
        );
        prop_assert!(out.is_err());
    }

    /// Truncated plan files error out instead of crashing or yielding a
    /// half-read plan.
    #[test]
    fn plan_loader_survives_truncation(cut in 0usize..120) {
        let plan = InjectionPlan::new(
            1,
            ndarray::Array2::zeros((1, 3)),
            vec![(gangforge::graph::NodeRef::Attack(0), gangforge::graph::NodeRef::Original(2))],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        gangforge::runner::save_plan(&path, &plan).unwrap();
        let full = std::fs::read(&path).unwrap();
        if cut < full.len() {
            std::fs::write(&path, &full[..cut]).unwrap();
            prop_assert!(gangforge::runner::load_plan(&path).is_err());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Plans from untrained models under arbitrary ablation switches stay
    /// budget-valid, and stripping the attack nodes restores the original
    /// graph exactly.
    #[test]
    fn injection_round_trip_under_ablations(
        seed in 0u64..1000,
        kind_discrete in any::<bool>(),
        rho in 0.1f64..0.6,
        random_attributes in any::<bool>(),
        random_edges in any::<bool>(),
        no_positional_encoding in any::<bool>(),
        no_degree in any::<bool>(),
        shared_encoder_parameters in any::<bool>(),
        cand_mode in 0usize..3,
        fixed_budget in any::<bool>(),
    ) {
        let kind = if kind_discrete { AttributeKind::Discrete } else { AttributeKind::Continuous };
        let bundle = small_bundle(seed % 20, kind, rho);
        let stats = compute_statistics(&bundle.graph, &bundle.target_sets).unwrap();
        let surrogate = DetectorModel::new(
            DetectorConfig { hidden_dim: 8, seed, ..DetectorConfig::default() },
            bundle.graph.attr_dim(),
        )
        .unwrap();
        let ctx = SurrogateContext::new(&surrogate, &bundle.graph).unwrap();
        let model = AttackModel::new(
            AttackConfig {
                max_candidates: 12,
                num_layers: 1,
                num_heads: 2,
                hidden_dim: 8,
                ffn_dim: 16,
                seed,
                ..AttackConfig::default()
            },
            bundle.graph.attr_dim(),
            surrogate.hidden_dim(),
        )
        .unwrap();
        let ablation = AblationConfig {
            random_attributes,
            random_edges,
            no_positional_encoding,
            no_degree,
            shared_encoder_parameters,
            no_candidates: cand_mode == 1,
            random_candidates: cand_mode == 2,
            fixed_budget,
        };
        let set = &bundle.sets_in(Split::Test)[0];
        let plan = model
            .run_attack(&bundle.graph, set, &stats, &surrogate, &ctx, &ablation)
            .unwrap();

        prop_assert_eq!(plan.num_attack_nodes, set.node_budget);
        prop_assert!(plan.adversarial_edges.len() <= set.edge_budget);
        if kind == AttributeKind::Discrete {
            for v in plan.attack_attributes.iter() {
                prop_assert!(*v == 0.0 || *v == 1.0);
            }
        }

        let perturbed = apply_injection(&bundle.graph, &plan, set).unwrap();
        let n = bundle.graph.num_nodes();
        prop_assert_eq!(perturbed.num_nodes(), n + plan.num_attack_nodes);
        // Stripping every edge that touches an injected node must leave the
        // original edge set, and original rows of the attribute matrix must
        // be untouched.
        let restored: Vec<(usize, usize)> = perturbed
            .edges()
            .iter()
            .copied()
            .filter(|&(a, b)| a < n && b < n)
            .collect();
        prop_assert_eq!(restored.as_slice(), bundle.graph.edges());
        for v in 0..n {
            for j in 0..bundle.graph.attr_dim() {
                prop_assert_eq!(
                    perturbed.attributes()[[v, j]],
                    bundle.graph.attributes()[[v, j]]
                );
            }
        }
    }
}
