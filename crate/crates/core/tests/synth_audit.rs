//! Generated labels against an independent recount of planted occurrences.

use mpsgnn::graph::{count_occurrences, NodeId};
use mpsgnn::synth::{generate, ScenarioSpec, PRESETS};

#[test]
fn every_preset_and_seed_recounts() {
    for (name, ..) in PRESETS {
        for seed in 0..5 {
            let spec = ScenarioSpec {
                seed,
                num_targets: 400,
                ..ScenarioSpec::preset(name).unwrap()
            };
            let sc = generate(&spec).unwrap();
            let mut positives = 0;
            for (&v, &label) in &sc.labels {
                let n = count_occurrences(&sc.graph, v, &sc.truth).unwrap();
                assert_eq!(label, n >= spec.threshold as u64, "{name} seed {seed} node {v:?}: {n}");
                positives += label as usize;
            }
            assert_eq!(positives, 120, "{name} seed {seed}");
        }
    }
}

#[test]
fn s1_thousand_targets_matches_manifest_counts() {
    let sc = generate(&ScenarioSpec {
        seed: 4,
        num_targets: 1000,
        ..ScenarioSpec::preset("s1").unwrap()
    })
    .unwrap();
    let gt = &sc.ground_truth;
    assert_eq!(gt.targets.len(), 1000);
    for ((&v, &n), &label) in gt.targets.iter().zip(&gt.counts).zip(&gt.labels) {
        assert_eq!(count_occurrences(&sc.graph, v, &sc.truth).unwrap(), n);
        assert_eq!(sc.labels[&v], label);
    }
    let first: NodeId = gt.targets[0];
    assert_eq!(sc.graph.type_name(sc.graph.node_type(first)), "target");
}
