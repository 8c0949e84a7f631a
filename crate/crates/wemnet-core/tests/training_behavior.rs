//! End-to-end learning-dynamics checks on the synthetic generators.
//!
//! These complement the unit tests (which pin exact values on frozen
//! inputs) by asserting the *direction* of training outcomes: an untrained
//! model is chance-like only in expectation, a zero-shift pair of domains
//! trains to near-identical accuracy, the ablation variants agree when
//! there is nothing to adapt, and the standard shifted run both fits the
//! source domain and transfers. Every run is deterministic, so the bounds
//! below carry the measured headroom noted next to them.

use wemnet_core::config::{DatasetConfig, RunConfig};
use wemnet_core::train::{ablation_run, train};

/// The standard run with the target rotation removed: both domains are
/// i.i.d. draws from the same distribution.
fn zero_shift_config(seed: u64) -> RunConfig {
    RunConfig {
        dataset: DatasetConfig::TwoMoons {
            n_per_domain: 500,
            noise_sigma: 0.1,
            rotation_deg: 0.0,
            translation: [0.0, 0.0],
        },
        seed,
        ..RunConfig::default()
    }
}

/// An untrained model draws a random decision boundary, so a single seed
/// can score far from 50% on two moons; only the mean over inits is
/// chance-like. Measured over these ten seeds: per-seed range 16.4–84.4,
/// means 39.5 (source) and 40.3 (target).
#[test]
fn untrained_model_scores_near_chance_in_the_mean() {
    let mut source_sum = 0.0;
    let mut target_sum = 0.0;
    let seeds = 0..10u64;
    let n = seeds.clone().count() as f64;
    for seed in seeds {
        let config = RunConfig {
            epochs: 0,
            seed,
            ..RunConfig::default()
        };
        let out = train::<f64>(&config).expect("epoch-0 evaluation");
        assert_eq!(out.history.len(), 1, "epochs=0 leaves only the initial record");
        let record = &out.history[0];
        let target = record.target_accuracy.expect("synthetic target keeps labels");
        for (name, acc) in [("source", record.source_accuracy), ("target", target)] {
            assert!(
                (5.0..95.0).contains(&acc),
                "untrained {name} accuracy {acc} outside the random-boundary band (seed {seed})"
            );
        }
        source_sum += record.source_accuracy;
        target_sum += target;
    }
    let (source_mean, target_mean) = (source_sum / n, target_sum / n);
    assert!(
        (25.0..=75.0).contains(&source_mean) && (25.0..=75.0).contains(&target_mean),
        "mean untrained accuracy should be broadly chance-like, got source {source_mean} target {target_mean}"
    );
}

/// With rotation 0 the domains coincide, so after 20 epochs source and
/// target accuracy agree within 3 points on every seed. Measured gaps over
/// these ten seeds: max 1.8, mean 0.68; worst per-domain accuracy 92.8.
#[test]
fn zero_shift_training_equalizes_domains() {
    let results: Vec<(u64, f64, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..10u64)
            .map(|seed| {
                scope.spawn(move || {
                    let out = train::<f64>(&zero_shift_config(seed)).expect("zero-shift run");
                    let last = out.history.last().expect("history is never empty");
                    let target = last.target_accuracy.expect("synthetic target keeps labels");
                    (seed, last.source_accuracy, target)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread")).collect()
    });
    for (seed, source, target) in results {
        let gap = (source - target).abs();
        assert!(
            gap <= 3.0,
            "seed {seed}: zero-shift domains diverged by {gap} points (source {source}, target {target})"
        );
        assert!(
            source >= 88.0 && target >= 88.0,
            "seed {seed}: zero-shift run failed to learn the task (source {source}, target {target})"
        );
    }
}

/// With nothing to adapt, enabling the adaptation modules changes final
/// target accuracy only within run-to-run noise. Measured spread across
/// the four variants on these seeds: 0.8, 2.6, 0.6 points (3.0 was the
/// largest over a wider ten-seed sweep); worst variant accuracy 97.0.
#[test]
fn zero_shift_ablation_variants_stay_within_noise() {
    for seed in 0..3u64 {
        let outcomes = ablation_run(&zero_shift_config(seed)).expect("zero-shift ablation");
        assert_eq!(outcomes.len(), 4);
        let finals: Vec<(String, f64)> = outcomes
            .iter()
            .map(|o| {
                let acc = o.final_target_accuracy().expect("synthetic target keeps labels");
                (o.name.clone(), acc)
            })
            .collect();
        let best = finals.iter().map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);
        let worst = finals.iter().map(|(_, a)| *a).fold(f64::INFINITY, f64::min);
        assert!(
            best - worst <= 5.0,
            "seed {seed}: variants spread {} points apart with no shift: {finals:?}",
            best - worst
        );
        assert!(
            worst >= 90.0,
            "seed {seed}: a variant failed to learn the unshifted task: {finals:?}"
        );
    }
}

/// The standard shifted run (30° rotation) must both fit the source domain
/// and carry useful accuracy across the shift. Measured at seed 0: source
/// 99.0, target 79.0, classification loss 0.717 → 0.059.
#[test]
fn shifted_run_learns_source_and_transfers() {
    let out = train::<f64>(&RunConfig::default()).expect("standard run");
    let first = &out.history[0];
    let last = out.history.last().expect("history is never empty");
    let target = last.target_accuracy.expect("synthetic target keeps labels");
    assert!(
        last.source_accuracy >= 95.0,
        "source accuracy {} after 20 epochs",
        last.source_accuracy
    );
    assert!(target >= 70.0, "target accuracy {target} after 20 epochs");
    assert!(
        last.l_cls < 0.5 * first.l_cls,
        "classification loss barely moved: {} -> {}",
        first.l_cls,
        last.l_cls
    );
}
