mod common;

use elastica::clustering::{
    baseline_kmeans, baseline_pca_kmeans, build_similarity_with, run_pipeline, warm_up, Engine,
    LabeledSet, PipelineConfig, Role, SimilarityOption,
};
use elastica::elasticity::LearningRate;
use elastica::nn::{init_weights, Activation, LossKind, NetworkConfig, SecondLayerMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two Gaussian blobs per set; primary subclasses around `+-c` on the first
/// axis, auxiliary around `+-c` on the second.
fn blobs(n: usize, d: usize, c: f64, seed: u64) -> (LabeledSet, LabeledSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |axis: usize| {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = common::gaussian(&mut rng, d).iter().map(|v| 0.3 * v).collect();
            x[axis] += sign * c;
            feats.push(x);
            labels.push(i % 2);
        }
        (feats, labels)
    };
    let (pf, pl) = make(0);
    let (af, al) = make(1);
    (
        LabeledSet::new(pf, pl, Role::Primary).unwrap(),
        LabeledSet::new(af, al, Role::Auxiliary).unwrap(),
    )
}

#[test]
fn cached_and_direct_engines_agree() {
    let (p, a) = blobs(12, 4, 1.5, 3);
    for act in [Activation::Relu, Activation::Sigmoid, Activation::Identity] {
        for mode in [SecondLayerMode::Trainable, SecondLayerMode::FixedSigns] {
            for loss in [LossKind::L2, LossKind::Bce] {
                for option in [SimilarityOption::Relative, SimilarityOption::Kernelized] {
                    let config = NetworkConfig::two_layer(4, 32, act).with_mode(mode).with_loss(loss);
                    let w = init_weights(&config, 8).unwrap();
                    let run = |engine| {
                        build_similarity_with(&p, &a, &config, loss, option, &w, 0.05, 2, 4, engine)
                            .unwrap()
                    };
                    let c = run(Engine::Cached);
                    let d = run(Engine::Direct);
                    assert_eq!(c.fallback_rows, d.fallback_rows);
                    assert_eq!(c.zero_rows, d.zero_rows);
                    for (x, y) in c.matrix.values().iter().zip(d.matrix.values()) {
                        assert!((x - y).abs() <= 1e-8 * (1.0 + y.abs()), "{act:?} {mode:?} {loss:?} {option:?}: {x} vs {y}");
                    }
                }
            }
        }
    }
}

#[test]
fn warm_up_fits_a_separable_toy_set() {
    let p = LabeledSet::new(vec![vec![2.0, 1.0], vec![1.5, 2.0]], vec![0, 1], Role::Primary).unwrap();
    let a = LabeledSet::new(vec![vec![-2.0, -1.0], vec![-1.0, -2.5]], vec![0, 1], Role::Auxiliary).unwrap();
    // x + y separates the primary points (positive) from the auxiliary ones.
    for x in p.features.iter() {
        assert!(x[0] + x[1] > 0.0);
    }
    for x in a.features.iter() {
        assert!(x[0] + x[1] < 0.0);
    }
    let config = NetworkConfig::two_layer(2, 16, Activation::Relu);
    let w = warm_up(&config, LossKind::L2, &p, &a, LearningRate::Fixed(0.01), 200, None, 1).unwrap();
    assert_eq!(w.epochs_run, 200);
    assert_eq!(w.train_accuracy, 1.0);
}

#[test]
fn near_duplicates_look_alike() {
    let (mut p, a) = blobs(10, 4, 1.5, 5);
    let twin: Vec<f64> = p.features[0].iter().map(|v| v + 1e-6).collect();
    p.features[1] = twin;
    p.labels[1] = p.labels[0];
    let config = NetworkConfig::two_layer(4, 64, Activation::Relu);
    let w = init_weights(&config, 2).unwrap();
    let s = build_similarity_with(&p, &a, &config, LossKind::L2, SimilarityOption::Relative, &w, 0.01, 1, 3, Engine::Auto)
        .unwrap()
        .matrix;
    assert!((s.get(0, 1) - 1.0).abs() < 1e-3, "{}", s.get(0, 1));
    assert!((s.get(1, 0) - 1.0).abs() < 1e-3, "{}", s.get(1, 0));
}

#[test]
fn pipeline_separates_clear_subclasses() {
    let (p, a) = blobs(40, 5, 3.0, 11);
    let config = NetworkConfig::two_layer(5, 128, Activation::Relu);
    for option in [SimilarityOption::Relative, SimilarityOption::Kernelized] {
        let cfg = PipelineConfig::new(config.clone(), LossKind::L2, option, 2);
        let out = run_pipeline(&p, &a, &cfg).unwrap();
        assert!(out.similarity.is_symmetric());
        assert!(out.result.accuracy.unwrap() >= 0.9, "{option:?}: {:?}", out.result.accuracy);
    }
}

#[test]
fn baselines_solve_separated_blobs() {
    let (p, _) = blobs(30, 6, 4.0, 1);
    assert_eq!(baseline_kmeans(&p, 0, 5).unwrap().accuracy, Some(1.0));
    assert_eq!(baseline_pca_kmeans(&p, 2, 0, 5).unwrap().accuracy, Some(1.0));
}
