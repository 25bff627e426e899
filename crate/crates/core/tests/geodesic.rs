mod common;

use elastica::manifolds::{build_geodesic, gen_folded_boxes, gen_torus, DEFAULT_NEIGHBORS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

fn torus_curve(s: f64) -> impl Fn(f64) -> Vec<f64> {
    move |t| {
        let r = 8.0 + s * (4.0 * t).sin();
        vec![r * t.cos(), r * t.sin(), s * (4.0 * t).cos()]
    }
}

#[test]
fn torus_graph_distance_tracks_arc_length() {
    let sample = gen_torus(1000, 5).unwrap();
    let g = build_geodesic(&sample, DEFAULT_NEIGHBORS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let class_start = if rng.random::<bool>() { 0 } else { 1000 };
        let i = class_start + rng.random_range(0..1000);
        let j = class_start + rng.random_range(0..1000);
        if i == j {
            continue;
        }
        let s = f64::from(sample.labels[i]);
        let exact =
            common::closed_curve_distance(torus_curve(s), TAU, sample.thetas[i], sample.thetas[j]);
        let err = (g.distance(i, j) - exact).abs() / exact;
        worst = worst.max(err);
    }
    assert!(worst <= 0.05, "worst relative error {worst}");
}

#[test]
fn torus_classes_are_disconnected_from_each_other() {
    let sample = gen_torus(100, 1).unwrap();
    let g = build_geodesic(&sample, DEFAULT_NEIGHBORS).unwrap();
    assert!(g.distance(0, 150).is_infinite());
    assert!(g.distance(3, 40).is_finite());
}

#[test]
fn folded_boxes_perimeter_is_recovered() {
    // Half the perimeter of |y| + 1.2|x| = 13, ignoring height.
    let sample = gen_folded_boxes(600, 2).unwrap();
    let g = build_geodesic(&sample, DEFAULT_NEIGHBORS).unwrap();
    let edge = ((13.0f64 / 1.2).powi(2) + 13.0f64.powi(2)).sqrt();
    let half = 2.0 * edge;
    let mut best: f64 = 0.0;
    for j in 0..600 {
        best = best.max(g.distance(0, j));
    }
    // The farthest point sits roughly half way round, with some height offset.
    assert!((best - half).abs() / half < 0.08, "{best} vs {half}");
}

#[test]
fn distances_are_symmetric() {
    let sample = gen_torus(80, 3).unwrap();
    let g = build_geodesic(&sample, 6).unwrap();
    for i in 0..g.len() {
        assert_eq!(g.distance(i, i), 0.0);
        for j in 0..g.len() {
            let (a, b) = (g.distance(i, j), g.distance(j, i));
            assert!(a == b || (a.is_infinite() && b.is_infinite()));
        }
    }
}
