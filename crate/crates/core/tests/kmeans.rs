mod common;

use elastica::clustering::{kmeans, KmeansOptions};

#[test]
fn lloyd_reaches_brute_force_optimum_and_kernel_agrees() {
    let r = common::kmeans_oracle(50);
    assert_eq!(r.objective_matches, r.instances);
    assert_eq!(r.kernel_matches, r.instances);
}

#[test]
fn same_seed_same_result() {
    let pts: Vec<Vec<f64>> = (0..40)
        .map(|i| vec![(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.91).cos()])
        .collect();
    let opts = KmeansOptions::new(3, 11);
    let a = kmeans(&pts, &opts).unwrap();
    let b = kmeans(&pts, &opts).unwrap();
    assert_eq!(a.assignments, b.assignments);
    assert_eq!(a.objective, b.objective);
}
