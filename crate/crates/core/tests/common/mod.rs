//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use elastica::nn::{forward, LossKind, NetworkConfig, Weights};

/// Central-difference gradient of `loss(f(x, w), y)` over every parameter.
pub fn fd_loss_gradient(
    config: &NetworkConfig,
    w: &Weights,
    x: &[f64],
    y: f64,
    loss: LossKind,
    h: f64,
) -> Vec<f64> {
    let mut probe = w.clone();
    (0..w.len())
        .map(|k| {
            let orig = probe.params()[k];
            probe.params_mut()[k] = orig + h;
            let up = loss.loss(forward(config, &probe, x).unwrap(), y);
            probe.params_mut()[k] = orig - h;
            let down = loss.loss(forward(config, &probe, x).unwrap(), y);
            probe.params_mut()[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn vector_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Within-cluster sum of squared distances to the cluster means.
pub fn kmeans_objective(points: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(assign)
            .filter(|(_, &a)| a == c)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; d];
        for p in &members {
            for (m, v) in mean.iter_mut().zip(p.iter()) {
                *m += v / members.len() as f64;
            }
        }
        for p in &members {
            total += p.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
    }
    total
}

/// Smallest objective over every assignment of the points to `k` labels
/// with no empty cluster.
pub fn brute_force_kmeans(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut assign = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut used = vec![false; k];
        for &a in &assign {
            used[a] = true;
        }
        if used.iter().all(|&u| u) {
            best = best.min(kmeans_objective(points, &assign, k));
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            assign[pos] += 1;
            if assign[pos] < k {
                break;
            }
            assign[pos] = 0;
            pos += 1;
        }
    }
}

/// True when the two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Length of a closed parametric curve between parameters `t1` and `t2`,
/// going the shorter way round, from a fine polyline.
pub fn closed_curve_distance(
    point: impl Fn(f64) -> Vec<f64>,
    period: f64,
    t1: f64,
    t2: f64,
) -> f64 {
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let arc = polyline_length(&point, lo, hi);
    let total = polyline_length(&point, 0.0, period);
    arc.min(total - arc)
}

fn polyline_length(point: &impl Fn(f64) -> Vec<f64>, lo: f64, hi: f64) -> f64 {
    let steps = 20_000;
    let mut prev = point(lo);
    let mut len = 0.0;
    for s in 1..=steps {
        let p = point(lo + (hi - lo) * s as f64 / steps as f64);
        len += p.iter().zip(&prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prev = p;
    }
    len
}

use elastica::nn::{
    backward, init_weights, param_gradient, sgd_step, Activation, SecondLayerMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Every small architecture: depth, activation, output mode, loss and bias.
pub fn small_architectures() -> Vec<(NetworkConfig, LossKind)> {
    let mut out = Vec::new();
    for depth in [2, 3] {
        for act in [Activation::Relu, Activation::Sigmoid, Activation::Identity] {
            for mode in [SecondLayerMode::Trainable, SecondLayerMode::FixedSigns] {
                for loss in [LossKind::L2, LossKind::Bce] {
                    for bias in [true, false] {
                        let base = if depth == 2 {
                            NetworkConfig::two_layer(3, 16, act)
                        } else {
                            NetworkConfig::three_layer(3, [12, 16], act)
                        };
                        out.push((
                            base.with_loss(loss).with_mode(mode).with_bias(bias),
                            loss,
                        ));
                    }
                }
            }
        }
    }
    out
}

/// Largest relative error between `backward` and central differences over
/// all small architectures, several inputs each. Fixed output signs are
/// excluded from the comparison since they are not trained.
pub fn gradient_oracle_max_error() -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (n, (config, loss)) in small_architectures().into_iter().enumerate() {
        let w = init_weights(&config, n as u64).unwrap();
        for t in 0..4 {
            let x = gaussian(&mut rng, 3);
            let y = if t % 2 == 0 {
                loss.positive_label()
            } else {
                loss.negative_label()
            };
            let b = backward(&config, &w, &x, y, loss).unwrap();
            let fd = fd_loss_gradient(&config, &w, &x, y, loss, 1e-6);
            let trained = match config.second_layer_mode {
                SecondLayerMode::Trainable => w.len(),
                SecondLayerMode::FixedSigns => {
                    let out = w.layout().last().unwrap();
                    assert!(b.gradient[out.range()].iter().all(|&g| g == 0.0));
                    out.offset
                }
            };
            worst = worst.max(vector_relative_error(
                &b.gradient[..trained],
                &fd[..trained],
            ));
        }
    }
    worst
}

/// Largest relative error between the kernelized similarity of one small SGD
/// step and the gradient inner product, over `pairs` input pairs on random
/// width-64 nets.
pub fn ntk_consistency_max_error(pairs: usize, eta: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Identity];
    for p in 0..pairs {
        let act = acts[p % 3];
        let config = NetworkConfig::two_layer(3, 64, act);
        let w = init_weights(&config, 1000 + p as u64).unwrap();
        let x = gaussian(&mut rng, 3);
        let x2 = gaussian(&mut rng, 3);
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let b = backward(&config, &w, &x, y, LossKind::L2).unwrap();
        let next = sgd_step(&w, &b.gradient, eta).unwrap();
        let before = forward(&config, &w, &x2).unwrap();
        let after = forward(&config, &next, &x2).unwrap();
        let s_ker = (before - after) / (eta * b.dl_df);
        let g1 = param_gradient(&config, &w, &x).unwrap();
        let g2 = param_gradient(&config, &w, &x2).unwrap();
        let ntk: f64 = g1.iter().zip(&g2).map(|(a, c)| a * c).sum();
        worst = worst.max((s_ker - ntk).abs() / ntk.abs());
    }
    worst
}

use elastica::clustering::{kernel_kmeans, kmeans, KmeansOptions, SimilarityMatrix};

/// Outcome of the small-instance K-means comparison.
pub struct KmeansOracleReport {
    pub instances: usize,
    pub objective_matches: usize,
    pub kernel_matches: usize,
}

/// Random instances of 3..=8 points in the plane with k in {2, 3}: Lloyd's
/// objective against exhaustive search, and kernel K-means on the linear
/// Gram matrix against the feature-space partition.
pub fn kmeans_oracle(instances: usize) -> KmeansOracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut report = KmeansOracleReport {
        instances,
        objective_matches: 0,
        kernel_matches: 0,
    };
    for inst in 0..instances {
        let n = rng.random_range(3..=8);
        let k = if n >= 5 && inst % 2 == 1 { 3 } else { 2 };
        let points: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, 2)).collect();
        let opts = KmeansOptions::new(k, inst as u64);
        let r = kmeans(&points, &opts).unwrap();
        let best = brute_force_kmeans(&points, k);
        let own = kmeans_objective(&points, &r.assignments, k);
        if (own - best).abs() <= 1e-9 * best.max(1.0) && (r.objective - best).abs() <= 1e-9 * best.max(1.0) {
            report.objective_matches += 1;
        }
        let gram: Vec<Vec<f64>> = points
            .iter()
            .map(|a| points.iter().map(|b| a[0] * b[0] + a[1] * b[1]).collect())
            .collect();
        let g = SimilarityMatrix::from_rows(gram).unwrap();
        let kr = kernel_kmeans(&g, &opts).unwrap();
        if same_partition(&kr.assignments, &r.assignments) {
            report.kernel_matches += 1;
        }
    }
    report
}

/// MNIST location for tests: `$ELASTICA_DATA_DIR`, else `/root/data/mnist`.
pub fn mnist_dir() -> std::path::PathBuf {
    std::env::var_os(elastica::data_io::DATA_DIR_ENV)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::path::PathBuf::from("/root/data/mnist"))
}

pub const T10K_HISTOGRAM: [usize; 10] = [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009];
