//! Lloyd's algorithm with k-means++ seeding, on explicit points or on a
//! kernel matrix. Both variants share seeding and iteration so that kernel
//! K-means on a Gram matrix follows the same path as K-means on the points.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimilarityMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    /// Filled in once the assignments are scored against ground truth.
    pub accuracy: Option<f64>,
    /// Within-cluster sum of squared distances of the best restart.
    pub objective: f64,
    /// Objective after every iteration of the best restart.
    pub objective_trace: Vec<f64>,
    pub seed: u64,
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KmeansOptions {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KmeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansOptions {
            k,
            restarts: 10,
            max_iter: 300,
            seed,
        }
    }
}

/// What Lloyd iterations need from the underlying geometry.
trait Space {
    fn len(&self) -> usize;
    /// Squared distance between two points.
    fn pair(&self, i: usize, j: usize) -> f64;
    /// Squared distance from every point to the mean of every cluster,
    /// row-major `n x k`. Empty clusters get `f64::INFINITY`.
    fn to_clusters(&self, assign: &[usize], k: usize) -> Vec<f64>;
}

struct Points<'a>(&'a [Vec<f64>]);

impl Space for Points<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn pair(&self, i: usize, j: usize) -> f64 {
        sq_dist(&self.0[i], &self.0[j])
    }

    fn to_clusters(&self, assign: &[usize], k: usize) -> Vec<f64> {
        let d = self.0.first().map_or(0, Vec::len);
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in self.0.iter().zip(assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            if n > 0 {
                s.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        let mut out = Vec::with_capacity(self.0.len() * k);
        for x in self.0 {
            for c in 0..k {
                out.push(if counts[c] == 0 {
                    f64::INFINITY
                } else {
                    sq_dist(x, &sums[c])
                });
            }
        }
        out
    }
}

struct Kernel<'a> {
    n: usize,
    k: &'a [f64],
}

impl Space for Kernel<'_> {
    fn len(&self) -> usize {
        self.n
    }

    fn pair(&self, i: usize, j: usize) -> f64 {
        let n = self.n;
        (self.k[i * n + i] - 2.0 * self.k[i * n + j] + self.k[j * n + j]).max(0.0)
    }

    fn to_clusters(&self, assign: &[usize], kc: usize) -> Vec<f64> {
        let n = self.n;
        let mut counts = vec![0usize; kc];
        for &c in assign {
            counts[c] += 1;
        }
        // cross[i][c] = sum_{j in c} K[i][j]
        let mut cross = vec![0.0; n * kc];
        for i in 0..n {
            let row = &self.k[i * n..(i + 1) * n];
            for (j, &c) in assign.iter().enumerate() {
                cross[i * kc + c] += row[j];
            }
        }
        let mut within = vec![0.0; kc];
        for (j, &c) in assign.iter().enumerate() {
            within[c] += cross[j * kc + c];
        }
        let mut out = Vec::with_capacity(n * kc);
        for i in 0..n {
            for c in 0..kc {
                out.push(if counts[c] == 0 {
                    f64::INFINITY
                } else {
                    let m = counts[c] as f64;
                    (self.k[i * n + i] - 2.0 * cross[i * kc + c] / m + within[c] / (m * m)).max(0.0)
                });
            }
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++: first center uniform, the rest drawn with probability
/// proportional to the squared distance to the nearest chosen center.
fn seed_centers(space: &dyn Space, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = space.len();
    let mut centers = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| space.pair(i, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if nearest[pick] == 0.0 {
                // Rounding ran past the end; take the last point with mass.
                pick = (0..n).rev().find(|&i| nearest[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Every point coincides with a center; pick any unused index.
            let free: Vec<usize> = (0..n).filter(|i| !centers.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        centers.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(space.pair(i, next));
        }
    }
    centers
}

/// Index of the smallest entry; ties go to the lowest index.
fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = c;
        }
    }
    best
}

struct Run {
    assign: Vec<usize>,
    objective: f64,
    trace: Vec<f64>,
}

fn lloyd(space: &dyn Space, opts: &KmeansOptions, rng: &mut ChaCha8Rng) -> Run {
    let n = space.len();
    let k = opts.k;
    let centers = seed_centers(space, k, rng);
    let mut assign: Vec<usize> = (0..n)
        .map(|i| {
            let row: Vec<f64> = centers.iter().map(|&c| space.pair(i, c)).collect();
            argmin(&row)
        })
        .collect();
    let mut trace = Vec::new();
    repair_empty(space, &mut assign, k);
    for _ in 0..opts.max_iter {
        let dists = space.to_clusters(&assign, k);
        trace.push((0..n).map(|i| dists[i * k + assign[i]]).sum());
        let mut next: Vec<usize> = (0..n).map(|i| argmin(&dists[i * k..(i + 1) * k])).collect();
        repair_empty(space, &mut next, k);
        if next == assign {
            break;
        }
        assign = next;
    }
    let dists = space.to_clusters(&assign, k);
    let objective = (0..n).map(|i| dists[i * k + assign[i]]).sum();
    if trace.last() != Some(&objective) {
        trace.push(objective);
    }
    Run {
        assign,
        objective,
        trace,
    }
}

/// Moves the point farthest from its own cluster mean into each empty
/// cluster.
fn repair_empty(space: &dyn Space, assign: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in assign.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let dists = space.to_clusters(assign, k);
        let far = (0..assign.len())
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&a, &b| {
                dists[a * k + assign[a]]
                    .total_cmp(&dists[b * k + assign[b]])
                    .then(b.cmp(&a))
            })
            .expect("k <= n leaves a cluster with two points");
        assign[far] = empty;
    }
}

fn run(space: &dyn Space, opts: &KmeansOptions) -> Result<ClusteringResult> {
    let n = space.len();
    if opts.k == 0 || opts.k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot form {} clusters from {n} points",
            opts.k
        )));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<Run> = None;
    for _ in 0..opts.restarts {
        let r = lloyd(space, opts, &mut rng);
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusteringResult {
        assignments: best.assign,
        accuracy: None,
        objective: best.objective,
        objective_trace: best.trace,
        seed: opts.seed,
        restarts: opts.restarts,
    })
}

/// Euclidean K-means on feature rows.
pub fn kmeans(rows: &[Vec<f64>], opts: &KmeansOptions) -> Result<ClusteringResult> {
    if let Some(first) = rows.first() {
        if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                context: "kmeans rows",
                expected: first.len(),
                got: bad.len(),
            });
        }
    }
    run(&Points(rows), opts)
}

/// Diagonal shift that makes a symmetric matrix positive definite:
/// `max(0, -lambda_min) + 1e-6`.
pub(crate) fn kernel_shift(k: &SimilarityMatrix) -> f64 {
    let n = k.n();
    let m = DMatrix::from_row_slice(n, n, k.values());
    let lambda_min = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    (-lambda_min).max(0.0) + 1e-6
}

/// Kernel K-means on a symmetric similarity matrix, after shifting its
/// diagonal to make it positive definite.
pub fn kernel_kmeans(k: &SimilarityMatrix, opts: &KmeansOptions) -> Result<ClusteringResult> {
    if !k.is_symmetric() {
        return Err(Error::InvalidArgument(
            "kernel K-means needs a symmetric matrix".into(),
        ));
    }
    if k.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel matrix entries".into()));
    }
    let n = k.n();
    let shift = kernel_shift(k);
    let mut values = k.values().to_vec();
    for i in 0..n {
        values[i * n + i] += shift;
    }
    run(&Kernel { n, k: &values }, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_pairs() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ];
        let r = kmeans(&rows, &KmeansOptions::new(2, 0)).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        // Each pair contributes 2 * 0.5^2.
        assert!((r.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singletons_have_zero_objective() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&rows, &KmeansOptions::new(5, 1)).unwrap();
        assert_eq!(r.objective, 0.0);
        assert!(kmeans(&rows, &KmeansOptions::new(6, 1)).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_clusters() {
        let rows = vec![vec![1.0]; 4];
        let r = kmeans(&rows, &KmeansOptions::new(3, 2)).unwrap();
        let mut ids = r.assignments.clone();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn block_kernel_recovered_with_and_without_shift() {
        let n = 6;
        let block = |extra: f64| {
            let rows = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            let same = (i < 3) == (j < 3);
                            f64::from(u8::from(same)) + if i == j { extra } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            SimilarityMatrix::from_rows(rows).unwrap()
        };
        for extra in [0.0, 5.0] {
            let r = kernel_kmeans(&block(extra), &KmeansOptions::new(2, 3)).unwrap();
            let a = &r.assignments;
            assert!(a[0] == a[1] && a[1] == a[2]);
            assert!(a[3] == a[4] && a[4] == a[5]);
            assert_ne!(a[0], a[3]);
        }
    }

    #[test]
    fn shift_makes_indefinite_kernel_positive() {
        let k = SimilarityMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let c = kernel_shift(&k);
        assert!((c - (1.0 + 1e-6)).abs() < 1e-9);
    }

    #[test]
    fn argmin_prefers_lowest_index() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), 1);
    }
}
