//! Synthetic two-class point clouds and graph geodesic distances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{Field, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManifoldId {
    Torus,
    FoldedBoxes,
    DoubleCosine,
    DoubleHelix,
    TwoCircles,
    TwoSpheres,
}

impl ManifoldId {
    pub const ALL: [ManifoldId; 6] = [
        ManifoldId::Torus,
        ManifoldId::FoldedBoxes,
        ManifoldId::DoubleCosine,
        ManifoldId::DoubleHelix,
        ManifoldId::TwoCircles,
        ManifoldId::TwoSpheres,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManifoldId::Torus => "torus",
            ManifoldId::FoldedBoxes => "folded_boxes",
            ManifoldId::DoubleCosine => "double_cosine",
            ManifoldId::DoubleHelix => "double_helix",
            ManifoldId::TwoCircles => "two_circles",
            ManifoldId::TwoSpheres => "two_spheres",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ManifoldId::DoubleCosine | ManifoldId::TwoCircles => 2,
            _ => 3,
        }
    }

    /// Point at parameter `t` on the one-parameter manifolds; `label` is +1
    /// (blue) or -1 (red). Returns `None` for the surfaces.
    pub fn curve_point(self, label: i32, t: f64) -> Option<Vec<f64>> {
        let blue = label > 0;
        let s = if blue { 1.0 } else { -1.0 };
        match self {
            ManifoldId::Torus => {
                let r = 8.0 + s * (4.0 * t).sin();
                Some(vec![r * t.cos(), r * t.sin(), s * (4.0 * t).cos()])
            }
            ManifoldId::DoubleCosine => Some(vec![t, t.cos() + 0.5 * s]),
            ManifoldId::DoubleHelix => {
                let phase = if blue { 0.0 } else { PI };
                Some(vec![(t + phase).cos(), (t + phase).sin(), t / PI])
            }
            ManifoldId::TwoCircles => {
                let r = if blue { 2.0 } else { 3.0 };
                Some(vec![r * t.cos(), r * t.sin()])
            }
            ManifoldId::FoldedBoxes | ManifoldId::TwoSpheres => None,
        }
    }
}

impl fmt::Display for ManifoldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ManifoldId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ManifoldId::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown manifold '{s}'")))
    }
}

/// Labeled synthetic point cloud. Blue points (label +1) come first.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSample {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<i32>,
    /// Intrinsic parameter per point (angle, curve parameter, or normalized
    /// arc length for the boxes).
    pub thetas: Vec<f64>,
    pub manifold: ManifoldId,
}

impl ManifoldSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn indices_of(&self, label: i32) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    /// Points shifted and scaled to zero mean and unit variance per
    /// coordinate.
    pub fn standardized_points(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let n = self.len() as f64;
        let mut mean = vec![0.0; d];
        for p in &self.points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for p in &self.points {
            for k in 0..d {
                var[k] += (p[k] - mean[k]).powi(2) / n;
            }
        }
        self.points
            .iter()
            .map(|p| {
                (0..d)
                    .map(|k| {
                        if var[k] > 0.0 {
                            (p[k] - mean[k]) / var[k].sqrt()
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_table(&self) -> Table {
        let axes = ["x", "y", "z"];
        let mut header: Vec<&str> = axes[..self.dim()].to_vec();
        header.extend(["label", "theta"]);
        let mut table = Table::new(header);
        for i in 0..self.len() {
            let mut row: Vec<Field> = self.points[i].iter().map(|&v| Field::from(v)).collect();
            row.push(Field::from(self.labels[i] as i64));
            row.push(self.thetas.get(i).map_or(Field::Empty, |&t| Field::from(t)));
            table.push(row);
        }
        table
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::data_io::write_csv(path, &self.to_table())
    }
}

/// `n` stratified draws on `[lo, hi)`: one per equal cell, jittered
/// uniformly within half a cell of the cell center.
fn stratified(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cell = (hi - lo) / n as f64;
    (0..n)
        .map(|k| {
            let jitter: f64 = rng.random_range(-0.5..0.5);
            lo + (k as f64 + 0.5 + jitter) * cell
        })
        .collect()
}

fn check_count(n_per_class: usize) -> Result<()> {
    if n_per_class < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 points per class, got {n_per_class}"
        )));
    }
    Ok(())
}

fn curve_sample(
    id: ManifoldId,
    n_per_class: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<ManifoldSample> {
    check_count(n_per_class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = ManifoldSample {
        points: Vec::with_capacity(2 * n_per_class),
        labels: Vec::with_capacity(2 * n_per_class),
        thetas: Vec::with_capacity(2 * n_per_class),
        manifold: id,
    };
    for label in [1, -1] {
        for t in stratified(n_per_class, lo, hi, &mut rng) {
            sample
                .points
                .push(id.curve_point(label, t).expect("curve manifold"));
            sample.labels.push(label);
            sample.thetas.push(t);
        }
    }
    Ok(sample)
}

/// Two interlocked wavy rings: radius `8 +/- sin 4t`, height `+/- cos 4t`.
pub fn gen_torus(n_per_class: usize, seed: u64) -> Result<ManifoldSample> {
    curve_sample(ManifoldId::Torus, n_per_class, 0.0, TAU, seed)
}

/// Nested diamond cylinders `|y| + 1.2|x| = 13` (blue) and `= 11` (red),
/// `z` in `[-1, 1]`, sampled uniformly on the surface.
pub fn gen_folded_boxes(n_per_class: usize, seed: u64) -> Result<ManifoldSample> {
    check_count(n_per_class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = ManifoldSample {
        points: Vec::with_capacity(2 * n_per_class),
        labels: Vec::with_capacity(2 * n_per_class),
        thetas: Vec::with_capacity(2 * n_per_class),
        manifold: ManifoldId::FoldedBoxes,
    };
    for (label, c) in [(1, 13.0), (-1, 11.0)] {
        let vertices = [
            (c / 1.2, 0.0),
            (0.0, c),
            (-c / 1.2, 0.0),
            (0.0, -c),
            (c / 1.2, 0.0),
        ];
        // The four edges have equal length, so arc length is linear in the
        // edge parameter.
        for s in stratified(n_per_class, 0.0, 4.0, &mut rng) {
            let edge = (s.floor() as usize).min(3);
            let frac = s - edge as f64;
            let (x0, y0) = vertices[edge];
            let (x1, y1) = vertices[edge + 1];
            let z: f64 = rng.random_range(-1.0..=1.0);
            sample
                .points
                .push(vec![x0 + frac * (x1 - x0), y0 + frac * (y1 - y0), z]);
            sample.labels.push(label);
            sample.thetas.push(s * TAU / 4.0);
        }
    }
    Ok(sample)
}

/// The supplementary shapes: two phase-shifted cosines, a double helix, two
/// concentric circles (radii 2 and 3) and two concentric spheres (radii 2
/// and 3).
pub fn gen_extra(id: ManifoldId, n_per_class: usize, seed: u64) -> Result<ManifoldSample> {
    match id {
        ManifoldId::DoubleCosine | ManifoldId::DoubleHelix => {
            curve_sample(id, n_per_class, 0.0, 4.0 * PI, seed)
        }
        ManifoldId::TwoCircles => curve_sample(id, n_per_class, 0.0, TAU, seed),
        ManifoldId::TwoSpheres => {
            check_count(n_per_class)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sample = ManifoldSample {
                points: Vec::with_capacity(2 * n_per_class),
                labels: Vec::with_capacity(2 * n_per_class),
                thetas: Vec::with_capacity(2 * n_per_class),
                manifold: id,
            };
            for (label, r) in [(1, 2.0), (-1, 3.0)] {
                // Uniform height makes the area measure uniform (Archimedes).
                for z in stratified(n_per_class, -1.0, 1.0, &mut rng) {
                    let phi: f64 = rng.random_range(0.0..TAU);
                    let rho = (1.0 - z * z).max(0.0).sqrt();
                    sample
                        .points
                        .push(vec![r * rho * phi.cos(), r * rho * phi.sin(), r * z]);
                    sample.labels.push(label);
                    sample.thetas.push(phi);
                }
            }
            Ok(sample)
        }
        ManifoldId::Torus | ManifoldId::FoldedBoxes => Err(Error::InvalidArgument(format!(
            "'{id}' has its own generator"
        ))),
    }
}

/// Dispatches to the generator for `id`.
pub fn generate(id: ManifoldId, n_per_class: usize, seed: u64) -> Result<ManifoldSample> {
    match id {
        ManifoldId::Torus => gen_torus(n_per_class, seed),
        ManifoldId::FoldedBoxes => gen_folded_boxes(n_per_class, seed),
        _ => gen_extra(id, n_per_class, seed),
    }
}

pub const DEFAULT_NEIGHBORS: usize = 10;

/// Same-class k-nearest-neighbor graph with all-pairs shortest paths.
#[derive(Debug, Clone)]
pub struct GeodesicGraph {
    n: usize,
    /// Symmetrized adjacency lists with Euclidean edge lengths.
    pub edges: Vec<Vec<(usize, f64)>>,
    distances: Vec<f64>,
}

impl GeodesicGraph {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Graph distance; `f64::INFINITY` across classes.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.distances[i * self.n..(i + 1) * self.n]
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // Min-heap on distance, ties by index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra(edges: &[Vec<(usize, f64)>], source: usize, out: &mut [f64]) {
    out.fill(f64::INFINITY);
    out[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Frontier(0.0, source));
    while let Some(Frontier(d, u)) = heap.pop() {
        if d > out[u] {
            continue;
        }
        for &(v, len) in &edges[u] {
            let nd = d + len;
            if nd < out[v] {
                out[v] = nd;
                heap.push(Frontier(nd, v));
            }
        }
    }
}

/// Builds the k-nearest-neighbor graph within each class (edges made
/// symmetric) and runs Dijkstra from every point.
pub fn build_geodesic(sample: &ManifoldSample, k: usize) -> Result<GeodesicGraph> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let n = sample.len();
    let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut classes: Vec<i32> = sample.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    for &label in &classes {
        let members = sample.indices_of(label);
        for &i in &members {
            let mut near: Vec<(f64, usize)> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (euclid(&sample.points[i], &sample.points[j]), j))
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(d, j) in near.iter().take(k) {
                edges[i].push((j, d));
                edges[j].push((i, d));
            }
        }
    }
    for list in edges.iter_mut() {
        list.sort_by_key(|a| a.0);
        list.dedup_by(|a, b| a.0 == b.0);
    }
    let mut distances = vec![f64::INFINITY; n * n];
    for i in 0..n {
        dijkstra(&edges, i, &mut distances[i * n..(i + 1) * n]);
    }
    for &label in &classes {
        let members = sample.indices_of(label);
        let root = members[0];
        if let Some(&far) = members
            .iter()
            .find(|&&j| !distances[root * n + j].is_finite())
        {
            return Err(Error::DisconnectedGraph(format!(
                "class {label}: point {far} unreachable from point {root} with k = {k}"
            )));
        }
    }
    // Dijkstra is exact per source, but summation order can differ between
    // the two directions; average them so the matrix is exactly symmetric.
    for i in 0..n {
        for j in i + 1..n {
            let a = distances[i * n + j];
            let b = distances[j * n + i];
            let d = if a.is_finite() { 0.5 * (a + b) } else { a };
            distances[i * n + j] = d;
            distances[j * n + i] = d;
        }
    }
    Ok(GeodesicGraph {
        n,
        edges,
        distances,
    })
}
