//! Similarity-based clustering: the warm-up / record / cluster loop plus the
//! K-means family and PCA used as baselines.

mod algorithm;
mod kmeans;
mod pca;

pub use algorithm::{
    baseline_kmeans, baseline_pca_kmeans, build_similarity, build_similarity_with, run_pipeline,
    warm_up, Clusterer, Engine, InitialWeights, PipelineConfig, PipelineOutcome, SimilarityBuild,
    WarmUp,
};
pub use kmeans::{kernel_kmeans, kmeans, ClusteringResult, KmeansOptions};
pub use pca::pca;

use std::path::Path;

use crate::data_io::{parse_float, read_csv, write_csv, Field, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Primary,
    Auxiliary,
}

/// Feature vectors with their true subclass ids. The ids are used for
/// scoring only.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub role: Role,
}

impl LabeledSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, role: Role) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "labeled set",
                expected: features.len(),
                got: labels.len(),
            });
        }
        if let Some(first) = features.first() {
            let d = first.len();
            if let Some(bad) = features.iter().find(|f| f.len() != d) {
                return Err(Error::DimensionMismatch {
                    context: "labeled set features",
                    expected: d,
                    got: bad.len(),
                });
            }
        }
        Ok(LabeledSet {
            features,
            labels,
            role,
        })
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityOption {
    Relative,
    Kernelized,
}

impl SimilarityOption {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityOption::Relative => "relative",
            SimilarityOption::Kernelized => "kernelized",
        }
    }
}

/// Square matrix of pairwise similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    pub option: SimilarityOption,
    pub symmetrized: bool,
}

impl SimilarityMatrix {
    pub fn zeros(n: usize, option: SimilarityOption) -> Self {
        SimilarityMatrix {
            n,
            values: vec![0.0; n * n],
            option,
            symmetrized: false,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "similarity matrix row",
                expected: n,
                got: bad.len(),
            });
        }
        Ok(SimilarityMatrix {
            n,
            values: rows.into_iter().flatten().collect(),
            option: SimilarityOption::Kernelized,
            symmetrized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks(self.n.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Header row of column indices, then one line per row.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new((0..self.n).map(|j| j.to_string()));
        for i in 0..self.n {
            t.push(self.row(i).iter().map(|&v| Field::from(v)).collect());
        }
        t
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.to_table())
    }

    pub fn read_csv(path: &Path, option: SimilarityOption) -> Result<Self> {
        let (header, rows) = read_csv(path)?;
        let n = header.len();
        if rows.len() != n {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("{n} columns but {} rows", rows.len()),
            });
        }
        let mut m = SimilarityMatrix::zeros(n, option);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("row {i} has {} fields, expected {n}", row.len()),
                });
            }
            for (j, s) in row.iter().enumerate() {
                m.set(i, j, parse_float(path, s)?);
            }
        }
        m.symmetrized = m.is_symmetric();
        Ok(m)
    }
}

/// `(S + S^T) / 2`.
pub fn symmetrize(s: &SimilarityMatrix) -> SimilarityMatrix {
    let mut out = s.clone();
    for i in 0..s.n {
        for j in 0..i {
            let v = 0.5 * (s.get(i, j) + s.get(j, i));
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out.symmetrized = true;
    out
}

/// Fraction of agreement between a two-cluster assignment and two-class
/// truth, maximized over the two ways of matching cluster ids to classes.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "clustering accuracy",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("no assignments to score".into()));
    }
    let binarize = |v: &[usize], what: &str| -> Result<Vec<bool>> {
        let mut ids: Vec<usize> = v.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "{what} has {} distinct ids, expected at most two",
                ids.len()
            )));
        }
        Ok(v.iter().map(|&x| x != ids[0]).collect())
    };
    let p = binarize(pred, "prediction")?;
    let t = binarize(truth, "truth")?;
    let agree = p.iter().zip(&t).filter(|(a, b)| a == b).count();
    Ok(agree.max(p.len() - agree) as f64 / p.len() as f64)
}
