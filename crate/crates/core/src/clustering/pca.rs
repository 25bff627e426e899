use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Projects centered rows onto the top `d` principal directions. Each
/// direction's sign makes its largest-magnitude loading positive.
pub fn pca(rows: &[Vec<f64>], d: usize) -> Result<Vec<Vec<f64>>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InsufficientData("no rows to project".into()));
    }
    let p = rows[0].len();
    if d > p {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {d} components of {p}-dimensional data"
        )));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            context: "pca rows",
            expected: p,
            got: bad.len(),
        });
    }
    let mut mean = vec![0.0; p];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, p, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut basis = DMatrix::zeros(p, d);
    for (c, &k) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.neg_mut();
        }
        basis.set_column(c, &v);
    }
    let projected = centered * basis;
    Ok((0..n)
        .map(|i| projected.row(i).iter().copied().collect())
        .collect())
}
