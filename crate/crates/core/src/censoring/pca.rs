//! Principal components over pooled trajectory rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormal basis (`D x k`, row-major) of the leading principal
/// directions, applied to already normalized variates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub input_dim: usize,
    pub components: usize,
    pub basis: Vec<f64>,
    /// Fraction of total variance carried by the kept components.
    pub explained: f64,
}

impl PcaBasis {
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.input_dim).map(|j| self.basis[j * self.components + c]).collect()
    }
}

/// Keeps the smallest number of components whose cumulative variance share
/// reaches `min_explained`. `rows` holds `D`-vectors.
pub fn fit_pca(rows: &[&[f64]], min_explained: f64) -> Result<PcaBasis> {
    if rows.len() < 2 {
        return Err(Error::InvalidInput("PCA needs at least two rows".into()));
    }
    if !(min_explained > 0.0 && min_explained <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "explained-variance target must lie in (0, 1], got {min_explained}"
        )));
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let a = r[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += a * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("PCA input has zero variance".into()));
    }
    let mut k = 0;
    let mut acc = 0.0;
    while k < d {
        acc += eig.eigenvalues[order[k]].max(0.0);
        k += 1;
        if acc / total >= min_explained - 1e-12 {
            break;
        }
    }
    let mut basis = vec![0.0; d * k];
    for (c, &idx) in order[..k].iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        // sign convention: largest-magnitude loading positive
        let pivot = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a))).unwrap();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            basis[j * k + c] = sign * v[j];
        }
    }
    Ok(PcaBasis {
        input_dim: d,
        components: k,
        basis,
        explained: acc / total,
    })
}
