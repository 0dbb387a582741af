//! Maximum mean discrepancy estimators.
//!
//! All reductions run in row-major order over the Gram blocks so that the
//! reported values are bit-reproducible whatever the thread count used to
//! fill the Grams.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::AugmentedPath;
use crate::sigkernel::{gram, GramMatrix, KernelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Plug-in V-statistic; non-negative.
    Biased,
    /// U-statistic; unbiased, may be negative.
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    pub value: f64,
    pub estimator: Estimator,
    pub m: usize,
    pub n: usize,
}

/// Row-major sum of `f(i, j)` over `rows x cols`, optionally skipping the
/// diagonal.
pub(crate) fn block_sum(rows: usize, cols: usize, skip_diag: bool, f: impl Fn(usize, usize) -> f64) -> f64 {
    let mut s = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            if skip_diag && i == j {
                continue;
            }
            s += f(i, j);
        }
    }
    s
}

/// Combines the three block means. Shared by every estimator so that
/// algebraically identical inputs give bit-identical outputs.
pub(crate) fn combine(xx: f64, yy: f64, xy: f64) -> f64 {
    xx + yy - 2.0 * xy
}

pub(crate) fn biased_from(
    m: usize,
    n: usize,
    kxx: impl Fn(usize, usize) -> f64,
    kyy: impl Fn(usize, usize) -> f64,
    kxy: impl Fn(usize, usize) -> f64,
) -> f64 {
    let xx = block_sum(m, m, false, kxx) / (m * m) as f64;
    let yy = block_sum(n, n, false, kyy) / (n * n) as f64;
    let xy = block_sum(m, n, false, kxy) / (m * n) as f64;
    combine(xx, yy, xy).max(0.0)
}

pub(crate) fn unbiased_from(
    m: usize,
    n: usize,
    kxx: impl Fn(usize, usize) -> f64,
    kyy: impl Fn(usize, usize) -> f64,
    kxy: impl Fn(usize, usize) -> f64,
) -> f64 {
    let xx = block_sum(m, m, true, kxx) / (m * (m - 1)) as f64;
    let yy = block_sum(n, n, true, kyy) / (n * (n - 1)) as f64;
    let xy = block_sum(m, n, false, kxy) / (m * n) as f64;
    combine(xx, yy, xy)
}

fn check_blocks(kxx: &GramMatrix, kyy: &GramMatrix, kxy: &GramMatrix) -> Result<(usize, usize)> {
    let (m, m2) = kxx.shape();
    let (n, n2) = kyy.shape();
    if m != m2 || n != n2 || kxy.shape() != (m, n) {
        return Err(Error::ShapeMismatch(format!(
            "Gram blocks {:?}, {:?}, {:?} are inconsistent",
            kxx.shape(),
            kyy.shape(),
            kxy.shape()
        )));
    }
    Ok((m, n))
}

/// `mean(Kxx) + mean(Kyy) - 2 mean(Kxy)`, clamped below at 0.
pub fn mmd2_biased(kxx: &GramMatrix, kyy: &GramMatrix, kxy: &GramMatrix) -> Result<f64> {
    let (m, n) = check_blocks(kxx, kyy, kxy)?;
    Ok(biased_from(
        m,
        n,
        |i, j| kxx.get(i, j),
        |i, j| kyy.get(i, j),
        |i, j| kxy.get(i, j),
    ))
}

/// Off-diagonal means of `Kxx` and `Kyy` minus twice the mean of `Kxy`.
pub fn mmd2_unbiased(kxx: &GramMatrix, kyy: &GramMatrix, kxy: &GramMatrix) -> Result<f64> {
    let (m, n) = check_blocks(kxx, kyy, kxy)?;
    if m < 2 || n < 2 {
        return Err(Error::TooFewSamples { m, n });
    }
    Ok(unbiased_from(
        m,
        n,
        |i, j| kxx.get(i, j),
        |i, j| kyy.get(i, j),
        |i, j| kxy.get(i, j),
    ))
}

pub fn mmd2(estimator: Estimator, kxx: &GramMatrix, kyy: &GramMatrix, kxy: &GramMatrix) -> Result<f64> {
    match estimator {
        Estimator::Biased => mmd2_biased(kxx, kyy, kxy),
        Estimator::Unbiased => mmd2_unbiased(kxx, kyy, kxy),
    }
}

/// Signature-kernel MMD between two sets of augmented paths.
pub fn sig_mmd(
    p: &[AugmentedPath],
    q: &[AugmentedPath],
    cfg: &KernelConfig,
    estimator: Estimator,
) -> Result<MmdResult> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InvalidInput("MMD of an empty sample set".into()));
    }
    let kxx = gram(p, None, cfg, false)?;
    let kyy = gram(q, None, cfg, false)?;
    let kxy = gram(p, Some(q), cfg, false)?;
    Ok(MmdResult {
        value: mmd2(estimator, &kxx, &kyy, &kxy)?,
        estimator,
        m: p.len(),
        n: q.len(),
    })
}

/// Gaussian kernel `exp(-|a - b|^2 / (2 h^2))` on flattened vectors.
pub fn rbf(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d / (bandwidth * bandwidth)).exp()
}

fn rbf_gram(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<GramMatrix> {
    let entries = x
        .iter()
        .flat_map(|a| y.iter().map(move |b| rbf(a, b, bandwidth)))
        .collect();
    GramMatrix::from_entries(x.len(), y.len(), entries)
}

/// MMD with a Gaussian kernel applied directly to flattened trajectories.
pub fn rbf_mmd(
    p: &[Vec<f64>],
    q: &[Vec<f64>],
    bandwidth: f64,
    estimator: Estimator,
) -> Result<MmdResult> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InvalidInput("MMD of an empty sample set".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let len = p[0].len();
    if let Some(bad) = p.iter().chain(q).find(|v| v.len() != len) {
        return Err(Error::ShapeMismatch(format!(
            "flattened trajectories of length {} and {}",
            len,
            bad.len()
        )));
    }
    let kxx = rbf_gram(p, p, bandwidth)?;
    let kyy = rbf_gram(q, q, bandwidth)?;
    let kxy = rbf_gram(p, q, bandwidth)?;
    Ok(MmdResult {
        value: mmd2(estimator, &kxx, &kyy, &kxy)?,
        estimator,
        m: p.len(),
        n: q.len(),
    })
}

/// Median pairwise Euclidean distance between flattened vectors (1 if zero).
pub fn median_distance(vectors: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            d.push(
                vectors[i]
                    .iter()
                    .zip(&vectors[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, &mut med, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if med > 0.0 {
        med
    } else {
        1.0
    }
}
