//! Minimum Covariance Determinant by FAST-MCD.
//!
//! Every start draws a random `(p + 1)`-subset, grows it until its scatter is
//! non-singular, and runs two concentration steps (C-steps) on a working
//! subsample. The best ten starts are then iterated on the full data until
//! their `h`-subset stops changing. The winner's scatter is rescaled for
//! consistency at the normal model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng::stream_seed;

/// Relative ridge added to a scatter whose Cholesky factor is (near) singular.
pub const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustEstimate {
    pub location: Vec<f64>,
    /// `p x p`, row-major.
    pub scatter: Vec<f64>,
    pub support_fraction: f64,
}

impl RobustEstimate {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn scatter_matrix(&self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_row_slice(p, p, &self.scatter)
    }

    /// Cholesky-backed distance evaluator.
    pub fn whitener(&self) -> Result<Whitener> {
        let chol = Cholesky::new(self.scatter_matrix()).ok_or_else(|| {
            Error::NotPositiveDefinite("robust scatter has no Cholesky factor".into())
        })?;
        Ok(Whitener {
            location: DVector::from_column_slice(&self.location),
            chol,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Whitener {
    location: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Whitener {
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.location.len() {
            return Err(Error::ShapeMismatch(format!(
                "point of dimension {} against a {}-dimensional estimate",
                x.len(),
                self.location.len()
            )));
        }
        let mut z = DVector::from_column_slice(x) - &self.location;
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        Ok(z.norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McdOptions {
    pub n_init: usize,
    pub max_csteps: usize,
    /// Starts are screened on a random subsample of at most this many rows.
    pub screen_rows: usize,
    pub seed: u64,
}

impl Default for McdOptions {
    fn default() -> Self {
        Self {
            n_init: 500,
            max_csteps: 100,
            screen_rows: 600,
            seed: 0,
        }
    }
}

struct Fit {
    location: DVector<f64>,
    scatter: DMatrix<f64>,
    logdet: f64,
    subset: Vec<usize>,
}

fn mean_cov(data: &DMatrix<f64>, rows: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let p = data.ncols();
    let sub = data.select_rows(rows);
    let mean = DVector::from_iterator(p, sub.column_iter().map(|c| c.mean()));
    let mut centered = sub;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / rows.len() as f64;
    (mean, cov)
}

/// Cholesky of `cov`, retried once with a relative ridge when the factor is
/// missing or has a vanishing pivot.
fn factor(cov: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, DMatrix<f64>)> {
    let p = cov.nrows();
    let avg = cov.trace() / p as f64;
    let healthy = |c: &Cholesky<f64, Dyn>| {
        let l = c.l_dirty();
        (0..p).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * avg)
    };
    if let Some(c) = Cholesky::new(cov.clone()) {
        if healthy(&c) {
            return Some((c, cov.clone()));
        }
    }
    if !(avg > 0.0) || !avg.is_finite() {
        return None;
    }
    let ridged = cov + DMatrix::identity(p, p) * (RIDGE * avg);
    Cholesky::new(ridged.clone()).map(|c| (c, ridged))
}

fn logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

fn sq_distances(data: &DMatrix<f64>, rows: &[usize], mean: &DVector<f64>, c: &Cholesky<f64, Dyn>) -> Vec<f64> {
    let mut centered = data.select_rows(rows).transpose();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    c.l_dirty().solve_lower_triangular_mut(&mut centered);
    centered.column_iter().map(|z| z.norm_squared()).collect()
}

/// Indices into `rows` of the `h` smallest distances, in ascending index
/// order so subsets compare by value.
fn smallest(rows: &[usize], d: &[f64], h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let mut pick: Vec<usize> = order[..h].iter().map(|&i| rows[i]).collect();
    pick.sort_unstable();
    pick
}

fn fit_subset(data: &DMatrix<f64>, subset: Vec<usize>) -> Option<Fit> {
    let (location, cov) = mean_cov(data, &subset);
    let (c, scatter) = factor(&cov)?;
    Some(Fit {
        location,
        logdet: logdet(&c),
        scatter,
        subset,
    })
}

/// Runs up to `steps` C-steps over `rows`, stopping early when the subset is
/// stable.
fn csteps(data: &DMatrix<f64>, rows: &[usize], h: usize, mut fit: Fit, steps: usize) -> Option<Fit> {
    for _ in 0..steps {
        let (c, _) = factor(&fit.scatter)?;
        let d = sq_distances(data, rows, &fit.location, &c);
        let next = smallest(rows, &d, h);
        if next == fit.subset {
            break;
        }
        let candidate = fit_subset(data, next)?;
        // C-steps never increase the determinant; guard against round-off
        if candidate.logdet > fit.logdet + 1e-12 * fit.logdet.abs().max(1.0) {
            break;
        }
        fit = candidate;
    }
    Some(fit)
}

fn elemental_start(data: &DMatrix<f64>, pool: &[usize], p: usize, rng: &mut ChaCha8Rng) -> Option<Fit> {
    let order: Vec<usize> = sample(rng, pool.len(), pool.len()).into_iter().collect();
    let mut size = (p + 1).min(pool.len());
    loop {
        let mut subset: Vec<usize> = order[..size].iter().map(|&i| pool[i]).collect();
        subset.sort_unstable();
        let (location, cov) = mean_cov(data, &subset);
        if let Some(c) = Cholesky::new(cov.clone()) {
            let avg = cov.trace() / p as f64;
            let l = c.l_dirty();
            if (0..p).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * avg) {
                return Some(Fit {
                    location,
                    logdet: logdet(&c),
                    scatter: cov,
                    subset,
                });
            }
        }
        if size == pool.len() {
            return fit_subset(data, subset);
        }
        size += 1;
    }
}

/// Robust location and scatter covering `ceil(support_fraction * n)` rows of
/// `data` (`n x p`).
pub fn fit_mcd(data: &DMatrix<f64>, support_fraction: f64, opts: &McdOptions) -> Result<RobustEstimate> {
    let (n, p) = data.shape();
    if n <= p {
        return Err(Error::McdUnderdetermined { n, p });
    }
    if !(support_fraction > 0.5 && support_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "support fraction must lie in (0.5, 1], got {support_fraction}"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("MCD input contains non-finite values".into()));
    }
    let h = ((support_fraction * n as f64).ceil() as usize).clamp(p + 1, n);
    let all: Vec<usize> = (0..n).collect();

    let best = if h == n {
        fit_subset(data, all.clone())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(opts.seed, &[0]));
        let screen_size = n.min(opts.screen_rows.max(2 * (p + 1)));
        let mut pool: Vec<usize> = sample(&mut rng, n, screen_size).into_iter().collect();
        pool.sort_unstable();
        let h_screen = ((support_fraction * screen_size as f64).ceil() as usize).clamp(p + 1, screen_size);

        let mut screened: Vec<(usize, Fit)> = (0..opts.n_init.max(1))
            .into_par_iter()
            .filter_map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(opts.seed, &[1, k as u64]));
                let start = elemental_start(data, &pool, p, &mut rng)?;
                let start = fit_subset(data, {
                    let (c, _) = factor(&start.scatter)?;
                    let d = sq_distances(data, &pool, &start.location, &c);
                    smallest(&pool, &d, h_screen)
                })?;
                csteps(data, &pool, h_screen, start, 2).map(|f| (k, f))
            })
            .collect();
        screened.sort_by(|a, b| a.1.logdet.total_cmp(&b.1.logdet).then(a.0.cmp(&b.0)));
        screened.truncate(10);

        let refined: Vec<(usize, Fit)> = screened
            .into_par_iter()
            .filter_map(|(k, f)| {
                let (c, _) = factor(&f.scatter)?;
                let d = sq_distances(data, &all, &f.location, &c);
                let start = fit_subset(data, smallest(&all, &d, h))?;
                csteps(data, &all, h, start, opts.max_csteps).map(|f| (k, f))
            })
            .collect();
        refined
            .into_iter()
            .min_by(|a, b| a.1.logdet.total_cmp(&b.1.logdet).then(a.0.cmp(&b.0)))
            .map(|(_, f)| f)
    };
    let best = best.ok_or_else(|| {
        Error::NotPositiveDefinite("no MCD candidate has a non-singular scatter".into())
    })?;

    let factor_c = consistency_factor(p, h, n);
    let scatter = best.scatter * factor_c;
    let (_, scatter) = factor(&scatter)
        .ok_or_else(|| Error::NotPositiveDefinite("MCD scatter is singular after ridge".into()))?;
    Ok(RobustEstimate {
        location: best.location.iter().copied().collect(),
        scatter: scatter.transpose().iter().copied().collect(),
        support_fraction,
    })
}

/// Rescales the raw `h`-subset covariance so it is unbiased for normal data:
/// `(h/n) / P(χ²_{p+2} ≤ χ²_{p, h/n})`. Equals 1 when `h = n`.
pub fn consistency_factor(p: usize, h: usize, n: usize) -> f64 {
    if h >= n {
        return 1.0;
    }
    let frac = h as f64 / n as f64;
    let q = ChiSquared::new(p as f64).expect("p > 0").inverse_cdf(frac);
    let mass = ChiSquared::new((p + 2) as f64).expect("p > 0").cdf(q);
    frac / mass
}

/// Mahalanobis distance of `x` under a robust estimate.
pub fn mahalanobis(x: &[f64], robust: &RobustEstimate) -> Result<f64> {
    robust.whitener()?.distance(x)
}
