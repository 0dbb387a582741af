//! Untruncated signature kernel via the Goursat PDE.
//!
//! For two piecewise-linear paths `x` and `y` lifted through a static kernel
//! `κ`, the signature kernel `k(s, t) = <S(x)_{0,s}, S(y)_{0,t}>` solves
//!
//! ```text
//! ∂²k / ∂s∂t = k · ∂²κ(x_s, y_t) / ∂s∂t,   k(0, ·) = k(·, 0) = 1.
//! ```
//!
//! The forcing term is constant on each cell of the grid spanned by the path
//! rows. It is the second-order cross difference of the static Gram matrix.
//! Each cell can be split into `2^order x 2^order` sub-cells, and the solution
//! is advanced one sub-cell at a time with a second-order explicit scheme.

use std::cmp::Ordering;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{zero_pivot, AugmentedPath};

/// Forcing magnitudes above this make the local update polynomial unreliable.
const FORCING_WARN: f64 = 10.0;

/// Rows used by [`median_bandwidth`] are subsampled down to at most this many.
pub const MEDIAN_HEURISTIC_ROWS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StaticKernel {
    /// `exp(-|a - b|^2 / (2 bandwidth^2))`
    Rbf { bandwidth: f64 },
    /// `<a, b>`; only useful for closed-form checks.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub static_kernel: StaticKernel,
    pub dyadic_order: u32,
}

impl KernelConfig {
    pub const DEFAULT_DYADIC_ORDER: u32 = 2;

    pub fn rbf(bandwidth: f64) -> Self {
        Self {
            static_kernel: StaticKernel::Rbf { bandwidth },
            dyadic_order: Self::DEFAULT_DYADIC_ORDER,
        }
    }

    pub fn linear() -> Self {
        Self {
            static_kernel: StaticKernel::Linear,
            dyadic_order: Self::DEFAULT_DYADIC_ORDER,
        }
    }

    pub fn with_dyadic_order(mut self, order: u32) -> Self {
        self.dyadic_order = order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let StaticKernel::Rbf { bandwidth } = self.static_kernel {
            if !(bandwidth > 0.0) || !bandwidth.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "rbf bandwidth must be positive, got {bandwidth}"
                )));
            }
        }
        if self.dyadic_order > 10 {
            return Err(Error::InvalidInput(format!(
                "dyadic order {} is unreasonably large",
                self.dyadic_order
            )));
        }
        Ok(())
    }

    fn static_gram(&self, x: &AugmentedPath, y: &AugmentedPath) -> Vec<f64> {
        let (lx, ly) = (x.rows(), y.rows());
        let mut out = Vec::with_capacity(lx * ly);
        match self.static_kernel {
            StaticKernel::Linear => {
                for i in 0..lx {
                    let a = x.row(i);
                    out.extend((0..ly).map(|j| dot(a, y.row(j))));
                }
            }
            StaticKernel::Rbf { bandwidth } => {
                let gamma = -0.5 / (bandwidth * bandwidth);
                match x.channels() {
                    2 => rbf_rows::<2>(x.data(), y.data(), gamma, &mut out),
                    3 => rbf_rows::<3>(x.data(), y.data(), gamma, &mut out),
                    4 => rbf_rows::<4>(x.data(), y.data(), gamma, &mut out),
                    5 => rbf_rows::<5>(x.data(), y.data(), gamma, &mut out),
                    6 => rbf_rows::<6>(x.data(), y.data(), gamma, &mut out),
                    c => {
                        for a in x.data().chunks_exact(c) {
                            out.extend(y.data().chunks_exact(c).map(|b| (gamma * sq_dist(a, b)).exp()));
                        }
                    }
                }
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Static RBF Gram for a fixed channel count, so the distance loop unrolls.
fn rbf_rows<const C: usize>(x: &[f64], y: &[f64], gamma: f64, out: &mut Vec<f64>) {
    for a in x.chunks_exact(C) {
        let a: &[f64; C] = a.try_into().expect("exact chunk");
        out.extend(y.chunks_exact(C).map(|b| {
            let b: &[f64; C] = b.try_into().expect("exact chunk");
            let mut d = 0.0;
            for k in 0..C {
                let e = a[k] - b[k];
                d += e * e;
            }
            (gamma * d).exp()
        }));
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cross differences of the static Gram matrix on the coarse grid, plus the
/// dyadic refinement level at which they are to be applied.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementGrid {
    rows: usize,
    cols: usize,
    dyadic_order: u32,
    data: Vec<f64>,
}

impl IncrementGrid {
    /// Wraps an explicit forcing matrix (row-major) with no refinement.
    pub fn from_matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            dyadic_order: 0,
            data,
        })
    }

    pub fn coarse_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn coarse(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn dyadic_order(&self) -> u32 {
        self.dyadic_order
    }

    /// Fine-grid shape after refinement.
    pub fn shape(&self) -> (usize, usize) {
        let f = 1usize << self.dyadic_order;
        (self.rows * f, self.cols * f)
    }

    /// Forcing on the refined grid: every coarse entry repeated over its
    /// `2^order x 2^order` block and scaled by `4^{-order}`.
    pub fn refined(&self) -> Vec<f64> {
        let f = 1usize << self.dyadic_order;
        let scale = 1.0 / (f * f) as f64;
        let (fr, fc) = self.shape();
        let mut out = Vec::with_capacity(fr * fc);
        for i in 0..fr {
            out.extend((0..fc).map(|j| self.coarse(i / f, j / f) * scale));
        }
        out
    }
}

/// `A[i][j] = κ(x_{i+1}, y_{j+1}) - κ(x_{i+1}, y_j) - κ(x_i, y_{j+1}) + κ(x_i, y_j)`.
pub fn static_increment_grid(
    x: &AugmentedPath,
    y: &AugmentedPath,
    cfg: &KernelConfig,
) -> Result<IncrementGrid> {
    cfg.validate()?;
    check_pair(x, y)?;
    let g = cfg.static_gram(x, y);
    let ly = y.rows();
    let (rows, cols) = (x.rows() - 1, ly - 1);
    let mut data = Vec::with_capacity(rows * cols);
    for (r0, r1) in g.chunks_exact(ly).zip(g.chunks_exact(ly).skip(1)) {
        data.extend(
            r1.windows(2)
                .zip(r0.windows(2))
                .map(|(b, a)| b[1] - b[0] - a[1] + a[0]),
        );
    }
    if data.iter().any(|a| a.abs() > FORCING_WARN) {
        warn!("signature-kernel forcing exceeds {FORCING_WARN}; normalize the paths or increase the bandwidth");
    }
    Ok(IncrementGrid {
        rows,
        cols,
        dyadic_order: cfg.dyadic_order,
        data,
    })
}

fn check_pair(x: &AugmentedPath, y: &AugmentedPath) -> Result<()> {
    if x.channels() != y.channels() {
        return Err(Error::ShapeMismatch(format!(
            "paths have {} and {} channels",
            x.channels(),
            y.channels()
        )));
    }
    for p in [x, y] {
        if p.rows() < 2 {
            return Err(Error::PathTooShort { rows: p.rows() });
        }
    }
    Ok(())
}

/// Solves the Goursat problem with boundary value 1 and returns the value at
/// the far corner. Each sub-cell update is
/// `u[i+1][j+1] = (u[i+1][j] + u[i][j+1]) (1 + a/2 + a²/12) - u[i][j] (1 - a²/12)`.
pub fn solve_goursat(grid: &IncrementGrid) -> Result<f64> {
    let f = 1usize << grid.dyadic_order;
    let scale = 1.0 / (f * f) as f64;
    let coeffs: Vec<(f64, f64)> = grid
        .data
        .iter()
        .map(|&a| {
            let a = a * scale;
            let a2 = a * a / 12.0;
            (1.0 + 0.5 * a + a2, 1.0 - a2)
        })
        .collect();

    let fine_cols = grid.cols * f;
    let mut prev = vec![1.0; fine_cols + 1];
    let mut cur = vec![1.0; fine_cols + 1];
    for ci in 0..grid.rows {
        let row_coeffs = &coeffs[ci * grid.cols..(ci + 1) * grid.cols];
        for sub in 0..f {
            cur[0] = 1.0;
            let mut left = 1.0;
            let mut j = 0;
            for &(c1, c2) in row_coeffs {
                for _ in 0..f {
                    left = (left + prev[j + 1]) * c1 - prev[j] * c2;
                    cur[j + 1] = left;
                    j += 1;
                }
            }
            if !left.is_finite() {
                return Err(Error::PdeDiverged {
                    row: ci * f + sub,
                    col: fine_cols,
                });
            }
            std::mem::swap(&mut prev, &mut cur);
        }
    }
    Ok(prev[fine_cols])
}

/// Number of same-shape grids advanced together by [`solve_goursat_lanes`].
pub const LANES: usize = 4;

/// Runs [`solve_goursat`] on `LANES` grids of equal shape at once. Each lane
/// performs exactly the scalar operation sequence, so results are bitwise
/// equal; interleaving hides the latency of the row recurrence.
pub fn solve_goursat_lanes(grids: &[IncrementGrid; LANES]) -> Result<[f64; LANES]> {
    let g0 = &grids[0];
    if grids
        .iter()
        .any(|g| g.coarse_shape() != g0.coarse_shape() || g.dyadic_order != g0.dyadic_order)
    {
        return Err(Error::ShapeMismatch("lane grids differ in shape".into()));
    }
    let f = 1usize << g0.dyadic_order;
    let scale = 1.0 / (f * f) as f64;
    let cells = g0.rows * g0.cols;
    let mut c1 = vec![[0.0; LANES]; cells];
    let mut c2 = vec![[0.0; LANES]; cells];
    for (l, g) in grids.iter().enumerate() {
        for (k, &a) in g.data.iter().enumerate() {
            let a = a * scale;
            let a2 = a * a / 12.0;
            c1[k][l] = 1.0 + 0.5 * a + a2;
            c2[k][l] = 1.0 - a2;
        }
    }

    let fine_cols = g0.cols * f;
    let mut prev = vec![[1.0; LANES]; fine_cols + 1];
    let mut cur = vec![[1.0; LANES]; fine_cols + 1];
    for ci in 0..g0.rows {
        let base = ci * g0.cols;
        for sub in 0..f {
            cur[0] = [1.0; LANES];
            let mut left = [1.0; LANES];
            let mut j = 0;
            for cj in 0..g0.cols {
                let (a, b) = (c1[base + cj], c2[base + cj]);
                for _ in 0..f {
                    let (p1, p0) = (prev[j + 1], prev[j]);
                    for l in 0..LANES {
                        left[l] = (left[l] + p1[l]) * a[l] - p0[l] * b[l];
                    }
                    cur[j + 1] = left;
                    j += 1;
                }
            }
            if let Some(l) = left.iter().position(|v| !v.is_finite()) {
                log::debug!("lane {l} diverged");
                return Err(Error::PdeDiverged {
                    row: ci * f + sub,
                    col: fine_cols,
                });
            }
            std::mem::swap(&mut prev, &mut cur);
        }
    }
    Ok(prev[fine_cols])
}

/// `k(x, y_j)` for every `y_j`, batching equal-shape pairs through the lane
/// solver.
pub fn sig_kernel_many(x: &AugmentedPath, ys: &[&AugmentedPath], cfg: &KernelConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ys.len());
    for chunk in ys.chunks(LANES) {
        let grids: Vec<IncrementGrid> = chunk
            .iter()
            .map(|y| {
                let (a, b) = canonical(x, y);
                static_increment_grid(a, b, cfg)
            })
            .collect::<Result<_>>()?;
        let uniform = grids.len() == LANES
            && grids
                .iter()
                .all(|g| g.coarse_shape() == grids[0].coarse_shape());
        if uniform {
            let arr: [IncrementGrid; LANES] = grids.try_into().expect("LANES grids");
            out.extend(solve_goursat_lanes(&arr)?);
        } else {
            for g in &grids {
                out.push(solve_goursat(g)?);
            }
        }
    }
    Ok(out)
}

/// Orders a pair so that `k(x, y)` and `k(y, x)` run the identical
/// floating-point computation.
fn canonical<'a>(
    x: &'a AugmentedPath,
    y: &'a AugmentedPath,
) -> (&'a AugmentedPath, &'a AugmentedPath) {
    let ord = x
        .rows()
        .cmp(&y.rows())
        .then_with(|| {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
    if ord == Ordering::Greater {
        (y, x)
    } else {
        (x, y)
    }
}

/// Signature kernel of the statically lifted paths.
pub fn sig_kernel(x: &AugmentedPath, y: &AugmentedPath, cfg: &KernelConfig) -> Result<f64> {
    let (a, b) = canonical(x, y);
    solve_goursat(&static_increment_grid(a, b, cfg)?)
}

/// Kernel evaluations between two sample sets, plus optionally `k(x_i, 0)`
/// against the zero pivot.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    symmetric: bool,
    pivot: Option<Vec<f64>>,
}

impl GramMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} Gram matrix",
                entries.len()
            )));
        }
        let symmetric = rows == cols
            && (0..rows).all(|i| (0..i).all(|j| entries[i * cols + j] == entries[j * cols + i]));
        Ok(Self {
            rows,
            cols,
            entries,
            symmetric,
            pivot: None,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `k(x_i, 0)` for every row, when requested at construction.
    pub fn pivot(&self) -> Option<&[f64]> {
        self.pivot.as_deref()
    }

    pub fn with_pivot(mut self, pivot: Vec<f64>) -> Result<Self> {
        if pivot.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "pivot column of length {} for {} rows",
                pivot.len(),
                self.rows
            )));
        }
        self.pivot = Some(pivot);
        Ok(self)
    }
}

/// Gram matrix between `x` and `y`; `y = None` means `y = x`, in which case
/// only the upper triangle is evaluated.
pub fn gram(
    x: &[AugmentedPath],
    y: Option<&[AugmentedPath]>,
    cfg: &KernelConfig,
    include_pivot: bool,
) -> Result<GramMatrix> {
    cfg.validate()?;
    if x.is_empty() || y.is_some_and(|y| y.is_empty()) {
        return Err(Error::InvalidInput("Gram matrix of an empty sample set".into()));
    }
    let m = x.len();
    let (entries, n, symmetric) = match y {
        Some(y) => {
            let rows: Vec<Vec<f64>> = x
                .par_iter()
                .map(|a| sig_kernel_many(a, &y.iter().collect::<Vec<_>>(), cfg))
                .collect::<Result<_>>()?;
            (rows.concat(), y.len(), false)
        }
        None => {
            let upper: Vec<Vec<f64>> = (0..m)
                .into_par_iter()
                .map(|i| sig_kernel_many(&x[i], &x[i..].iter().collect::<Vec<_>>(), cfg))
                .collect::<Result<_>>()?;
            let mut entries = vec![0.0; m * m];
            for (i, row) in upper.iter().enumerate() {
                for (off, &v) in row.iter().enumerate() {
                    let j = i + off;
                    entries[i * m + j] = v;
                    entries[j * m + i] = v;
                }
            }
            (entries, m, true)
        }
    };
    let pivot = if include_pivot {
        Some(pivot_column(x, cfg)?)
    } else {
        None
    };
    Ok(GramMatrix {
        rows: m,
        cols: n,
        entries,
        symmetric,
        pivot,
    })
}

/// `k(x_i, 0)` for each path against a zero pivot of matching shape.
pub fn pivot_column(x: &[AugmentedPath], cfg: &KernelConfig) -> Result<Vec<f64>> {
    x.par_iter()
        .map(|a| sig_kernel(a, &zero_pivot(a.rows() - 2, a.variates()), cfg))
        .collect()
}

/// `k(0, 0)` for a pivot shaped like `like`.
pub fn pivot_self(like: &AugmentedPath, cfg: &KernelConfig) -> Result<f64> {
    let z = zero_pivot(like.rows() - 2, like.variates());
    sig_kernel(&z, &z, cfg)
}

/// Median pairwise Euclidean distance between path rows, pooled across all
/// paths. Rows are strided down to [`MEDIAN_HEURISTIC_ROWS`] first. Falls
/// back to 1 when the median is zero.
pub fn median_bandwidth(paths: &[AugmentedPath]) -> f64 {
    let total: usize = paths.iter().map(AugmentedPath::rows).sum();
    let stride = total.div_ceil(MEDIAN_HEURISTIC_ROWS).max(1);
    let rows: Vec<&[f64]> = paths
        .iter()
        .flat_map(|p| (0..p.rows()).map(move |i| p.row(i)))
        .step_by(stride)
        .collect();
    let mut dists: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            dists.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, &mut med, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if med > 0.0 {
        med
    } else {
        1.0
    }
}
