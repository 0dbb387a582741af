//! Trajectories, normalization and the path augmentation applied before any
//! signature computation.
//!
//! An augmented path has `T + 2` rows and `D + 1` channels, the time channel
//! last:
//!
//! ```text
//! (0, 0), (x_1, t_1), ..., (x_T, t_T), (0, t_T + step)
//! ```
//!
//! The leading zero row pins the base point (so translations are visible to
//! the signature), and the trailing zero row closes the path (so the level
//! of the final value is visible as well).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scales below this are treated as degenerate and replaced by 1.
pub const SCALE_FLOOR: f64 = 1e-8;

/// One observed or sampled trajectory, `T` rows by `D` variates, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    values: Vec<f64>,
    times: Vec<f64>,
    dim: usize,
}

impl RawTrajectory {
    pub fn new(values: Vec<f64>, times: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("trajectory needs at least one variate".into()));
        }
        if times.is_empty() {
            return Err(Error::InvalidInput("trajectory needs at least one time step".into()));
        }
        if values.len() != times.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} time steps of {} variates",
                values.len(),
                times.len(),
                dim
            )));
        }
        if let Some(index) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::TimesNotIncreasing { index: index + 1 });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at time step {}, variate {}",
                i / dim,
                i % dim
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite time stamp".into()));
        }
        Ok(Self { values, times, dim })
    }

    /// Trajectory on the integer grid `0, 1, ..., T-1`.
    pub fn on_unit_grid(values: Vec<f64>, dim: usize) -> Result<Self> {
        let steps = if dim == 0 { 0 } else { values.len() / dim };
        Self::new(values, (0..steps).map(|t| t as f64).collect(), dim)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

/// Per-variate location and scale used to standardize trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, value: f64, variate: usize) -> f64 {
        (value - self.mean[variate]) / self.scale[variate]
    }
}

/// Mean and (population) standard deviation per variate over all rows of
/// all trajectories.
pub fn fit_norm_stats(train: &[RawTrajectory]) -> Result<NormStats> {
    let first = train.first().ok_or(Error::NoTrainingData)?;
    let dim = first.dim();
    if let Some(bad) = train.iter().find(|t| t.dim() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "training trajectories have {} and {} variates",
            dim,
            bad.dim()
        )));
    }
    let rows: usize = train.iter().map(RawTrajectory::len).sum();
    if rows < 2 {
        return Err(Error::InvalidInput(
            "normalization needs at least two pooled rows".into(),
        ));
    }

    let mut mean = vec![0.0; dim];
    for traj in train {
        for t in 0..traj.len() {
            for (m, v) in mean.iter_mut().zip(traj.row(t)) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);

    let mut var = vec![0.0; dim];
    for traj in train {
        for t in 0..traj.len() {
            for ((s, v), m) in var.iter_mut().zip(traj.row(t)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / rows as f64).sqrt();
            if sd < SCALE_FLOOR {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { mean, scale })
}

/// A `(T + 2) x (D + 1)` path, row-major, time channel last.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPath {
    rows: usize,
    channels: usize,
    data: Vec<f64>,
}

impl AugmentedPath {
    /// Builds a path from raw row-major data without the augmentation step.
    pub fn from_rows(data: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 || data.len() % channels != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} entries do not form rows of {} channels",
                data.len(),
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite path entry".into()));
        }
        Ok(Self {
            rows: data.len() / channels,
            channels,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of variate channels (everything except time).
    pub fn variates(&self) -> usize {
        self.channels - 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Returns the original trajectory values (rows `1..=T`, variate channels).
    pub fn strip(&self) -> Vec<f64> {
        let d = self.variates();
        (1..self.rows - 1)
            .flat_map(|i| self.row(i)[..d].iter().copied())
            .collect()
    }

    /// Applies a linear map to the variate channels of every row, keeping
    /// the time channel. `basis` is `D x k`, row-major.
    pub fn project(&self, basis: &[f64], k: usize) -> AugmentedPath {
        let d = self.variates();
        debug_assert_eq!(basis.len(), d * k);
        let mut data = Vec::with_capacity(self.rows * (k + 1));
        for i in 0..self.rows {
            let row = self.row(i);
            for c in 0..k {
                data.push((0..d).map(|j| row[j] * basis[j * k + c]).sum());
            }
            data.push(row[d]);
        }
        AugmentedPath {
            rows: self.rows,
            channels: k + 1,
            data,
        }
    }
}

/// Augments a trajectory with its natural time scale `t_T - t_1` (or 1 when
/// `T = 1`).
pub fn augment(traj: &RawTrajectory, stats: &NormStats) -> Result<AugmentedPath> {
    let times = traj.times();
    let span = times[times.len() - 1] - times[0];
    let time_scale = if traj.len() > 1 { span } else { 1.0 };
    augment_scaled(traj, stats, time_scale)
}

/// Normalizes the variates, rescales time by `time_scale` and adds the base
/// point and end point rows.
pub fn augment_scaled(
    traj: &RawTrajectory,
    stats: &NormStats,
    time_scale: f64,
) -> Result<AugmentedPath> {
    if !(time_scale > 0.0) || !time_scale.is_finite() {
        return Err(Error::InvalidInput(format!(
            "time scale must be positive, got {time_scale}"
        )));
    }
    let d = traj.dim();
    if stats.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "normalization has {} variates, trajectory has {}",
            stats.dim(),
            d
        )));
    }
    let t_len = traj.len();
    let times = traj.times();
    let origin = times[0];
    let mean_step = if t_len > 1 {
        (times[t_len - 1] - origin) / (t_len - 1) as f64
    } else {
        1.0
    };

    let channels = d + 1;
    let mut data = Vec::with_capacity((t_len + 2) * channels);
    data.extend(std::iter::repeat(0.0).take(channels));
    for t in 0..t_len {
        data.extend(traj.row(t).iter().enumerate().map(|(j, &v)| stats.apply(v, j)));
        data.push((times[t] - origin) / time_scale);
    }
    data.extend(std::iter::repeat(0.0).take(d));
    data.push((times[t_len - 1] - origin + mean_step) / time_scale);

    Ok(AugmentedPath {
        rows: t_len + 2,
        channels,
        data,
    })
}

/// The constant zero path in `D + 1` channels with the row count of an
/// augmented length-`T` path. Its signature is trivial, so the signature
/// kernel against it is identically 1.
pub fn zero_pivot(len: usize, dim: usize) -> AugmentedPath {
    let rows = len.max(1) + 2;
    AugmentedPath {
        rows,
        channels: dim + 1,
        data: vec![0.0; rows * (dim + 1)],
    }
}

/// Augments every trajectory with the same normalization.
pub fn augment_all(trajs: &[RawTrajectory], stats: &NormStats) -> Result<Vec<AugmentedPath>> {
    trajs.iter().map(|t| augment(t, stats)).collect()
}
