//! Sample-based scoring rules: quantile loss, CRPS, energy score and
//! variogram score. Lower is better for all four.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{order_free_sum, quantile_sorted};

pub const DEFAULT_QL_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const DEFAULT_VS_ORDER: f64 = 0.5;

/// One evaluation window: a `T x D` ground truth and `S` sample trajectories
/// of the same shape, all row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastInstance {
    horizon: usize,
    dim: usize,
    truth: Vec<f64>,
    samples: Vec<f64>,
    times: Vec<f64>,
}

impl ForecastInstance {
    pub fn new(truth: Vec<f64>, samples: Vec<Vec<f64>>, times: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || truth.is_empty() || truth.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "truth of {} entries does not form rows of {dim} variates",
                truth.len()
            )));
        }
        let horizon = truth.len() / dim;
        if times.len() != horizon {
            return Err(Error::ShapeMismatch(format!(
                "{} time stamps for a horizon of {horizon}",
                times.len()
            )));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "unbiased estimation needs ≥2 samples, got {}",
                samples.len()
            )));
        }
        if let Some(s) = samples.iter().position(|s| s.len() != truth.len()) {
            return Err(Error::ShapeMismatch(format!(
                "sample {s} has {} entries, truth has {}",
                samples[s].len(),
                truth.len()
            )));
        }
        let flat: Vec<f64> = samples.concat();
        if truth.iter().chain(&flat).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in forecast instance".into()));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::TimesNotIncreasing { index: i + 1 });
        }
        Ok(Self {
            horizon,
            dim,
            truth,
            samples: flat,
            times,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len() / self.truth.len()
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        let len = self.truth.len();
        &self.samples[s * len..(s + 1) * len]
    }

    /// The `S` sample values at flat position `k = t * D + d`.
    fn marginal(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        let len = self.truth.len();
        self.samples.iter().skip(k).step_by(len).copied()
    }

    /// Reorders time steps of truth and every sample by `perm`.
    pub fn permute_time(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.horizon {
            return Err(Error::ShapeMismatch("permutation length differs from horizon".into()));
        }
        let d = self.dim;
        let reorder = |v: &[f64]| -> Vec<f64> { perm.iter().flat_map(|&t| v[t * d..(t + 1) * d].iter().copied()).collect() };
        let samples = (0..self.num_samples()).map(|s| reorder(self.sample(s))).collect();
        Self::new(reorder(&self.truth), samples, self.times.clone(), d)
    }
}

fn pinball(tau: f64, y: f64, q: f64) -> f64 {
    let u = y - q;
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Mean pinball loss over every (time, variate, level) of the empirical
/// sample quantiles.
pub fn quantile_loss(inst: &ForecastInstance, levels: &[f64]) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("quantile loss needs at least one level".into()));
    }
    if let Some(bad) = levels.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::InvalidInput(format!("quantile level {bad} outside (0, 1)")));
    }
    let mut terms = Vec::with_capacity(inst.truth.len());
    let mut buf = Vec::with_capacity(inst.num_samples());
    for (k, &y) in inst.truth.iter().enumerate() {
        buf.clear();
        buf.extend(inst.marginal(k));
        buf.sort_by(f64::total_cmp);
        terms.push(levels.iter().map(|&tau| pinball(tau, y, quantile_sorted(&buf, tau))).sum::<f64>());
    }
    Ok(order_free_sum(terms) / (inst.truth.len() * levels.len()) as f64)
}

/// Mean absolute pairwise difference `(1/S²) Σ_{i,j} |x_i - x_j|` via the
/// sorted-order identity.
fn mean_abs_pairwise(sorted: &[f64]) -> f64 {
    let s = sorted.len() as f64;
    let sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * i as f64 + 1.0 - s) * x)
        .sum();
    2.0 * sum / (s * s)
}

/// Sample CRPS averaged over every (time, variate).
pub fn crps(inst: &ForecastInstance) -> f64 {
    let mut terms = Vec::with_capacity(inst.truth.len());
    let mut buf = Vec::with_capacity(inst.num_samples());
    for (k, &y) in inst.truth.iter().enumerate() {
        buf.clear();
        buf.extend(inst.marginal(k));
        buf.sort_by(f64::total_cmp);
        let s = buf.len() as f64;
        let fit = buf.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
        terms.push(fit - 0.5 * mean_abs_pairwise(&buf));
    }
    order_free_sum(terms) / inst.truth.len() as f64
}

/// Euclidean distance, summed in value order so that any joint reordering of
/// coordinates gives the identical result.
fn euclid(a: &[f64], b: &[f64]) -> f64 {
    order_free_sum(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect()).sqrt()
}

/// Energy score on the flattened `T * D` trajectories.
pub fn energy_score(inst: &ForecastInstance) -> f64 {
    let s = inst.num_samples();
    let fit = (0..s).map(|i| euclid(inst.sample(i), &inst.truth)).sum::<f64>() / s as f64;
    let mut spread = 0.0;
    for i in 0..s {
        for j in i + 1..s {
            spread += euclid(inst.sample(i), inst.sample(j));
        }
    }
    // the double sum counts every unordered pair twice
    fit - spread / (s * s) as f64
}

/// Variogram score of order `p`, summed over variate pairs per time step and
/// averaged over time. `weights` is `D x D` row-major; uniform when absent.
pub fn variogram_score(inst: &ForecastInstance, p: f64, weights: Option<&[f64]>) -> Result<f64> {
    let d = inst.dim;
    if d < 2 {
        return Err(Error::InvalidInput("variogram needs ≥ 2 variates".into()));
    }
    if !(p > 0.0) {
        return Err(Error::InvalidInput(format!("variogram order must be positive, got {p}")));
    }
    if let Some(w) = weights {
        if w.len() != d * d {
            return Err(Error::ShapeMismatch(format!("{} weights for {d} variates", w.len())));
        }
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidInput("variogram weights must be non-negative".into()));
        }
    }
    let s = inst.num_samples();
    let mut steps = Vec::with_capacity(inst.horizon);
    for t in 0..inst.horizon {
        let mut total = 0.0;
        let y = &inst.truth[t * d..(t + 1) * d];
        for i in 0..d {
            for j in i + 1..d {
                let w = weights.map_or(1.0, |w| w[i * d + j]);
                let obs = (y[i] - y[j]).abs().powf(p);
                let pred = (0..s)
                    .map(|k| {
                        let x = &inst.sample(k)[t * d..(t + 1) * d];
                        (x[i] - x[j]).abs().powf(p)
                    })
                    .sum::<f64>()
                    / s as f64;
                total += w * (obs - pred) * (obs - pred);
            }
        }
        steps.push(total);
    }
    Ok(order_free_sum(steps) / inst.horizon as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(t: usize) -> Vec<f64> {
        (0..t).map(|i| i as f64).collect()
    }

    fn scalar(truth: f64, samples: &[f64]) -> ForecastInstance {
        ForecastInstance::new(vec![truth], samples.iter().map(|&s| vec![s]).collect(), vec![0.0], 1).unwrap()
    }

    #[test]
    fn pinball_arithmetic() {
        assert!((pinball(0.9, 2.0, 1.0) - 0.9).abs() < 1e-15);
        let inst = scalar(1.0, &[0.0, 2.0]);
        assert_eq!(quantile_loss(&inst, &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn perfect_forecasts_score_zero() {
        let truth = vec![0.3, -1.0, 2.0, 0.5];
        let inst = ForecastInstance::new(truth.clone(), vec![truth.clone(); 4], grid(2), 2).unwrap();
        assert_eq!(quantile_loss(&inst, &DEFAULT_QL_LEVELS).unwrap(), 0.0);
        assert_eq!(crps(&inst), 0.0);
        assert_eq!(energy_score(&inst), 0.0);
        assert_eq!(variogram_score(&inst, 0.5, None).unwrap(), 0.0);
    }

    #[test]
    fn crps_two_samples() {
        assert!((crps(&scalar(1.0, &[0.0, 2.0])) - 0.5).abs() < 1e-15);
    }

    /// Direct double sum over sample pairs.
    fn crps_by_enumeration(y: f64, xs: &[f64]) -> f64 {
        let s = xs.len() as f64;
        let fit = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
        let spread: f64 = xs.iter().flat_map(|a| xs.iter().map(move |b| (a - b).abs())).sum();
        fit - spread / (2.0 * s * s)
    }

    #[test]
    fn crps_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..13).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = rng.random_range(-3.0..3.0);
            assert!((crps(&scalar(y, &xs)) - crps_by_enumeration(y, &xs)).abs() < 1e-12);
        }
    }

    #[test]
    fn crps_is_translation_invariant() {
        let a = crps(&scalar(0.4, &[0.0, 1.0, -2.0]));
        let b = crps(&scalar(10.4, &[10.0, 11.0, 8.0]));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn energy_score_examples() {
        let inst = ForecastInstance::new(vec![1.0, 0.0], vec![vec![0.0, 0.0], vec![2.0, 0.0]], vec![0.0], 2).unwrap();
        assert!((energy_score(&inst) - 0.5).abs() < 1e-15);
        // one flattened dimension: same as CRPS
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let inst = scalar(0.2, &xs);
        assert!((energy_score(&inst) - crps(&inst)).abs() < 1e-12);
    }

    #[test]
    fn variogram_examples() {
        let inst = ForecastInstance::new(vec![0.0, 2.0], vec![vec![0.0, 0.0]; 3], vec![0.0], 2).unwrap();
        assert_eq!(variogram_score(&inst, 1.0, None).unwrap(), 4.0);
        let err = variogram_score(&scalar(0.0, &[1.0, 2.0]), 0.5, None).unwrap_err();
        assert!(err.to_string().contains("variogram needs ≥ 2 variates"));
    }

    #[test]
    fn variogram_ignores_variate_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, d, s) = (4, 3, 5);
        let truth: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let samples: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let relabel = |v: &[f64]| -> Vec<f64> { v.chunks(d).flat_map(|r| [r[2], r[0], r[1]]).collect() };
        let a = ForecastInstance::new(truth.clone(), samples.clone(), grid(t), d).unwrap();
        let b = ForecastInstance::new(relabel(&truth), samples.iter().map(|v| relabel(v)).collect(), grid(t), d).unwrap();
        let va = variogram_score(&a, 0.5, None).unwrap();
        let vb = variogram_score(&b, 0.5, None).unwrap();
        assert!((va - vb).abs() < 1e-12);
    }

    #[test]
    fn single_sample_is_rejected() {
        let err = ForecastInstance::new(vec![0.0], vec![vec![0.0]], vec![0.0], 1).unwrap_err();
        assert!(err.to_string().contains("unbiased estimation needs ≥2 samples"));
    }

    #[test]
    fn empty_levels_are_rejected() {
        assert!(quantile_loss(&scalar(0.0, &[1.0, 2.0]), &[]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn joint_time_permutation_invariance(seed in any::<u64>(), t in 2usize..7, d in 2usize..4, s in 2usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let truth: Vec<f64> = (0..t * d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let samples: Vec<Vec<f64>> = (0..s)
                    .map(|_| (0..t * d).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect();
                let inst = ForecastInstance::new(truth, samples, grid(t), d).unwrap();
                let mut perm: Vec<usize> = (0..t).collect();
                perm.shuffle(&mut rng);
                let other = inst.permute_time(&perm).unwrap();
                prop_assert_eq!(quantile_loss(&inst, &DEFAULT_QL_LEVELS).unwrap(), quantile_loss(&other, &DEFAULT_QL_LEVELS).unwrap());
                prop_assert_eq!(crps(&inst), crps(&other));
                prop_assert_eq!(energy_score(&inst), energy_score(&other));
                prop_assert_eq!(variogram_score(&inst, 0.5, None).unwrap(), variogram_score(&other, 0.5, None).unwrap());
            }

            #[test]
            fn scores_are_non_negative(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let truth: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
                let samples: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
                let inst = ForecastInstance::new(truth, samples, grid(3), 2).unwrap();
                prop_assert!(quantile_loss(&inst, &DEFAULT_QL_LEVELS).unwrap() >= 0.0);
                prop_assert!(crps(&inst) >= -1e-12);
                prop_assert!(energy_score(&inst) >= -1e-12);
                prop_assert!(variogram_score(&inst, 0.5, None).unwrap() >= 0.0);
            }
        }
    }
}
