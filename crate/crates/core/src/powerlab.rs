//! Permutation two-sample tests and power grids.
//!
//! The pooled Gram matrix is evaluated once per test; each permutation only
//! re-slices it.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censoring::{censored_mmd2, fit_censor_model, CensorConfig, CensorModel, CensoredBlocks};
use crate::error::{Error, Result};
use crate::mmd::{median_distance, rbf, unbiased_from, Estimator};
use crate::paths::{augment, AugmentedPath, NormStats};
use crate::rng::{label_key, stream, stream_seed};
use crate::sigkernel::{gram, median_bandwidth, pivot_self, KernelConfig};
use crate::synthgen::{make_power_pair, vectors_to_paths, ScenarioKind, ScenarioSpec};

pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const MIN_PERMUTATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sig,
    Csig,
    Rbf,
}

impl Metric {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sig" => Ok(Metric::Sig),
            "csig" => Ok(Metric::Csig),
            "rbf" => Ok(Metric::Rbf),
            other => Err(Error::InvalidInput(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub permutations: usize,
}

/// Pooled kernel matrix over `x ∪ y` plus censoring weights when needed.
struct Pooled {
    size: usize,
    entries: Vec<f64>,
    pivot: Option<(Vec<f64>, Vec<f64>, f64)>,
}

impl Pooled {
    fn k(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.size + b]
    }

    /// Unbiased statistic for the split `(xi, yi)` of pooled indices.
    fn statistic(&self, xi: &[usize], yi: &[usize]) -> Result<f64> {
        let (m, n) = (xi.len(), yi.len());
        match &self.pivot {
            None => Ok(unbiased_from(
                m,
                n,
                |i, j| self.k(xi[i], xi[j]),
                |i, j| self.k(yi[i], yi[j]),
                |i, j| self.k(xi[i], yi[j]),
            )),
            Some((weights, k0, k00)) => {
                let wx: Vec<f64> = xi.iter().map(|&i| weights[i]).collect();
                let wy: Vec<f64> = yi.iter().map(|&i| weights[i]).collect();
                let kx0: Vec<f64> = xi.iter().map(|&i| k0[i]).collect();
                let ky0: Vec<f64> = yi.iter().map(|&i| k0[i]).collect();
                let blocks = CensoredBlocks {
                    kxx: &|i, j| self.k(xi[i], xi[j]),
                    kyy: &|i, j| self.k(yi[i], yi[j]),
                    kxy: &|i, j| self.k(xi[i], yi[j]),
                    kx0: &kx0,
                    ky0: &ky0,
                    k00: *k00,
                };
                censored_mmd2(Estimator::Unbiased, &blocks, &wx, &wy)
            }
        }
    }
}

fn pooled(
    x: &[AugmentedPath],
    y: &[AugmentedPath],
    metric: Metric,
    model: Option<&CensorModel>,
    cfg: &KernelConfig,
) -> Result<Pooled> {
    let all: Vec<AugmentedPath> = x.iter().chain(y).cloned().collect();
    let size = all.len();
    match metric {
        Metric::Rbf => {
            let flat: Vec<Vec<f64>> = all.iter().map(AugmentedPath::strip).collect();
            let h = median_distance(&flat);
            let mut entries = vec![0.0; size * size];
            for i in 0..size {
                for j in i..size {
                    let v = rbf(&flat[i], &flat[j], h);
                    entries[i * size + j] = v;
                    entries[j * size + i] = v;
                }
            }
            Ok(Pooled {
                size,
                entries,
                pivot: None,
            })
        }
        Metric::Sig | Metric::Csig => {
            let with_pivot = metric == Metric::Csig;
            let g = gram(&all, None, cfg, with_pivot)?;
            let pivot = if with_pivot {
                let model = model.expect("checked by caller");
                let weights = model.weights(&all)?;
                let k0 = g.pivot().expect("requested").to_vec();
                Some((weights, k0, pivot_self(&all[0], cfg)?))
            } else {
                None
            };
            Ok(Pooled {
                size,
                entries: g.entries().to_vec(),
                pivot,
            })
        }
    }
}

/// Splits pooled indices by a seeded shuffle.
fn permuted_split(size: usize, m: usize, seed: u64, b: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..size).collect();
    idx.shuffle(&mut stream(seed, &[label_key("permutation"), b as u64]));
    let y = idx.split_off(m);
    (idx, y)
}

/// Permutation test of `x` and `y` having the same law, using the unbiased
/// MMD statistic. `p = (1 + #{perm ≥ obs}) / (B + 1)`; the threshold is the
/// permuted statistic such that `statistic > threshold ⇔ p < alpha`.
#[allow(clippy::too_many_arguments)]
pub fn permutation_test(
    x: &[AugmentedPath],
    y: &[AugmentedPath],
    metric: Metric,
    permutations: usize,
    alpha: f64,
    model: Option<&CensorModel>,
    cfg: &KernelConfig,
    seed: u64,
) -> Result<TestResult> {
    if permutations < MIN_PERMUTATIONS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {permutations}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if metric == Metric::Csig && model.is_none() {
        return Err(Error::InvalidInput("the csig metric requires a censor model".into()));
    }
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return Err(Error::TooFewSamples { m, n });
    }
    let pool = pooled(x, y, metric, model, cfg)?;
    let xi: Vec<usize> = (0..m).collect();
    let yi: Vec<usize> = (m..m + n).collect();
    let observed = pool.statistic(&xi, &yi)?;
    let mut perm: Vec<f64> = (0..permutations)
        .map(|b| {
            let (a, c) = permuted_split(m + n, m, seed, b);
            pool.statistic(&a, &c)
        })
        .collect::<Result<_>>()?;
    let exceed = perm.iter().filter(|&&s| s >= observed).count();
    let p_value = (1 + exceed) as f64 / (permutations + 1) as f64;
    perm.sort_by(|a, b| b.total_cmp(a));
    // largest k with (1 + k) < alpha (B + 1); reject ⇔ at most k permuted
    // statistics reach the observed one
    let bound = alpha * (permutations + 1) as f64;
    let allowed = (bound - 1.0).ceil() as i64 - 1;
    let threshold = if allowed < 0 {
        f64::INFINITY
    } else {
        perm[(allowed as usize).min(permutations - 1)]
    };
    Ok(TestResult {
        statistic: observed,
        threshold,
        p_value,
        reject: p_value < alpha,
        permutations,
    })
}

/// Statistic for one labelled split, evaluated from scratch (no pooled
/// Gram); used to check the re-slicing path.
pub fn direct_statistic(x: &[AugmentedPath], y: &[AugmentedPath], cfg: &KernelConfig) -> Result<f64> {
    crate::mmd::sig_mmd(x, y, cfg, Estimator::Unbiased).map(|r| r.value)
}

/// Permuted statistics for the first `count` permutations, by re-slicing.
pub fn permuted_statistics(
    x: &[AugmentedPath],
    y: &[AugmentedPath],
    cfg: &KernelConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<(Vec<usize>, Vec<usize>, f64)>> {
    let pool = pooled(x, y, Metric::Sig, None, cfg)?;
    (0..count)
        .map(|b| {
            let (a, c) = permuted_split(x.len() + y.len(), x.len(), seed, b);
            let s = pool.statistic(&a, &c)?;
            Ok((a, c, s))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub metric: Metric,
    pub alpha: f64,
    pub permutations: usize,
    pub dyadic_order: u32,
    /// Censoring quantile for the csig metric.
    pub quantile: f64,
    /// Ground-truth windows used to fit the censor model for csig.
    pub train_size: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            metric: Metric::Sig,
            alpha: 0.05,
            permutations: DEFAULT_PERMUTATIONS,
            dyadic_order: KernelConfig::DEFAULT_DYADIC_ORDER,
            quantile: 0.95,
            train_size: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub scenario: ScenarioSpec,
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    /// `power[i][j]` for `dims[i]`, `sizes[j]`.
    pub power: Vec<Vec<f64>>,
    pub reps: usize,
    pub options: PowerOptions,
}

impl PowerGrid {
    pub fn get(&self, d: usize, m: usize) -> Option<f64> {
        let i = self.dims.iter().position(|&v| v == d)?;
        let j = self.sizes.iter().position(|&v| v == m)?;
        Some(self.power[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,param,metric,d,m,reps,power\n");
        let metric = serde_json::to_value(self.options.metric).unwrap_or_default();
        for (i, d) in self.dims.iter().enumerate() {
            for (j, m) in self.sizes.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    self.scenario.kind.name(),
                    self.scenario.param,
                    metric.as_str().unwrap_or(""),
                    d,
                    m,
                    self.reps,
                    self.power[i][j]
                ));
            }
        }
        out
    }
}

/// Univariate augmented paths on a unit time grid, without rescaling
/// values, so that absolute levels stay visible to the kernel.
pub fn vectors_to_augmented(vectors: &[Vec<f64>]) -> Result<Vec<AugmentedPath>> {
    let stats = NormStats::identity(1);
    vectors_to_paths(vectors).iter().map(|p| augment(p, &stats)).collect()
}

/// One seeded trial of the scenario at `(d, m)`.
pub fn power_trial(
    scenario: &ScenarioSpec,
    d: usize,
    m: usize,
    rep: usize,
    opts: &PowerOptions,
    model: Option<&CensorModel>,
) -> Result<TestResult> {
    let seed = stream_seed(opts.seed, &[d as u64, m as u64, rep as u64]);
    let (a, b) = make_power_pair(scenario, d, m, seed)?;
    let x = vectors_to_augmented(&a)?;
    let y = vectors_to_augmented(&b)?;
    let pooled: Vec<AugmentedPath> = x.iter().chain(&y).cloned().collect();
    let cfg = KernelConfig::rbf(median_bandwidth(&pooled)).with_dyadic_order(opts.dyadic_order);
    permutation_test(
        &x,
        &y,
        opts.metric,
        opts.permutations,
        opts.alpha,
        model,
        &cfg,
        stream_seed(seed, &[label_key("test")]),
    )
}

/// Censor model fitted on independent ground-truth draws of the scenario.
pub fn scenario_censor_model(scenario: &ScenarioSpec, d: usize, opts: &PowerOptions) -> Result<CensorModel> {
    let seed = stream_seed(opts.seed, &[label_key("censor-train"), d as u64]);
    let (truth, _) = make_power_pair(scenario, d, opts.train_size, seed)?;
    let cfg = CensorConfig {
        quantile: opts.quantile,
        mcd: crate::censoring::McdOptions {
            seed,
            ..Default::default()
        },
        ..CensorConfig::default()
    };
    let mut cfg = cfg;
    // keep the signature dimension below the training size
    while cfg.sig_depth > 1 && crate::truncsig::sig_len(2, cfg.sig_depth) >= opts.train_size {
        cfg.sig_depth -= 1;
    }
    fit_censor_model(&vectors_to_paths(&truth), &cfg)
}

/// Rejection frequency per `(d, m)` over `reps` seeded trials.
pub fn power_grid(
    scenario: &ScenarioSpec,
    dims: &[usize],
    sizes: &[usize],
    reps: usize,
    opts: &PowerOptions,
) -> Result<PowerGrid> {
    if reps < 20 {
        return Err(Error::InvalidInput(format!("power grids need at least 20 reps, got {reps}")));
    }
    if dims.is_empty() || sizes.is_empty() {
        return Err(Error::InvalidInput("power grid needs dims and sizes".into()));
    }
    if scenario.kind == ScenarioKind::SameGp && opts.metric == Metric::Csig {
        log::info!("csig on the same-GP null: censor model is fitted on GP draws");
    }
    let models: Vec<Option<CensorModel>> = dims
        .iter()
        .map(|&d| {
            if opts.metric == Metric::Csig {
                scenario_censor_model(scenario, d, opts).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize, usize)> = (0..dims.len())
        .flat_map(|i| (0..sizes.len()).flat_map(move |j| (0..reps).map(move |r| (i, j, r))))
        .collect();
    let rejects: Vec<bool> = cells
        .par_iter()
        .map(|&(i, j, r)| power_trial(scenario, dims[i], sizes[j], r, opts, models[i].as_ref()).map(|t| t.reject))
        .collect::<Result<_>>()?;
    let mut power = vec![vec![0.0; sizes.len()]; dims.len()];
    for (&(i, j, _), &rej) in cells.iter().zip(&rejects) {
        if rej {
            power[i][j] += 1.0;
        }
    }
    power.iter_mut().flatten().for_each(|p| *p /= reps as f64);
    Ok(PowerGrid {
        scenario: *scenario,
        dims: dims.to_vec(),
        sizes: sizes.to_vec(),
        power,
        reps,
        options: *opts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{sample_gp, GpSpec};

    fn gp_paths(n: usize, seed: u64) -> Vec<AugmentedPath> {
        sample_gp(&GpSpec::new(6, 1), n, seed)
            .unwrap()
            .iter()
            .map(|p| augment(p, &NormStats::identity(1)).unwrap())
            .collect()
    }

    #[test]
    fn reslicing_matches_direct_evaluation() {
        let x = gp_paths(9, 1);
        let y = gp_paths(7, 2);
        let cfg = KernelConfig::rbf(1.0);
        let all: Vec<AugmentedPath> = x.iter().chain(&y).cloned().collect();
        for (a, c, s) in permuted_statistics(&x, &y, &cfg, 3, 3).unwrap() {
            let px: Vec<AugmentedPath> = a.iter().map(|&i| all[i].clone()).collect();
            let py: Vec<AugmentedPath> = c.iter().map(|&i| all[i].clone()).collect();
            assert_eq!(s.to_bits(), direct_statistic(&px, &py, &cfg).unwrap().to_bits());
        }
    }

    #[test]
    fn consistent_decision_triple() {
        let cfg = KernelConfig::rbf(1.0);
        for seed in 0..6 {
            let x = gp_paths(12, seed);
            let shift = if seed % 2 == 0 { 0.0 } else { 1.5 };
            let y: Vec<AugmentedPath> = gp_paths(12, seed + 100)
                .iter()
                .map(|p| {
                    let mut d = p.data().to_vec();
                    for r in 1..p.rows() - 1 {
                        d[r * 2] += shift;
                    }
                    AugmentedPath::from_rows(d, 2).unwrap()
                })
                .collect();
            let t = permutation_test(&x, &y, Metric::Sig, 100, 0.05, None, &cfg, seed).unwrap();
            assert_eq!(t.reject, t.statistic > t.threshold);
            assert_eq!(t.reject, t.p_value < 0.05);
            assert!((0.0..=1.0).contains(&t.p_value));
        }
    }

    #[test]
    fn worst_case_p_value_is_one() {
        // every split of identical paths gives the same statistic
        let x = vec![gp_paths(1, 4)[0].clone(); 6];
        let y = x.clone();
        let t = permutation_test(&x, &y, Metric::Sig, 100, 0.05, None, &KernelConfig::rbf(1.0), 1).unwrap();
        assert_eq!(t.p_value, 1.0);
        assert!(!t.reject);
    }

    #[test]
    fn argument_checks() {
        let x = gp_paths(4, 5);
        let cfg = KernelConfig::rbf(1.0);
        assert!(permutation_test(&x, &x, Metric::Sig, 99, 0.05, None, &cfg, 0).is_err());
        let err = permutation_test(&x, &x, Metric::Csig, 100, 0.05, None, &cfg, 0).unwrap_err();
        assert!(err.to_string().contains("censor model"));
        assert!(Metric::parse("energy").is_err());
        let grid = power_grid(&ScenarioSpec::new(ScenarioKind::WrongMean), &[4], &[8], 5, &PowerOptions::default());
        assert!(grid.is_err());
    }

    #[test]
    fn large_shift_is_detected() {
        let spec = ScenarioSpec::new(ScenarioKind::WrongMean).with_param(5.0);
        let opts = PowerOptions {
            permutations: 100,
            ..PowerOptions::default()
        };
        for rep in 0..5 {
            assert!(power_trial(&spec, 8, 32, rep, &opts, None).unwrap().reject);
        }
    }

    #[test]
    fn rbf_metric_runs() {
        let spec = ScenarioSpec::new(ScenarioKind::WrongMean).with_param(3.0);
        let opts = PowerOptions {
            metric: Metric::Rbf,
            permutations: 100,
            ..PowerOptions::default()
        };
        assert!(power_trial(&spec, 4, 32, 0, &opts, None).unwrap().reject);
    }

    #[test]
    fn csig_metric_runs() {
        let spec = ScenarioSpec::new(ScenarioKind::WrongMean).with_param(0.0);
        let opts = PowerOptions {
            metric: Metric::Csig,
            permutations: 100,
            train_size: 200,
            ..PowerOptions::default()
        };
        let model = scenario_censor_model(&spec, 6, &opts).unwrap();
        let t = power_trial(&spec, 6, 24, 0, &opts, Some(&model)).unwrap();
        assert_eq!(t.reject, t.p_value < 0.05);
    }
}
