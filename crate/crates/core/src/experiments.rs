//! Synthetic validation experiments: dependency structure, tail focus and
//! the censoring-quantile sweep, plus writers that export them as
//! evaluation datasets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::censoring::{censor_weight, fit_censor_model, CensorConfig, CensorModel, KernelBlocks, McdOptions};
use crate::error::{Error, Result};
use crate::harness::io::{write_samples, write_windows};
use crate::harness::{EvalConfig, EvalManifest, ModelEntry};
use crate::mmd::Estimator;
use crate::paths::{augment_all, AugmentedPath, RawTrajectory};
use crate::rng::{label_key, stream_seed};
use crate::sigkernel::{gram, median_bandwidth, GramMatrix, KernelConfig};
use crate::synthgen::{
    make_dependency_set, make_focus_set, make_power_pair, replication_seed, sample_gp, vectors_to_paths, FocusParams,
    ForecastSets, GpSpec, JumpParams, ScenarioKind, ScenarioSpec,
};

pub const FORECASTERS: [&str; 4] = ["F1", "F2", "F3", "F4"];

/// Sig and CSig of each forecaster against the ground truth in one
/// replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRep {
    pub rep: usize,
    pub sig: [f64; 4],
    pub csig: [f64; 4],
}

impl ExperimentRep {
    /// Forecaster indices sorted from best (lowest) to worst.
    pub fn ranking(values: &[f64; 4]) -> [usize; 4] {
        let mut idx = [0, 1, 2, 3];
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependencyConfig {
    pub horizon: usize,
    pub variates: usize,
    /// Paths per forecaster and in the ground-truth set.
    pub n: usize,
    /// Ground-truth paths used to fit the censor model.
    pub train_n: usize,
    pub jumps: JumpParams,
    pub sig_depth: usize,
    pub dyadic_order: u32,
    pub quantile: f64,
    pub mcd_starts: usize,
    pub seed: u64,
}

impl Default for DependencyConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            variates: 4,
            n: 512,
            train_n: 512,
            jumps: JumpParams::default(),
            sig_depth: 3,
            dyadic_order: 1,
            quantile: 0.95,
            mcd_starts: McdOptions::default().n_init,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusConfig {
    pub horizon: usize,
    pub n: usize,
    pub train_n: usize,
    pub params: FocusParams,
    pub sig_depth: usize,
    pub dyadic_order: u32,
    pub quantile: f64,
    pub mcd_starts: usize,
    pub seed: u64,
}

impl Default for FocusConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            n: 512,
            train_n: 512,
            params: FocusParams::for_horizon(24),
            sig_depth: 4,
            dyadic_order: 1,
            quantile: 0.95,
            mcd_starts: McdOptions::default().n_init,
            seed: 0,
        }
    }
}

fn censor_model(train: &[RawTrajectory], depth: usize, quantile: f64, starts: usize, seed: u64) -> Result<CensorModel> {
    fit_censor_model(
        train,
        &CensorConfig {
            quantile,
            sig_depth: depth,
            mcd: McdOptions {
                n_init: starts,
                seed,
                ..McdOptions::default()
            },
            ..CensorConfig::default()
        },
    )
}

/// Everything needed to score forecast sets against one truth set.
pub struct Scorer {
    pub model: CensorModel,
    pub kernel: KernelConfig,
    truth: Vec<AugmentedPath>,
    truth_gram: GramMatrix,
    truth_distances: Vec<f64>,
}

impl Scorer {
    pub fn new(model: CensorModel, truth: &[RawTrajectory], dyadic_order: u32) -> Result<Self> {
        let truth = augment_all(truth, &model.norm)?;
        let kernel = KernelConfig::rbf(median_bandwidth(&truth)).with_dyadic_order(dyadic_order);
        let truth_distances = model.distances(&truth)?;
        let truth_gram = gram(&truth, None, &kernel, true)?;
        Ok(Self {
            model,
            kernel,
            truth,
            truth_gram,
            truth_distances,
        })
    }

    /// Kernel blocks of a forecast set against the truth, with the
    /// forecast's censor distances.
    pub fn blocks(&self, forecast: &[RawTrajectory]) -> Result<(KernelBlocks, Vec<f64>)> {
        let x = augment_all(forecast, &self.model.norm)?;
        let blocks = KernelBlocks::with_reference(&x, &self.truth, &self.truth_gram, &self.kernel)?;
        Ok((blocks, self.model.distances(&x)?))
    }

    /// CSig from precomputed blocks, at the threshold of `model`.
    pub fn csig(&self, blocks: &KernelBlocks, dx: &[f64], model: &CensorModel) -> Result<f64> {
        let w = |d: &[f64]| d.iter().map(|&v| censor_weight(v, model)).collect::<Vec<f64>>();
        blocks.censored(Estimator::Biased, &w(dx), &w(&self.truth_distances))
    }

    pub fn score(&self, forecast: &[RawTrajectory]) -> Result<(f64, f64)> {
        let (b, dx) = self.blocks(forecast)?;
        Ok((b.sig(Estimator::Biased)?, self.csig(&b, &dx, &self.model)?))
    }

    pub fn score_sets(&self, sets: &ForecastSets, rep: usize) -> Result<ExperimentRep> {
        let mut sig = [0.0; 4];
        let mut csig = [0.0; 4];
        for (k, set) in sets.as_array().into_iter().enumerate() {
            (sig[k], csig[k]) = self.score(set)?;
        }
        Ok(ExperimentRep { rep, sig, csig })
    }
}

fn dependency_spec(cfg: &DependencyConfig) -> GpSpec {
    GpSpec::new(cfg.horizon, cfg.variates)
}

/// Training, ground-truth and forecast sets of one dependency replication.
pub fn dependency_data(cfg: &DependencyConfig, rep: usize) -> Result<(Vec<RawTrajectory>, Vec<RawTrajectory>, ForecastSets)> {
    let seed = replication_seed(cfg.seed, "dependency", rep);
    let spec = dependency_spec(cfg);
    let train = sample_gp(&spec, cfg.train_n, stream_seed(seed, &[label_key("train")]))?;
    let truth = sample_gp(&spec, cfg.n, stream_seed(seed, &[label_key("truth")]))?;
    let sets = make_dependency_set(&spec, cfg.n, stream_seed(seed, &[label_key("forecast")]), cfg.jumps)?;
    Ok((train, truth, sets))
}

pub fn dependency_rep(cfg: &DependencyConfig, rep: usize) -> Result<ExperimentRep> {
    let (train, truth, sets) = dependency_data(cfg, rep)?;
    let seed = replication_seed(cfg.seed, "dependency", rep);
    let model = censor_model(&train, cfg.sig_depth, cfg.quantile, cfg.mcd_starts, seed)?;
    Scorer::new(model, &truth, cfg.dyadic_order)?.score_sets(&sets, rep)
}

/// Focus replication: the forecasts are scored against the ground-truth set
/// `F1` itself, so the tail paths shared by `F2` coincide exactly.
pub fn focus_rep(cfg: &FocusConfig, rep: usize) -> Result<ExperimentRep> {
    let seed = replication_seed(cfg.seed, "focus", rep);
    let focus = make_focus_set(cfg.horizon, cfg.n, stream_seed(seed, &[label_key("forecast")]), cfg.params)?;
    let spec = GpSpec::new(cfg.horizon, 1).with_lengthscale(cfg.params.lengthscale);
    let train = sample_gp(&spec, cfg.train_n, stream_seed(seed, &[label_key("train")]))?;
    let model = censor_model(&train, cfg.sig_depth, cfg.quantile, cfg.mcd_starts, seed)?;
    Scorer::new(model, &focus.sets.f1, cfg.dyadic_order)?.score_sets(&focus.sets, rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub quantile: f64,
    pub sig: f64,
    pub csig: f64,
}

/// CSig of one dependency forecaster across censoring quantiles; the Gram
/// blocks are computed once.
pub fn quantile_sweep(cfg: &DependencyConfig, forecaster: usize, quantiles: &[f64]) -> Result<Vec<SweepRow>> {
    if forecaster >= 4 {
        return Err(Error::InvalidInput(format!("forecaster index {forecaster} out of range")));
    }
    let (train, truth, sets) = dependency_data(cfg, 0)?;
    let seed = replication_seed(cfg.seed, "dependency", 0);
    let model = censor_model(&train, cfg.sig_depth, cfg.quantile, cfg.mcd_starts, seed)?;
    let scorer = Scorer::new(model, &truth, cfg.dyadic_order)?;
    let (blocks, dx) = scorer.blocks(sets.as_array()[forecaster])?;
    let sig = blocks.sig(Estimator::Biased)?;
    quantiles
        .iter()
        .map(|&q| {
            let mq = scorer.model.with_quantile(q)?;
            Ok(SweepRow {
                quantile: q,
                sig,
                csig: scorer.csig(&blocks, &dx, &mq)?,
            })
        })
        .collect()
}

/// Shape of an exported evaluation dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportShape {
    pub windows: usize,
    pub samples: usize,
    pub train: usize,
    pub seed: u64,
}

impl Default for ExportShape {
    fn default() -> Self {
        Self {
            windows: 16,
            samples: 32,
            train: 512,
            seed: 0,
        }
    }
}

fn numbered(prefix: &str, trajs: Vec<RawTrajectory>) -> Vec<(String, RawTrajectory)> {
    trajs
        .into_iter()
        .enumerate()
        .map(|(i, t)| (format!("{prefix}{i}"), t))
        .collect()
}

/// Writes train, truth, per-forecaster samples and a manifest. Each window
/// has one truth draw and `samples` draws from every forecaster.
fn export(
    out: &Path,
    name: &str,
    train: Vec<RawTrajectory>,
    truth: Vec<RawTrajectory>,
    samples: impl Fn(usize) -> Result<ForecastSets>,
    config: EvalConfig,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_windows(&out.join("train.csv"), &numbered("train", train))?;
    let truth = numbered("w", truth);
    write_windows(&out.join("truth.csv"), &truth)?;
    let per_window: Vec<ForecastSets> = (0..truth.len()).map(&samples).collect::<Result<_>>()?;
    let mut models = Vec::new();
    for (k, label) in FORECASTERS.iter().enumerate() {
        let sets: Vec<(String, Vec<RawTrajectory>)> = truth
            .iter()
            .zip(&per_window)
            .map(|((id, _), s)| (id.clone(), s.as_array()[k].to_vec()))
            .collect();
        let file = format!("{label}.csv");
        write_samples(&out.join(&file), &sets)?;
        models.push(ModelEntry {
            name: label.to_string(),
            samples_path: file.into(),
        });
    }
    let manifest = EvalManifest {
        dataset_name: name.to_string(),
        train_path: "train.csv".into(),
        truth_path: "truth.csv".into(),
        models,
        config,
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn export_dependency(out: &Path, cfg: &DependencyConfig, shape: &ExportShape) -> Result<PathBuf> {
    let spec = dependency_spec(cfg);
    let seed = shape.seed;
    let train = sample_gp(&spec, shape.train, stream_seed(seed, &[label_key("train")]))?;
    let truth = sample_gp(&spec, shape.windows, stream_seed(seed, &[label_key("truth")]))?;
    let config = EvalConfig {
        sig_depth: cfg.sig_depth,
        seed,
        ..EvalConfig::default()
    };
    export(
        out,
        "dependency",
        train,
        truth,
        |w| make_dependency_set(&spec, shape.samples, stream_seed(seed, &[label_key("window"), w as u64]), cfg.jumps),
        config,
    )
}

pub fn export_focus(out: &Path, cfg: &FocusConfig, shape: &ExportShape) -> Result<PathBuf> {
    let spec = GpSpec::new(cfg.horizon, 1).with_lengthscale(cfg.params.lengthscale);
    let seed = shape.seed;
    let train = sample_gp(&spec, shape.train, stream_seed(seed, &[label_key("train")]))?;
    let truth = sample_gp(&spec, shape.windows, stream_seed(seed, &[label_key("truth")]))?;
    let config = EvalConfig {
        sig_depth: cfg.sig_depth,
        seed,
        ..EvalConfig::default()
    };
    export(
        out,
        "focus",
        train,
        truth,
        |w| {
            make_focus_set(cfg.horizon, shape.samples, stream_seed(seed, &[label_key("window"), w as u64]), cfg.params)
                .map(|f| f.sets)
        },
        config,
    )
}

/// Writes one truth/forecast pair per power scenario, one path per window.
pub fn export_power(out: &Path, d: usize, m: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for kind in [
        ScenarioKind::WrongMean,
        ScenarioKind::WrongExpScale,
        ScenarioKind::MissingSkew,
        ScenarioKind::MissingCov,
    ] {
        let (truth, forecast) = make_power_pair(&ScenarioSpec::new(kind), d, m, stream_seed(seed, &[label_key(&kind.name())]))?;
        for (tag, set) in [("truth", truth), ("forecast", forecast)] {
            let path = out.join(format!("{}_{tag}.csv", kind.name()));
            write_windows(&path, &numbered("p", vectors_to_paths(&set)))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ingest, EvalManifest};

    fn small_dependency() -> DependencyConfig {
        DependencyConfig {
            horizon: 8,
            variates: 2,
            n: 64,
            train_n: 120,
            sig_depth: 2,
            mcd_starts: 50,
            ..DependencyConfig::default()
        }
    }

    #[test]
    fn ranking_orders_ascending() {
        assert_eq!(ExperimentRep::ranking(&[0.3, 0.1, 0.2, 0.1]), [1, 3, 2, 0]);
    }

    #[test]
    fn dependency_rep_is_deterministic() {
        let cfg = small_dependency();
        let a = dependency_rep(&cfg, 1).unwrap();
        let b = dependency_rep(&cfg, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.sig.iter().chain(&a.csig).all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn focus_truth_scores_zero() {
        let cfg = FocusConfig {
            horizon: 8,
            n: 64,
            train_n: 120,
            params: FocusParams::for_horizon(8),
            sig_depth: 3,
            mcd_starts: 50,
            ..FocusConfig::default()
        };
        let r = focus_rep(&cfg, 0).unwrap();
        assert_eq!(r.sig[0], 0.0);
        assert_eq!(r.csig[0], 0.0);
    }

    #[test]
    fn sweep_shares_sig() {
        let rows = quantile_sweep(&small_dependency(), 3, &[0.01, 0.5, 0.95]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.sig == rows[0].sig));
    }

    #[test]
    fn exported_dataset_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ExportShape {
            windows: 3,
            samples: 4,
            train: 50,
            seed: 2,
        };
        let path = export_dependency(dir.path(), &small_dependency(), &shape).unwrap();
        let data = ingest(&EvalManifest::load(&path).unwrap()).unwrap();
        assert_eq!(data.models.len(), 4);
        assert_eq!(data.truth.len(), 3);
        assert_eq!(data.models[2].instances[0].num_samples(), 4);
        let files = export_power(&dir.path().join("power"), 4, 10, 1).unwrap();
        assert_eq!(files.len(), 8);
    }
}
