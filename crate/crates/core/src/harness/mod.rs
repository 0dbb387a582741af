//! Batch evaluation: ingest truth, training and sample files, fit the censor
//! model, score every model per window and aggregate.

pub mod io;
mod report;

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{crps, energy_score, quantile_loss, variogram_score, ForecastInstance, DEFAULT_QL_LEVELS, DEFAULT_VS_ORDER};
use crate::censoring::{censor_weight, fit_censor_model, CensorConfig, CensorModel, KernelBlocks, McdOptions};
use crate::error::{Error, Result};
use crate::mmd::Estimator;
use crate::paths::{augment, augment_all, AugmentedPath, RawTrajectory};
use crate::rng::{label_key, stream};
use crate::sigkernel::{median_bandwidth, KernelConfig};

pub use report::{classify, emit_report, CensorSummary, Outcome, ScoreName, ScoreReport, SweepPoint, Tally, WindowScores, REPORT_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub samples_path: PathBuf,
}

/// Evaluation inputs. Relative file paths are resolved against the
/// manifest's directory by [`EvalManifest::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalManifest {
    pub dataset_name: String,
    pub train_path: PathBuf,
    pub truth_path: PathBuf,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub config: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticKind {
    Rbf,
    Linear,
}

/// Kernel settings as written in a manifest; the RBF bandwidth falls back to
/// the median heuristic over the truth windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSettings {
    pub static_kernel: StaticKind,
    pub bandwidth: Option<f64>,
    pub dyadic_order: u32,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            static_kernel: StaticKind::Rbf,
            bandwidth: None,
            dyadic_order: KernelConfig::DEFAULT_DYADIC_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub censor_quantile: f64,
    pub beta: f64,
    pub sig_depth: usize,
    pub kernel: KernelSettings,
    pub ql_levels: Vec<f64>,
    pub vs_p: f64,
    pub seed: u64,
    /// Evaluate a seeded subset of this many windows.
    pub subsample: Option<usize>,
    /// Compare all samples of a model against all truth windows in one
    /// two-sample problem instead of averaging per-window statistics.
    pub pool_windows: bool,
    /// Censoring quantiles at which CSig is recomputed for the sweep output.
    pub sweep_quantiles: Vec<f64>,
    /// Random starts of the robust covariance search.
    pub mcd_starts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            censor_quantile: 0.95,
            beta: 10.0,
            sig_depth: 4,
            kernel: KernelSettings::default(),
            ql_levels: DEFAULT_QL_LEVELS.to_vec(),
            vs_p: DEFAULT_VS_ORDER,
            seed: 0,
            subsample: None,
            pool_windows: false,
            sweep_quantiles: Vec::new(),
            mcd_starts: McdOptions::default().n_init,
        }
    }
}

/// Quantiles used by the sweep output when none are configured.
pub fn default_sweep_quantiles() -> Vec<f64> {
    let mut q: Vec<f64> = (1..=19).map(|k| (5 * k) as f64 / 100.0).collect();
    q.insert(0, 0.01);
    q
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.censor_quantile > 0.0 && self.censor_quantile < 1.0) {
            return bad(format!("censor_quantile must lie in (0, 1), got {}", self.censor_quantile));
        }
        if self.ql_levels.is_empty() || self.ql_levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return bad("ql_levels must be non-empty and inside (0, 1)".into());
        }
        if !(self.vs_p > 0.0) {
            return bad(format!("vs_p must be positive, got {}", self.vs_p));
        }
        if self.subsample == Some(0) {
            return bad("subsample must be positive".into());
        }
        if let Some(q) = self.sweep_quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return bad(format!("sweep quantile {q} outside (0, 1)"));
        }
        if self.mcd_starts == 0 {
            return bad("mcd_starts must be positive".into());
        }
        if let Some(h) = self.kernel.bandwidth {
            if !(h > 0.0) {
                return bad(format!("bandwidth must be positive, got {h}"));
            }
        }
        Ok(())
    }
}

impl EvalManifest {
    /// Reads a manifest and resolves its paths relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.train_path = io::resolve(base, &manifest.train_path);
        manifest.truth_path = io::resolve(base, &manifest.truth_path);
        for m in &mut manifest.models {
            m.samples_path = io::resolve(base, &m.samples_path);
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidInput("manifest lists no models".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.models {
            if !seen.insert(&m.name) {
                return Err(Error::InvalidInput(format!("duplicate model name '{}'", m.name)));
            }
        }
        for p in std::iter::once(&self.train_path)
            .chain(std::iter::once(&self.truth_path))
            .chain(self.models.iter().map(|m| &m.samples_path))
        {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
            }
        }
        self.config.validate()
    }
}

/// Sample sets of one model, aligned with the truth windows.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub name: String,
    pub samples: Vec<Vec<RawTrajectory>>,
    pub instances: Vec<ForecastInstance>,
}

/// Validated in-memory evaluation data.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<RawTrajectory>,
    pub window_ids: Vec<String>,
    pub truth: Vec<RawTrajectory>,
    pub models: Vec<ModelData>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.truth[0].dim()
    }
}

/// Reads and cross-checks every file of the manifest.
pub fn ingest(manifest: &EvalManifest) -> Result<Dataset> {
    let train: Vec<RawTrajectory> = io::read_windows(&manifest.train_path)?
        .into_iter()
        .map(|w| w.traj)
        .collect();
    let truth_windows = io::read_windows(&manifest.truth_path)?;
    let dim = truth_windows[0].traj.dim();
    if train[0].dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "training data has {} variates, truth has {dim}",
            train[0].dim()
        )));
    }
    let position: HashMap<&str, usize> = truth_windows
        .iter()
        .enumerate()
        .map(|(i, w)| (w.id.as_str(), i))
        .collect();
    let mut models = Vec::with_capacity(manifest.models.len());
    for entry in &manifest.models {
        let path = &entry.samples_path;
        let ctx = |line: usize, message: String| Error::Parse {
            file: path.clone(),
            line,
            message: format!("model '{}': {message}", entry.name),
        };
        let read = io::read_samples(path)?;
        let mut slots: Vec<Option<io::SampleWindow>> = vec![None; truth_windows.len()];
        for sw in read {
            let Some(&i) = position.get(sw.id.as_str()) else {
                return Err(ctx(sw.line, format!("window '{}' does not appear in the truth file", sw.id)));
            };
            slots[i] = Some(sw);
        }
        let mut samples = Vec::with_capacity(truth_windows.len());
        let mut instances = Vec::with_capacity(truth_windows.len());
        for (tw, slot) in truth_windows.iter().zip(slots) {
            let Some(sw) = slot else {
                return Err(ctx(
                    0,
                    format!(
                        "no samples for window '{}' ({} truth windows in {})",
                        tw.id,
                        truth_windows.len(),
                        manifest.truth_path.display()
                    ),
                ));
            };
            if sw.samples[0].dim() != dim || sw.samples[0].len() != tw.traj.len() {
                return Err(ctx(
                    sw.line,
                    format!(
                        "window '{}' samples are {}x{}, truth is {}x{dim}",
                        sw.id,
                        sw.samples[0].len(),
                        sw.samples[0].dim(),
                        tw.traj.len()
                    ),
                ));
            }
            if let Some(s) = sw.samples.iter().position(|s| s.times() != tw.traj.times()) {
                return Err(ctx(
                    sw.line,
                    format!("window '{}' sample '{}' time values differ from the truth", sw.id, sw.sample_ids[s]),
                ));
            }
            let inst = ForecastInstance::new(
                tw.traj.values().to_vec(),
                sw.samples.iter().map(|s| s.values().to_vec()).collect(),
                tw.traj.times().to_vec(),
                dim,
            )
            .map_err(|e| ctx(sw.line, format!("window '{}': {e}", sw.id)))?;
            samples.push(sw.samples);
            instances.push(inst);
        }
        models.push(ModelData {
            name: entry.name.clone(),
            samples,
            instances,
        });
    }
    Ok(Dataset {
        name: manifest.dataset_name.clone(),
        train,
        window_ids: truth_windows.iter().map(|w| w.id.clone()).collect(),
        truth: truth_windows.into_iter().map(|w| w.traj).collect(),
        models,
    })
}

/// Ingests and evaluates a manifest.
pub fn run_eval(manifest: &EvalManifest) -> Result<ScoreReport> {
    manifest.validate()?;
    evaluate(&ingest(manifest)?, &manifest.config)
}

/// Indices of the windows to evaluate, in file order.
pub fn select_windows(count: usize, subsample: Option<usize>, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..count).collect();
    if let Some(k) = subsample.filter(|&k| k < count) {
        idx.shuffle(&mut stream(seed, &[label_key("subsample")]));
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

pub fn censor_config(config: &EvalConfig) -> CensorConfig {
    CensorConfig {
        quantile: config.censor_quantile,
        beta: config.beta,
        sig_depth: config.sig_depth,
        mcd: McdOptions {
            n_init: config.mcd_starts,
            seed: config.seed,
            ..McdOptions::default()
        },
        ..CensorConfig::default()
    }
}

/// Resolves the kernel; the median heuristic runs over every truth window so
/// that subsampling leaves per-window scores unchanged.
pub fn resolve_kernel(settings: &KernelSettings, truth: &[AugmentedPath]) -> KernelConfig {
    let base = match settings.static_kernel {
        StaticKind::Linear => KernelConfig::linear(),
        StaticKind::Rbf => KernelConfig::rbf(settings.bandwidth.unwrap_or_else(|| median_bandwidth(truth))),
    };
    base.with_dyadic_order(settings.dyadic_order)
}

/// Kernel blocks and sample distances of one model-versus-truth comparison.
struct Comparison {
    blocks: KernelBlocks,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl Comparison {
    fn new(x: &[AugmentedPath], y: &[AugmentedPath], model: &CensorModel, cfg: &KernelConfig) -> Result<Self> {
        Ok(Self {
            blocks: KernelBlocks::new(x, y, cfg)?,
            dx: model.distances(x)?,
            dy: model.distances(y)?,
        })
    }

    fn sig(&self) -> Result<f64> {
        self.blocks.sig(Estimator::Biased)
    }

    fn csig(&self, model: &CensorModel) -> Result<f64> {
        let w = |d: &[f64]| d.iter().map(|&v| censor_weight(v, model)).collect::<Vec<f64>>();
        self.blocks.censored(Estimator::Biased, &w(&self.dx), &w(&self.dy))
    }
}

fn baseline_scores(inst: &ForecastInstance, config: &EvalConfig) -> Result<Vec<(ScoreName, f64)>> {
    let mut out = vec![
        (ScoreName::Ql, quantile_loss(inst, &config.ql_levels)?),
        (ScoreName::Crps, crps(inst)),
        (ScoreName::Es, energy_score(inst)),
    ];
    if inst.dim() >= 2 {
        out.push((ScoreName::Vs, variogram_score(inst, config.vs_p, None)?));
    }
    Ok(out)
}

fn window_err(id: &str, model: &str, e: Error) -> Error {
    if e.is_numerical() {
        log::error!("window '{id}', model '{model}': {e}");
        e
    } else {
        Error::InvalidInput(format!("window '{id}', model '{model}': {e}"))
    }
}

/// Scores every model on the ingested data.
pub fn evaluate(data: &Dataset, config: &EvalConfig) -> Result<ScoreReport> {
    config.validate()?;
    let model = fit_censor_model(&data.train, &censor_config(config))?;
    log::info!(
        "censor model: threshold {:.4} at quantile {}, {} training windows",
        model.threshold_c,
        model.quantile,
        data.train.len()
    );
    let truth_aug = augment_all(&data.truth, &model.norm)?;
    let kernel = resolve_kernel(&config.kernel, &truth_aug);
    kernel.validate()?;
    let windows = select_windows(data.truth.len(), config.subsample, config.seed);
    let pairs: Vec<(usize, usize)> = (0..data.models.len())
        .flat_map(|m| windows.iter().map(move |&w| (m, w)))
        .collect();

    // per (model, window): baseline scores plus, unless pooled, kernel blocks
    let evaluated: Vec<(Vec<(ScoreName, f64)>, Option<Comparison>)> = pairs
        .par_iter()
        .map(|&(m, w)| {
            let md = &data.models[m];
            let id = &data.window_ids[w];
            let run = || -> Result<_> {
                let scores = baseline_scores(&md.instances[w], config)?;
                let cmp = if config.pool_windows {
                    None
                } else {
                    let x = augment_all(&md.samples[w], &model.norm)?;
                    Some(Comparison::new(&x, std::slice::from_ref(&truth_aug[w]), &model, &kernel)?)
                };
                Ok((scores, cmp))
            };
            run().map_err(|e| window_err(id, &md.name, e))
        })
        .collect::<Result<_>>()?;

    let pooled: Vec<Option<Comparison>> = if config.pool_windows {
        data.models
            .iter()
            .map(|md| {
                let x: Vec<AugmentedPath> = windows
                    .iter()
                    .flat_map(|&w| md.samples[w].iter())
                    .map(|p| augment(p, &model.norm))
                    .collect::<Result<_>>()?;
                let y: Vec<AugmentedPath> = windows.iter().map(|&w| truth_aug[w].clone()).collect();
                Comparison::new(&x, &y, &model, &kernel).map(Some)
            })
            .collect::<Result<_>>()?
    } else {
        data.models.iter().map(|_| None).collect()
    };

    let mut per_window = Vec::with_capacity(pairs.len());
    for (&(m, w), (scores, cmp)) in pairs.iter().zip(&evaluated) {
        let mut map: BTreeMap<ScoreName, f64> = scores.iter().copied().collect();
        if let Some(c) = cmp {
            map.insert(ScoreName::Sig, c.sig()?);
            map.insert(ScoreName::Csig, c.csig(&model)?);
        }
        per_window.push(WindowScores {
            window_id: data.window_ids[w].clone(),
            model: data.models[m].name.clone(),
            scores: map,
        });
    }

    let nwin = windows.len() as f64;
    let mut scores: BTreeMap<String, BTreeMap<ScoreName, f64>> = BTreeMap::new();
    for (m, md) in data.models.iter().enumerate() {
        let rows = &per_window[m * windows.len()..(m + 1) * windows.len()];
        let mut agg: BTreeMap<ScoreName, f64> = BTreeMap::new();
        for row in rows {
            for (&k, &v) in &row.scores {
                *agg.entry(k).or_insert(0.0) += v;
            }
        }
        agg.values_mut().for_each(|v| *v /= nwin);
        if let Some(c) = &pooled[m] {
            agg.insert(ScoreName::Sig, c.sig()?);
            agg.insert(ScoreName::Csig, c.csig(&model)?);
        }
        scores.insert(md.name.clone(), agg);
    }

    let sweep = if config.sweep_quantiles.is_empty() {
        Vec::new()
    } else {
        let mut points = Vec::new();
        for &q in &config.sweep_quantiles {
            let mq = model.with_quantile(q)?;
            for (m, md) in data.models.iter().enumerate() {
                let csig = match &pooled[m] {
                    Some(c) => c.csig(&mq)?,
                    None => {
                        let cmps = &evaluated[m * windows.len()..(m + 1) * windows.len()];
                        let mut s = 0.0;
                        for (_, c) in cmps {
                            s += c.as_ref().expect("per-window comparison").csig(&mq)?;
                        }
                        s / nwin
                    }
                };
                let sig = scores[&md.name][&ScoreName::Sig];
                points.push(SweepPoint {
                    quantile: q,
                    model: md.name.clone(),
                    sig,
                    csig,
                    abs_gap: (csig - sig).abs(),
                });
            }
        }
        points
    };

    Ok(ScoreReport::assemble(
        data,
        config,
        kernel,
        &model,
        windows.iter().map(|&w| data.window_ids[w].clone()).collect(),
        scores,
        per_window,
        sweep,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{sample_gp, GpSpec};

    fn write_dataset(dir: &Path, models: &[(&str, u64, usize)], windows: usize) -> PathBuf {
        let spec = GpSpec::new(6, 2);
        let train: Vec<(String, RawTrajectory)> = sample_gp(&spec, 80, 1)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("tr{i}"), t))
            .collect();
        io::write_windows(&dir.join("train.csv"), &train).unwrap();
        let truth: Vec<(String, RawTrajectory)> = sample_gp(&spec, windows, 2)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("w{i}"), t))
            .collect();
        io::write_windows(&dir.join("truth.csv"), &truth).unwrap();
        let mut entries = Vec::new();
        for &(name, seed, s) in models {
            let sets: Vec<(String, Vec<RawTrajectory>)> = (0..windows)
                .map(|w| (format!("w{w}"), sample_gp(&spec, s, seed * 1000 + w as u64).unwrap()))
                .collect();
            let file = format!("{name}.csv");
            io::write_samples(&dir.join(&file), &sets).unwrap();
            entries.push(ModelEntry {
                name: name.into(),
                samples_path: file.into(),
            });
        }
        let manifest = EvalManifest {
            dataset_name: "gp".into(),
            train_path: "train.csv".into(),
            truth_path: "truth.csv".into(),
            models: entries,
            config: EvalConfig {
                mcd_starts: 50,
                sig_depth: 3,
                ..EvalConfig::default()
            },
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
        path
    }

    #[test]
    fn minimal_manifest_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[("a", 3, 4)], 1);
        let data = ingest(&EvalManifest::load(&path).unwrap()).unwrap();
        let inst = &data.models[0].instances[0];
        assert_eq!((inst.num_samples(), inst.horizon(), inst.dim()), (4, 6, 2));
    }

    #[test]
    fn single_sample_is_rejected_at_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[("a", 3, 1)], 2);
        let err = ingest(&EvalManifest::load(&path).unwrap()).unwrap_err().to_string();
        assert!(err.contains("unbiased estimation needs ≥2 samples"), "{err}");
        assert!(err.contains("a.csv"), "{err}");
    }

    #[test]
    fn window_count_mismatch_is_described() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[("a", 3, 3)], 3);
        let spec = GpSpec::new(6, 2);
        let short: Vec<(String, Vec<RawTrajectory>)> = (0..2)
            .map(|w| (format!("w{w}"), sample_gp(&spec, 3, w).unwrap()))
            .collect();
        io::write_samples(&dir.path().join("a.csv"), &short).unwrap();
        let err = ingest(&EvalManifest::load(&path).unwrap()).unwrap_err().to_string();
        assert!(err.contains("no samples for window 'w2'"), "{err}");
    }

    #[test]
    fn identical_models_tie_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[("a", 3, 5), ("b", 3, 5)], 3);
        let report = run_eval(&EvalManifest::load(&path).unwrap()).unwrap();
        assert_eq!(report.scores.len(), 2);
        for (metric, tally) in &report.tallies {
            assert_eq!((tally.wins, tally.ties, tally.losses), (0, 2, 0), "{metric:?}");
        }
        assert_eq!(report.scores["a"].len(), 6);
    }

    #[test]
    fn subsampling_keeps_window_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[("a", 3, 4), ("b", 4, 4)], 5);
        let mut manifest = EvalManifest::load(&path).unwrap();
        let data = ingest(&manifest).unwrap();
        let full = evaluate(&data, &manifest.config).unwrap();
        manifest.config.subsample = Some(2);
        let part = evaluate(&data, &manifest.config).unwrap();
        assert_eq!(part.windows.len(), 2);
        for row in &part.per_window {
            let same = full
                .per_window
                .iter()
                .find(|r| r.window_id == row.window_id && r.model == row.model)
                .unwrap();
            assert_eq!(same, row);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[("a", 3, 4), ("b", 4, 4)], 3);
        let manifest = EvalManifest::load(&path).unwrap();
        let a = serde_json::to_string(&run_eval(&manifest).unwrap()).unwrap();
        let b = serde_json::to_string(&run_eval(&manifest).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pooled_and_swept_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[("a", 3, 4)], 3);
        let mut manifest = EvalManifest::load(&path).unwrap();
        manifest.config.pool_windows = true;
        manifest.config.sweep_quantiles = vec![0.01, 0.5, 0.95];
        let report = run_eval(&manifest).unwrap();
        assert!(report.per_window.iter().all(|r| !r.scores.contains_key(&ScoreName::Sig)));
        assert_eq!(report.sweep.len(), 3);
        assert!(report.scores["a"].contains_key(&ScoreName::Csig));
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = EvalConfig {
            censor_quantile: 1.0,
            ..EvalConfig::default()
        };
        assert!(cfg.validate().is_err());
        let text = r#"{"dataset_name":"x","train_path":"a","truth_path":"b","models":[],"config":{"quantile":0.8}}"#;
        assert!(serde_json::from_str::<EvalManifest>(text).is_err());
    }
}
