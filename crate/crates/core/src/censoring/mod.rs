//! Tail censoring: a robust Mahalanobis model over truncated signatures
//! decides how much of each path's probability mass stays in place and how
//! much is moved onto the zero pivot before the MMD is taken.

pub mod mcd;
pub mod pca;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::{biased_from, mmd2, unbiased_from, Estimator, MmdResult};
use crate::paths::{augment_all, fit_norm_stats, zero_pivot, AugmentedPath, NormStats, RawTrajectory};
use crate::sigkernel::{gram, pivot_self, GramMatrix, KernelConfig};
use crate::stats::{mad, quantile};
use crate::truncsig::{capped_depth, sig_len, truncated_signature, MAX_SIG_LEN};

pub use mcd::{fit_mcd, McdOptions, RobustEstimate};
pub use pca::{fit_pca, PcaBasis};

pub const MODEL_VERSION: u32 = 1;

/// PCA is fitted when the trajectories have more than this many variates.
pub const PCA_MIN_VARIATES: usize = 10;

/// Features whose training spread falls below this (relative) level are
/// treated as structurally constant and dropped.
const FEATURE_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorConfig {
    pub quantile: f64,
    pub beta: f64,
    pub sig_depth: usize,
    pub pca_variance: f64,
    pub support_fraction: f64,
    /// Compare the distance against `threshold_c^2` instead of `threshold_c`.
    pub squared_threshold: bool,
    pub mcd: McdOptions,
}

impl Default for CensorConfig {
    fn default() -> Self {
        Self {
            quantile: 0.95,
            beta: 10.0,
            sig_depth: 4,
            pca_variance: 0.8,
            support_fraction: 0.8,
            squared_threshold: false,
            mcd: McdOptions::default(),
        }
    }
}

impl CensorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::InvalidInput(format!(
                "censor quantile must lie in (0, 1), got {}",
                self.quantile
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {}", self.beta)));
        }
        if self.sig_depth == 0 {
            return Err(Error::InvalidInput("signature depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Affine map from raw signature coefficients to the reduced, whitened
/// coordinates the robust estimate lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub center: Vec<f64>,
    /// `p x r`, row-major.
    pub projection: Vec<f64>,
    pub outputs: usize,
}

impl FeatureMap {
    /// Centers, scales and rotates onto the non-degenerate directions of the
    /// training signatures.
    fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows[0].len();
        let mut center = vec![0.0; p];
        for r in rows {
            for (c, v) in center.iter_mut().zip(r) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n as f64);
        let centered = DMatrix::from_fn(n, p, |i, j| rows[i][j] - center[j]);
        let scale: Vec<f64> = centered
            .column_iter()
            .map(|c| (c.norm_squared() / n as f64).sqrt())
            .collect();
        let top = scale.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..p).filter(|&j| scale[j] > FEATURE_RANK_TOL * top.max(1e-300)).collect();
        if keep.is_empty() {
            return Err(Error::InvalidInput(
                "training signatures are all identical; nothing to censor on".into(),
            ));
        }
        let k = keep.len();
        let std = DMatrix::from_fn(n, k, |i, c| centered[(i, keep[c])] / scale[keep[c]]);
        let corr = std.tr_mul(&std) / n as f64;
        let eig = corr.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut dirs: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] > FEATURE_RANK_TOL * lmax).collect();
        dirs.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let r = dirs.len();
        let mut projection = vec![0.0; p * r];
        for (o, &e) in dirs.iter().enumerate() {
            let v = eig.eigenvectors.column(e);
            let s = 1.0 / eig.eigenvalues[e].sqrt();
            for (c, &j) in keep.iter().enumerate() {
                projection[j * r + o] = v[c] * s / scale[j];
            }
        }
        Ok(Self {
            center,
            projection,
            outputs: r,
        })
    }

    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let r = self.outputs;
        let mut out = vec![0.0; r];
        for (j, (&x, &c)) in coeffs.iter().zip(&self.center).enumerate() {
            let d = x - c;
            if d == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.projection[j * r..(j + 1) * r]) {
                *o += d * w;
            }
        }
        out
    }
}

/// A fitted censoring model; immutable and shareable across workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorModel {
    pub version: u32,
    pub norm: NormStats,
    pub pca: Option<PcaBasis>,
    pub sig_depth: usize,
    pub features: FeatureMap,
    pub robust: RobustEstimate,
    pub threshold_c: f64,
    /// Median absolute deviation of the training distances; the logistic
    /// argument is measured in these units.
    pub distance_scale: f64,
    pub beta: f64,
    pub quantile: f64,
    pub squared_threshold: bool,
    pub train_distances: Vec<f64>,
}

impl CensorModel {
    /// Same model with the threshold moved to another quantile of the
    /// training distances.
    pub fn with_quantile(&self, quantile: f64) -> Result<Self> {
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(Error::InvalidInput(format!(
                "censor quantile must lie in (0, 1), got {quantile}"
            )));
        }
        Ok(Self {
            quantile,
            threshold_c: crate::stats::quantile(&self.train_distances, quantile),
            ..self.clone()
        })
    }

    /// Same model with an explicit threshold (may be infinite).
    pub fn with_threshold(&self, threshold_c: f64) -> Self {
        Self {
            threshold_c,
            ..self.clone()
        }
    }

    /// Number of variate channels the model expects on incoming paths.
    pub fn input_variates(&self) -> usize {
        self.norm.dim()
    }

    /// Coordinates of a (normalized, augmented) path in the robust model's
    /// feature space.
    pub fn feature_vector(&self, path: &AugmentedPath) -> Result<Vec<f64>> {
        if path.variates() != self.input_variates() {
            return Err(Error::ShapeMismatch(format!(
                "censor model expects {} variates, path has {}",
                self.input_variates(),
                path.variates()
            )));
        }
        let projected;
        let path = match &self.pca {
            Some(pca) => {
                projected = path.project(&pca.basis, pca.components);
                &projected
            }
            None => path,
        };
        let sig = truncated_signature(path, self.sig_depth)?;
        Ok(self.features.apply(sig.coeffs()))
    }

    pub fn distance(&self, path: &AugmentedPath) -> Result<f64> {
        mcd::mahalanobis(&self.feature_vector(path)?, &self.robust)
    }

    pub fn distances(&self, paths: &[AugmentedPath]) -> Result<Vec<f64>> {
        let w = self.robust.whitener()?;
        paths
            .par_iter()
            .map(|p| w.distance(&self.feature_vector(p)?))
            .collect()
    }

    pub fn weight(&self, path: &AugmentedPath) -> Result<f64> {
        Ok(censor_weight(self.distance(path)?, self))
    }

    pub fn weights(&self, paths: &[AugmentedPath]) -> Result<Vec<f64>> {
        Ok(self
            .distances(paths)?
            .into_iter()
            .map(|d| censor_weight(d, self))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "censor model version {} is not supported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

/// Fits normalization, optional PCA, signatures, the robust estimate and the
/// distance threshold on training windows.
pub fn fit_censor_model(train: &[RawTrajectory], cfg: &CensorConfig) -> Result<CensorModel> {
    cfg.validate()?;
    let norm = fit_norm_stats(train)?;
    let dim = norm.dim();
    let mut paths = augment_all(train, &norm)?;

    let pca = if dim > PCA_MIN_VARIATES {
        let rows: Vec<&[f64]> = paths
            .iter()
            .flat_map(|p| (1..p.rows() - 1).map(move |i| &p.row(i)[..dim]))
            .collect();
        let basis = fit_pca(&rows, cfg.pca_variance)?;
        log::info!(
            "PCA keeps {} of {} variates ({:.3} of variance)",
            basis.components,
            dim,
            basis.explained
        );
        paths = paths.iter().map(|p| p.project(&basis.basis, basis.components)).collect();
        Some(basis)
    } else {
        None
    };

    let channels = paths[0].channels();
    let depth = capped_depth(channels, cfg.sig_depth, MAX_SIG_LEN);
    if depth < cfg.sig_depth {
        log::warn!(
            "signature depth reduced from {} to {} to keep {} channels under {} coefficients",
            cfg.sig_depth,
            depth,
            channels,
            MAX_SIG_LEN
        );
    }
    let n = paths.len();
    let p = sig_len(channels, depth);
    if n <= p {
        return Err(Error::McdUnderdetermined { n, p });
    }
    let sigs: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| truncated_signature(p, depth).map(|s| s.into_coeffs()))
        .collect::<Result<_>>()?;
    let features = FeatureMap::fit(&sigs)?;
    let r = features.outputs;
    if n <= r {
        return Err(Error::McdUnderdetermined { n, p: r });
    }
    let rows: Vec<Vec<f64>> = sigs.iter().map(|s| features.apply(s)).collect();
    let data = DMatrix::from_fn(n, r, |i, j| rows[i][j]);
    let robust = fit_mcd(&data, cfg.support_fraction, &cfg.mcd)?;
    let whitener = robust.whitener()?;
    let train_distances: Vec<f64> = rows.iter().map(|f| whitener.distance(f)).collect::<Result<_>>()?;
    let threshold_c = quantile(&train_distances, cfg.quantile);
    let spread = mad(&train_distances);
    let distance_scale = if spread > 0.0 && spread.is_finite() { spread } else { 1.0 };

    Ok(CensorModel {
        version: MODEL_VERSION,
        norm,
        pca,
        sig_depth: depth,
        features,
        robust,
        threshold_c,
        distance_scale,
        beta: cfg.beta,
        quantile: cfg.quantile,
        squared_threshold: cfg.squared_threshold,
        train_distances,
    })
}

/// Logistic weight `1 / (1 + exp(-beta (d - c) / s))`, where `c` is the
/// threshold (squared when the model says so) and `s` the distance scale.
pub fn censor_weight(distance: f64, model: &CensorModel) -> f64 {
    let c = if model.squared_threshold {
        model.threshold_c * model.threshold_c.abs()
    } else {
        model.threshold_c
    };
    logistic(model.beta * (distance - c) / model.distance_scale)
}

fn logistic(z: f64) -> f64 {
    if z.is_nan() {
        return 0.5;
    }
    1.0 / (1.0 + (-z).exp())
}

/// Paths with their censoring weights and the pivot receiving the removed
/// mass.
#[derive(Debug, Clone)]
pub struct WeightedSampleSet {
    pub paths: Vec<AugmentedPath>,
    pub weights: Vec<f64>,
    pub pivot: AugmentedPath,
}

impl WeightedSampleSet {
    pub fn new(paths: Vec<AugmentedPath>, weights: Vec<f64>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidInput("empty weighted sample set".into()));
        }
        if paths.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} paths with {} weights",
                paths.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidInput("censoring weights must lie in [0, 1]".into()));
        }
        let pivot = zero_pivot(paths[0].rows() - 2, paths[0].variates());
        Ok(Self { paths, weights, pivot })
    }

    pub fn weighted(paths: Vec<AugmentedPath>, model: &CensorModel) -> Result<Self> {
        let weights = model.weights(&paths)?;
        Self::new(paths, weights)
    }
}

/// Kernel blocks between two censored sets: self and cross Grams, each path
/// against the pivot, and the pivot against itself.
pub struct CensoredBlocks<'a> {
    pub kxx: &'a dyn Fn(usize, usize) -> f64,
    pub kyy: &'a dyn Fn(usize, usize) -> f64,
    pub kxy: &'a dyn Fn(usize, usize) -> f64,
    pub kx0: &'a [f64],
    pub ky0: &'a [f64],
    pub k00: f64,
}

/// Entry of the censored Gram between samples `a` (weight `wa`, pivot kernel
/// `ka0`) and `b`.
#[inline]
fn censored_entry(wa: f64, wb: f64, kab: f64, ka0: f64, kb0: f64, k00: f64) -> f64 {
    wa * wb * kab + wa * (1.0 - wb) * ka0 + (1.0 - wa) * wb * kb0 + (1.0 - wa) * (1.0 - wb) * k00
}

/// MMD between the censored empirical measures described by `blocks` and the
/// weights.
pub fn censored_mmd2(estimator: Estimator, blocks: &CensoredBlocks<'_>, wx: &[f64], wy: &[f64]) -> Result<f64> {
    let (m, n) = (wx.len(), wy.len());
    if blocks.kx0.len() != m || blocks.ky0.len() != n {
        return Err(Error::ShapeMismatch("pivot columns do not match the weights".into()));
    }
    let b = blocks;
    let exx = |i: usize, j: usize| censored_entry(wx[i], wx[j], (b.kxx)(i, j), b.kx0[i], b.kx0[j], b.k00);
    let eyy = |i: usize, j: usize| censored_entry(wy[i], wy[j], (b.kyy)(i, j), b.ky0[i], b.ky0[j], b.k00);
    let exy = |i: usize, j: usize| censored_entry(wx[i], wy[j], (b.kxy)(i, j), b.kx0[i], b.ky0[j], b.k00);
    match estimator {
        Estimator::Biased => Ok(biased_from(m, n, exx, eyy, exy)),
        Estimator::Unbiased => {
            if m < 2 || n < 2 {
                return Err(Error::TooFewSamples { m, n });
            }
            Ok(unbiased_from(m, n, exx, eyy, exy))
        }
    }
}

/// CSig-MMD between two sample sets with weights from `model`.
pub fn csig_mmd(
    p: &[AugmentedPath],
    q: &[AugmentedPath],
    model: &CensorModel,
    cfg: &KernelConfig,
) -> Result<MmdResult> {
    csig_mmd_with(p, q, model, cfg, Estimator::Biased)
}

pub fn csig_mmd_with(
    p: &[AugmentedPath],
    q: &[AugmentedPath],
    model: &CensorModel,
    cfg: &KernelConfig,
    estimator: Estimator,
) -> Result<MmdResult> {
    let wx = model.weights(p)?;
    let wy = model.weights(q)?;
    weighted_mmd(p, q, &wx, &wy, cfg, estimator)
}

/// CSig-MMD with explicit weights.
pub fn weighted_mmd(
    p: &[AugmentedPath],
    q: &[AugmentedPath],
    wx: &[f64],
    wy: &[f64],
    cfg: &KernelConfig,
    estimator: Estimator,
) -> Result<MmdResult> {
    Ok(MmdResult {
        value: KernelBlocks::new(p, q, cfg)?.censored(estimator, wx, wy)?,
        estimator,
        m: p.len(),
        n: q.len(),
    })
}

/// Gram blocks of two sample sets with their pivot columns, evaluated once
/// and reused for the plain statistic and any number of weightings.
#[derive(Debug, Clone)]
pub struct KernelBlocks {
    kxx: GramMatrix,
    kyy: GramMatrix,
    kxy: GramMatrix,
    k00: f64,
}

impl KernelBlocks {
    pub fn new(p: &[AugmentedPath], q: &[AugmentedPath], cfg: &KernelConfig) -> Result<Self> {
        if p.is_empty() || q.is_empty() {
            return Err(Error::InvalidInput("MMD of an empty sample set".into()));
        }
        Ok(Self {
            kxx: gram(p, None, cfg, true)?,
            kyy: gram(q, None, cfg, true)?,
            kxy: gram(p, Some(q), cfg, false)?,
            k00: pivot_self(&p[0], cfg)?,
        })
    }

    /// Same as [`KernelBlocks::new`] with the Gram of `q` (including its
    /// pivot column) already at hand.
    pub fn with_reference(p: &[AugmentedPath], q: &[AugmentedPath], kyy: &GramMatrix, cfg: &KernelConfig) -> Result<Self> {
        if p.is_empty() || q.is_empty() {
            return Err(Error::InvalidInput("MMD of an empty sample set".into()));
        }
        if kyy.shape() != (q.len(), q.len()) || kyy.pivot().is_none() {
            return Err(Error::ShapeMismatch("reference Gram does not match the reference set".into()));
        }
        Ok(Self {
            kxx: gram(p, None, cfg, true)?,
            kyy: kyy.clone(),
            kxy: gram(p, Some(q), cfg, false)?,
            k00: pivot_self(&p[0], cfg)?,
        })
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.kxx.shape().0, self.kyy.shape().0)
    }

    /// Uncensored statistic; identical to `sig_mmd` on the same sets.
    pub fn sig(&self, estimator: Estimator) -> Result<f64> {
        mmd2(estimator, &self.kxx, &self.kyy, &self.kxy)
    }

    pub fn censored(&self, estimator: Estimator, wx: &[f64], wy: &[f64]) -> Result<f64> {
        let (kxx, kyy, kxy) = (&self.kxx, &self.kyy, &self.kxy);
        let blocks = CensoredBlocks {
            kxx: &|i, j| kxx.get(i, j),
            kyy: &|i, j| kyy.get(i, j),
            kxy: &|i, j| kxy.get(i, j),
            kx0: kxx.pivot().expect("requested"),
            ky0: kyy.pivot().expect("requested"),
            k00: self.k00,
        };
        censored_mmd2(estimator, &blocks, wx, wy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmd::sig_mmd;
    use crate::paths::augment;
    use crate::synthgen::{sample_gp, GpSpec};

    fn small_config(depth: usize) -> CensorConfig {
        CensorConfig {
            sig_depth: depth,
            mcd: McdOptions {
                n_init: 100,
                ..McdOptions::default()
            },
            ..CensorConfig::default()
        }
    }

    fn gp_model(n: usize, depth: usize, seed: u64) -> (Vec<RawTrajectory>, CensorModel) {
        let train = sample_gp(&GpSpec::new(12, 2), n, seed).unwrap();
        let model = fit_censor_model(&train, &small_config(depth)).unwrap();
        (train, model)
    }

    fn unit_model(model: &CensorModel, threshold: f64) -> CensorModel {
        CensorModel {
            threshold_c: threshold,
            distance_scale: 1.0,
            beta: 10.0,
            ..model.clone()
        }
    }

    #[test]
    fn logistic_weight_examples() {
        let (_, model) = gp_model(200, 2, 1);
        let m = unit_model(&model, 3.0);
        assert_eq!(censor_weight(3.0, &m), 0.5);
        assert!((censor_weight(3.0 + 3f64.ln() / 10.0, &m) - 0.75).abs() < 1e-12);
        assert!((censor_weight(1e6, &m) - 1.0).abs() < 1e-12);
        assert_eq!(censor_weight(1.0, &m.with_threshold(f64::NEG_INFINITY)), 1.0);
        assert_eq!(censor_weight(1.0, &m.with_threshold(f64::INFINITY)), 0.0);
        let squared = CensorModel {
            squared_threshold: true,
            ..m
        };
        assert_eq!(censor_weight(9.0, &squared), 0.5);
    }

    #[test]
    fn threshold_tracks_the_training_quantile() {
        let (train, model) = gp_model(500, 3, 2);
        let paths = augment_all(&train, &model.norm).unwrap();
        let w = model.weights(&paths).unwrap();
        let frac = w.iter().filter(|&&w| w > 0.5).count() as f64 / w.len() as f64;
        assert!((frac - 0.05).abs() <= 0.01, "{frac}");
        let lower = model.with_quantile(0.8).unwrap();
        assert!(lower.threshold_c < model.threshold_c);
        assert!(model.with_quantile(1.0).is_err());
    }

    #[test]
    fn pca_engages_for_many_variates() {
        let spec = GpSpec::new(6, 18).with_spatial_seed(3);
        let train = sample_gp(&spec, 400, 4).unwrap();
        let model = fit_censor_model(&train, &small_config(2)).unwrap();
        let pca = model.pca.as_ref().expect("PCA for 18 variates");
        assert!(pca.components < 18);
        assert!(pca.explained >= 0.8);
        for a in 0..pca.components {
            for b in 0..pca.components {
                let dot: f64 = pca.column(a).iter().zip(pca.column(b)).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        let (_, small) = gp_model(200, 2, 5);
        assert!(small.pca.is_none());
    }

    #[test]
    fn too_few_windows_is_reported() {
        let train = sample_gp(&GpSpec::new(12, 2), 8, 6).unwrap();
        let err = fit_censor_model(&train, &small_config(4)).unwrap_err();
        assert!(err.to_string().contains("MCD underdetermined"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let (_, model) = gp_model(150, 2, 7);
        let back = CensorModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let mut bad: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        bad["version"] = 99.into();
        assert!(CensorModel::from_json(&bad.to_string()).is_err());
    }

    fn sets(model: &CensorModel, seed: u64) -> (Vec<AugmentedPath>, Vec<AugmentedPath>) {
        let spec = GpSpec::new(12, 2);
        let a = sample_gp(&spec, 12, seed).unwrap();
        let b = sample_gp(&spec.with_lengthscale(1.0), 10, seed + 1).unwrap();
        (
            augment_all(&a, &model.norm).unwrap(),
            augment_all(&b, &model.norm).unwrap(),
        )
    }

    #[test]
    fn full_weights_reproduce_sig_mmd_exactly() {
        let (_, model) = gp_model(200, 2, 8);
        let (p, q) = sets(&model, 9);
        let cfg = KernelConfig::rbf(2.0);
        let all_in = model.with_threshold(f64::NEG_INFINITY);
        let c = csig_mmd(&p, &q, &all_in, &cfg).unwrap();
        let s = sig_mmd(&p, &q, &cfg, Estimator::Biased).unwrap();
        assert_eq!(c.value.to_bits(), s.value.to_bits());
        assert!(s.value > 0.0);
    }

    #[test]
    fn zero_weights_give_exactly_zero() {
        let (_, model) = gp_model(200, 2, 10);
        let (p, q) = sets(&model, 11);
        let cfg = KernelConfig::rbf(2.0);
        let none = model.with_threshold(f64::INFINITY);
        assert_eq!(csig_mmd(&p, &q, &none, &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn negligible_weight_paths_are_absorbed() {
        let (_, model) = gp_model(200, 2, 12);
        let (mut p, q) = sets(&model, 13);
        let cfg = KernelConfig::rbf(2.0);
        let mut wx = vec![1.0; p.len()];
        let wy = vec![0.7; q.len()];
        wx[0] = 1e-9;
        let before = weighted_mmd(&p, &q, &wx, &wy, &cfg, Estimator::Biased).unwrap().value;
        let raw = RawTrajectory::on_unit_grid((0..24).map(|i| (i as f64 * 0.7).sin() * 3.0).collect(), 2).unwrap();
        p[0] = augment(&raw, &model.norm).unwrap();
        let after = weighted_mmd(&p, &q, &wx, &wy, &cfg, Estimator::Biased).unwrap().value;
        assert!((before - after).abs() < 1e-8, "{before} vs {after}");
    }

    #[test]
    fn weighted_set_validation() {
        let (_, model) = gp_model(150, 2, 14);
        let (p, _) = sets(&model, 15);
        assert!(WeightedSampleSet::new(p.clone(), vec![0.5; 3]).is_err());
        assert!(WeightedSampleSet::new(p.clone(), vec![1.5; p.len()]).is_err());
        let ws = WeightedSampleSet::weighted(p.clone(), &model).unwrap();
        assert_eq!(ws.weights.len(), p.len());
        assert!(ws.pivot.data().iter().all(|&v| v == 0.0));
        assert_eq!(ws.pivot.rows(), p[0].rows());
    }

    #[test]
    fn model_rejects_wrong_variate_count() {
        let (_, model) = gp_model(150, 2, 16);
        let other = sample_gp(&GpSpec::new(12, 3), 2, 0).unwrap();
        let p = augment(&other[0], &NormStats::identity(3)).unwrap();
        assert!(model.distance(&p).is_err());
    }
}
