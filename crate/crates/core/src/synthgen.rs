//! Seeded synthetic generators: the Gaussian-process dependency and focus
//! experiments, and the two-sample scenarios of the power lab.
//!
//! Every sample draws from its own counter-based stream keyed by
//! `(seed, set label, sample index)`, so outputs are independent of thread
//! count and of how many other samples are requested.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Gamma, StandardNormal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::RawTrajectory;
use crate::rng::{label_key, stream, stream_seed};

/// Ridge added (and grown tenfold per retry) when a covariance is not
/// numerically positive definite.
pub const COV_RIDGE: f64 = 1e-10;

/// Unit-diagonal correlation `AAᵀ` normalized, with `A` standard normal.
pub fn build_spatial_corr(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, &[label_key("spatial")]);
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c = &a * a.transpose();
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt() })
}

/// Zero-mean Gaussian process on the integer grid with covariance
/// `K_t ⊗ Σ_s`, `K_t` an RBF kernel in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSpec {
    pub horizon: usize,
    pub variates: usize,
    pub lengthscale: f64,
    pub spatial_seed: u64,
}

impl GpSpec {
    /// Lengthscale defaults to a sixth of the horizon (at least one step).
    pub fn new(horizon: usize, variates: usize) -> Self {
        Self {
            horizon,
            variates,
            lengthscale: (horizon as f64 / 6.0).max(1.0),
            spatial_seed: 0,
        }
    }

    pub fn with_lengthscale(mut self, lengthscale: f64) -> Self {
        self.lengthscale = lengthscale;
        self
    }

    pub fn with_spatial_seed(mut self, seed: u64) -> Self {
        self.spatial_seed = seed;
        self
    }

    pub fn temporal_kernel(&self) -> DMatrix<f64> {
        let l2 = self.lengthscale * self.lengthscale;
        DMatrix::from_fn(self.horizon, self.horizon, |i, j| {
            let d = i as f64 - j as f64;
            (-0.5 * d * d / l2).exp()
        })
    }

    pub fn spatial_corr(&self) -> DMatrix<f64> {
        build_spatial_corr(self.variates, self.spatial_seed)
    }

    /// `(T·D) x (T·D)` covariance of the flattened path, index `t·D + d`.
    pub fn kron_cov(&self) -> DMatrix<f64> {
        self.temporal_kernel().kronecker(&self.spatial_corr())
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.variates == 0 {
            return Err(Error::InvalidInput("GP needs a positive horizon and variate count".into()));
        }
        if !(self.lengthscale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "GP lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        Ok(())
    }
}

/// Lower Cholesky factor, retrying with a growing ridge.
fn cholesky_lower(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let mut ridge = 0.0;
    for _ in 0..8 {
        let m = cov + DMatrix::identity(n, n) * ridge;
        if let Some(c) = Cholesky::new(m) {
            return Ok(c.l());
        }
        ridge = if ridge == 0.0 { COV_RIDGE } else { ridge * 10.0 };
    }
    Err(Error::NotPositiveDefinite(format!(
        "covariance of size {n} has no Cholesky factor even with ridge {ridge:e}"
    )))
}

/// A GP with its covariance factor cached.
#[derive(Debug, Clone)]
pub struct GpSampler {
    spec: GpSpec,
    factor: DMatrix<f64>,
}

impl GpSampler {
    pub fn new(spec: &GpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            factor: cholesky_lower(&spec.kron_cov())?,
        })
    }

    pub fn spec(&self) -> &GpSpec {
        &self.spec
    }

    /// One flattened draw from the stream `(seed, key, index)`.
    pub fn draw(&self, seed: u64, key: u64, index: usize) -> Vec<f64> {
        let mut rng = stream(seed, &[key, index as u64]);
        let n = self.factor.nrows();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.factor * z).as_slice().to_vec()
    }

    pub fn sample(&self, n: usize, seed: u64, key: u64) -> Vec<RawTrajectory> {
        (0..n)
            .into_par_iter()
            .map(|i| trajectory(self.draw(seed, key, i), self.spec.variates))
            .collect()
    }
}

fn trajectory(values: Vec<f64>, dim: usize) -> RawTrajectory {
    RawTrajectory::on_unit_grid(values, dim).expect("generated values are finite")
}

/// `n` independent GP draws.
pub fn sample_gp(spec: &GpSpec, n: usize, seed: u64) -> Result<Vec<RawTrajectory>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    Ok(GpSampler::new(spec)?.sample(n, seed, label_key("gp")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpParams {
    /// Probability of a jump at each (time, variate) entry.
    pub prob: f64,
    /// Standard deviation of jump sizes.
    pub sigma: f64,
}

impl Default for JumpParams {
    fn default() -> Self {
        Self { prob: 0.2, sigma: 1.75 }
    }
}

/// Four forecast sets against a common ground-truth law.
#[derive(Debug, Clone)]
pub struct ForecastSets {
    pub f1: Vec<RawTrajectory>,
    pub f2: Vec<RawTrajectory>,
    pub f3: Vec<RawTrajectory>,
    pub f4: Vec<RawTrajectory>,
}

impl ForecastSets {
    pub fn as_array(&self) -> [&[RawTrajectory]; 4] {
        [&self.f1, &self.f2, &self.f3, &self.f4]
    }
}

/// Dependency experiment forecasts: exact law, no temporal dependence, no
/// dependence at all, and exact law plus sparse additive jumps. `F4` shares
/// its base draws with `F1`.
pub fn make_dependency_set(spec: &GpSpec, n: usize, seed: u64, jumps: JumpParams) -> Result<ForecastSets> {
    if n < 2 {
        return Err(Error::InvalidInput("forecast sets need at least 2 samples".into()));
    }
    if !(0.0..=1.0).contains(&jumps.prob) || !(jumps.sigma >= 0.0) {
        return Err(Error::InvalidInput(format!("invalid jump parameters {jumps:?}")));
    }
    let gp = GpSampler::new(spec)?;
    let (t, d) = (spec.horizon, spec.variates);
    let spatial = cholesky_lower(&spec.spatial_corr())?;
    let base_key = label_key("gp");

    let f1 = gp.sample(n, seed, base_key);
    let f2 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[label_key("no-temporal"), i as u64]);
            let mut v = Vec::with_capacity(t * d);
            for _ in 0..t {
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                v.extend((&spatial * z).iter());
            }
            trajectory(v, d)
        })
        .collect();
    let f3 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[label_key("independent"), i as u64]);
            trajectory((0..t * d).map(|_| rng.sample(StandardNormal)).collect(), d)
        })
        .collect();
    let arrival = Bernoulli::new(jumps.prob).expect("validated");
    let f4 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut v = gp.draw(seed, base_key, i);
            let mut rng = stream(seed, &[label_key("jumps"), i as u64]);
            for x in v.iter_mut() {
                let hit = arrival.sample(&mut rng);
                let size: f64 = rng.sample(StandardNormal);
                if hit {
                    *x += jumps.sigma * size;
                }
            }
            trajectory(v, d)
        })
        .collect();
    Ok(ForecastSets { f1, f2, f3, f4 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusParams {
    pub lengthscale: f64,
    /// Body paths stay within `max|mean path| + body_sigmas · σ`, `σ` the
    /// pooled standard deviation of the ground-truth values.
    pub body_sigmas: f64,
    pub t_dof: f64,
    pub sine_amplitude: f64,
}

impl FocusParams {
    pub fn for_horizon(horizon: usize) -> Self {
        Self {
            lengthscale: (horizon as f64 / 6.0).max(1.0),
            body_sigmas: 2.0,
            t_dof: 2.1,
            sine_amplitude: 1.0,
        }
    }
}

/// Focus experiment forecasts plus which `F1` paths count as body paths.
#[derive(Debug, Clone)]
pub struct FocusSets {
    pub sets: ForecastSets,
    pub body: Vec<bool>,
}

/// Indices of paths whose largest absolute value stays under the body
/// threshold.
pub fn body_mask(paths: &[RawTrajectory], body_sigmas: f64) -> Vec<bool> {
    let t = paths[0].values().len();
    let n = paths.len() as f64;
    let mut mean_path = vec![0.0; t];
    for p in paths {
        for (m, v) in mean_path.iter_mut().zip(p.values()) {
            *m += v / n;
        }
    }
    let center = mean_path.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let all: Vec<f64> = paths.iter().flat_map(|p| p.values().iter().copied()).collect();
    let mu = crate::stats::mean(&all);
    let sigma = (all.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / all.len() as f64).sqrt();
    let limit = center + body_sigmas * sigma;
    paths
        .iter()
        .map(|p| p.values().iter().fold(0.0f64, |a, v| a.max(v.abs())) < limit)
        .collect()
}

/// Univariate focus experiment: ground truth, truth with body paths replaced
/// by a sinusoid, heavy-tailed Student-t noise, and unit-variance uniform
/// noise.
pub fn make_focus_set(horizon: usize, n: usize, seed: u64, params: FocusParams) -> Result<FocusSets> {
    if n < 2 {
        return Err(Error::InvalidInput("forecast sets need at least 2 samples".into()));
    }
    let spec = GpSpec::new(horizon, 1).with_lengthscale(params.lengthscale);
    let f1 = GpSampler::new(&spec)?.sample(n, seed, label_key("gp"));
    let body = body_mask(&f1, params.body_sigmas);
    let f2 = f1
        .par_iter()
        .zip(&body)
        .enumerate()
        .map(|(i, (p, &is_body))| {
            if !is_body {
                return p.clone();
            }
            let mut rng = stream(seed, &[label_key("sine"), i as u64]);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let v = (0..horizon)
                .map(|t| params.sine_amplitude * (std::f64::consts::TAU * t as f64 / horizon as f64 + phase).sin())
                .collect();
            trajectory(v, 1)
        })
        .collect();
    let student = StudentT::new(params.t_dof)
        .map_err(|e| Error::InvalidInput(format!("Student-t degrees of freedom: {e}")))?;
    let f3 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[label_key("student"), i as u64]);
            trajectory((0..horizon).map(|_| student.sample(&mut rng)).collect(), 1)
        })
        .collect();
    let root3 = 3f64.sqrt();
    let uniform = Uniform::new_inclusive(-root3, root3).expect("finite bounds");
    let f4 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[label_key("uniform"), i as u64]);
            trajectory((0..horizon).map(|_| uniform.sample(&mut rng)).collect(), 1)
        })
        .collect();
    Ok(FocusSets {
        sets: ForecastSets { f1, f2, f3, f4 },
        body,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    F1Truth,
    F2NoTemporal,
    F3Independent,
    F4Jumps,
    BodyNoise,
    TMixture,
    Uniform,
    /// Both sets from the same univariate GP (null hypothesis).
    SameGp,
    WrongMean,
    WrongExpScale,
    MissingSkew,
    MissingCov,
}

impl ScenarioKind {
    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::InvalidInput(format!("unknown scenario '{name}'")))
    }

    pub fn name(&self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }

    /// Default discrepancy, chosen so that the Sig-MMD permutation test at
    /// `d = 8`, `m = 256` has power near 0.8.
    pub fn default_param(&self) -> f64 {
        match self {
            ScenarioKind::WrongMean => WRONG_MEAN_SHIFT,
            ScenarioKind::WrongExpScale => WRONG_EXP_SCALE,
            ScenarioKind::MissingSkew => MISSING_SKEW_SHAPE,
            ScenarioKind::MissingCov => MISSING_COV_RHO,
            _ => 0.0,
        }
    }
}

pub const WRONG_MEAN_SHIFT: f64 = 0.23;
pub const WRONG_EXP_SCALE: f64 = 1.3;
pub const MISSING_SKEW_SHAPE: f64 = 4.0;
pub const MISSING_COV_RHO: f64 = 0.37;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub param: f64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            param: kind.default_param(),
        }
    }

    pub fn with_param(mut self, param: f64) -> Self {
        self.param = param;
        self
    }

    fn validate(&self) -> Result<()> {
        let p = self.param;
        let ok = match self.kind {
            ScenarioKind::WrongMean | ScenarioKind::SameGp => p.is_finite(),
            ScenarioKind::WrongExpScale => p > 0.0 && p.is_finite(),
            ScenarioKind::MissingSkew => p > 0.0 && p.is_finite(),
            ScenarioKind::MissingCov => (0.0..1.0).contains(&p),
            other => {
                return Err(Error::InvalidInput(format!(
                    "scenario '{}' is not a two-sample power scenario",
                    other.name()
                )))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "parameter {p} is invalid for scenario '{}'",
                self.kind.name()
            )))
        }
    }
}

/// Ground-truth and forecast sets of `m` vectors in `R^d` each.
pub fn make_power_pair(spec: &ScenarioSpec, d: usize, m: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    spec.validate()?;
    if d == 0 || m == 0 {
        return Err(Error::InvalidInput("power scenarios need d ≥ 1 and m ≥ 1".into()));
    }
    let p = spec.param;
    let draw = |key: &str, f: &(dyn Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<f64> + Sync)| -> Vec<Vec<f64>> {
        (0..m)
            .into_par_iter()
            .map(|i| f(&mut stream(seed, &[label_key(key), i as u64])))
            .collect()
    };
    let normal = |shift: f64| move |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()
    };
    Ok(match spec.kind {
        ScenarioKind::SameGp => {
            let gp = GpSampler::new(&GpSpec::new(d, 1))?;
            let a = (0..m).into_par_iter().map(|i| gp.draw(seed, label_key("truth"), i)).collect();
            let b = (0..m).into_par_iter().map(|i| gp.draw(seed, label_key("forecast"), i)).collect();
            (a, b)
        }
        ScenarioKind::WrongMean => (draw("truth", &normal(0.0)), draw("forecast", &normal(p))),
        ScenarioKind::WrongExpScale => {
            let exp = |mean: f64| {
                let e = Exp::new(1.0 / mean).expect("positive rate");
                move |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| e.sample(rng)).collect() }
            };
            (draw("truth", &exp(1.0)), draw("forecast", &exp(p)))
        }
        ScenarioKind::MissingSkew => {
            let g = Gamma::new(p, 1.0).expect("validated shape");
            let skewed = move |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..d).map(|_| (g.sample(rng) - p) / p.sqrt()).collect()
            };
            (draw("truth", &skewed), draw("forecast", &normal(0.0)))
        }
        ScenarioKind::MissingCov => {
            let (a, b) = (p.sqrt(), (1.0 - p).sqrt());
            let correlated = move |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                let common: f64 = rng.sample(StandardNormal);
                (0..d).map(|_| a * common + b * rng.sample::<f64, _>(StandardNormal)).collect()
            };
            (draw("truth", &correlated), draw("forecast", &normal(0.0)))
        }
        _ => unreachable!("rejected by validate"),
    })
}

/// Treats each `d`-vector as a univariate path of length `d`.
pub fn vectors_to_paths(vectors: &[Vec<f64>]) -> Vec<RawTrajectory> {
    vectors.iter().map(|v| trajectory(v.clone(), 1)).collect()
}

/// Seed for replication `rep` of an experiment named `label`.
pub fn replication_seed(seed: u64, label: &str, rep: usize) -> u64 {
    stream_seed(seed, &[label_key(label), rep as u64])
}
