//! Signature-kernel scoring rules for probabilistic multivariate time-series
//! forecasts: Sig-MMD, its tail-censored variant CSig-MMD, the QL/CRPS/ES/VS
//! baselines, synthetic validation experiments and a permutation-test power
//! lab.

pub mod baselines;
pub mod censoring;
pub mod error;
pub mod experiments;
pub mod harness;
pub mod mmd;
pub mod paths;
pub mod plot;
pub mod powerlab;
pub mod rng;
pub mod sigkernel;
pub mod stats;
pub mod synthgen;
pub mod truncsig;

pub use censoring::{csig_mmd, fit_censor_model, CensorConfig, CensorModel, RobustEstimate};
pub use error::{Error, Result};
pub use mmd::{rbf_mmd, sig_mmd, Estimator, MmdResult};
pub use paths::{augment, fit_norm_stats, zero_pivot, AugmentedPath, NormStats, RawTrajectory};
pub use sigkernel::{gram, sig_kernel, GramMatrix, KernelConfig, StaticKernel};
pub use truncsig::{truncated_signature, TruncSig};
