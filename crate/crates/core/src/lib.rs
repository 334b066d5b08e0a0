//! Kernel-based regularization for continuous-time impulse-response
//! estimation from sampled input/output data.
//!
//! The estimator is a Gaussian-process / regularized least-squares fit of the
//! continuous-time impulse response `g(τ)` whose output covariance and
//! impulse/output cross-covariance are available in closed form when the input
//! has a known intersample behavior (zero-order hold or band-limited) and a
//! known past behavior (periodic or zero). An additive transient term handles
//! inputs whose past is unknown.
//!
//! Module map:
//! - [`signals`]: sampled signals, ZOH/BL reconstruction, DFT, PRBS.
//! - [`kernels`]: the diagonal-correlated kernel and its derived kernels.
//! - [`quadrature`]: adaptive Gauss–Kronrod integration used as an oracle.
//! - [`covariance`]: output covariance and cross-covariance builders.
//! - [`estimator`]: the regularized estimate, impulse evaluation, prediction.
//! - [`hyperopt`]: Empirical-Bayes hyperparameter estimation.
//! - [`simulator`]: CT system simulation and Monte Carlo data banks.
//! - [`metrics`]: FIT scores.
//! - [`experiment`]: orchestration behind the `ctkrm` command line tool.

pub mod covariance;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod hyperopt;
pub mod kernels;
mod linalg;
pub mod metrics;
pub mod quadrature;
pub mod signals;
pub mod simulator;

pub use covariance::{
    augment_transient, build_bl_pa, build_zoh_pa, build_zoh_za, Combo, CovariancePair,
    TransientKernel,
};
pub use error::{Error, Result};
pub use estimator::{fit, fit_with_transient, RegularizedEstimate};
pub use hyperopt::{neg_log_marginal, optimize, HyperBounds, HyperParams, OptimizerSettings};
pub use kernels::{DcKernel, DerivedDcConstants, ImpulseKernel};
pub use metrics::{fit_g, fit_y, FitReport};
pub use signals::{dft, eval_bl, eval_zoh, generate_prbs, DftCoefficients, Intersample, PastBehavior, SampledSignal};
pub use simulator::{CtTransferFunction, DataBankSpec, StateSpace};
