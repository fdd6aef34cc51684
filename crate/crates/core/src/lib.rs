//! Numerical and statistical machinery for linear SDEs with (almost) periodic
//! coefficients whose solutions are almost periodic in distribution but not
//! mean-square almost periodic.
//!
//! The crate is generic over the floating-point scalar (see [`Real`]); the
//! `*64` aliases below pin everything to `f64`, which is what the CLI and the
//! tolerance-heavy checks use.
//!
//! Modules:
//! - [`gp_core`]: closed-form Gaussian process laws and their finite-dimensional marginals.
//! - [`evolution`]: propagators `U(t, s)`, stochastic-convolution covariances and
//!   checks of dissipativity / exponential stability.
//! - [`sampler`]: exact and Euler–Maruyama path samplers with per-path RNG streams.
//! - [`estimators`]: Monte Carlo estimates with standard errors.
//! - [`ap_analysis`]: almost-period scans, Wasserstein distances between Gaussians
//!   and the mean-square falsification tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ap_analysis;
pub mod error;
pub mod estimators;
pub mod evolution;
pub mod gp_core;
pub mod linalg;
pub mod sampler;
pub mod scalar;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
pub use scalar::Real;

pub use ap_analysis::{
    distribution_ap_check, gaussian_w2, lemma_check, ms_ap_falsify, relatively_dense, scan_almost_periods,
    AlmostPeriodReport, FalsifyGrid, LemmaOptions, LemmaReport, LemmaVerdict, MsFalsification, ProbeSequence,
    SampledFunction,
};
pub use estimators::{mc_cov, mc_moment, ui_proxy, McEstimate, ProcessSampler, UiReport};
pub use evolution::{
    check_dissipativity, check_exponential_stability, convolution_covariance, propagator, variance_condition,
    EvolutionSystem, PropagatorEval, StabilityEstimate, StabilityOptions, StochasticConvolution,
};
pub use gp_core::{
    l2_increment, marginals, ou_spec, periodic_example_spec, GaussianProcessSpec, MarginalGaussian, OuParams,
};
pub use sampler::{
    sample_euler, sample_marginal, sample_ou_exact, sample_periodic_exact, Grid, InitialLaw, PathRng, PathSample,
    SampleMethod,
};
pub use table::CsvTable;

pub type OuParams64 = OuParams<f64>;
pub type GaussianProcess64 = GaussianProcessSpec<f64>;
pub type Marginal64 = MarginalGaussian<f64>;
pub type EvolutionSystem64 = EvolutionSystem<f64>;
pub type Convolution64 = StochasticConvolution<f64>;
pub type StabilityEstimate64 = StabilityEstimate<f64>;
pub type PathSample64 = PathSample<f64>;
pub type Grid64 = Grid<f64>;
pub type Sampler64 = ProcessSampler<f64>;
pub type McEstimate64 = McEstimate<f64>;
pub type AlmostPeriodReport64 = AlmostPeriodReport<f64>;

pub type OuParams32 = OuParams<f32>;
pub type GaussianProcess32 = GaussianProcessSpec<f32>;
pub type EvolutionSystem32 = EvolutionSystem<f32>;
