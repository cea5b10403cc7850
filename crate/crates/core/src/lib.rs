//! Direct estimation and space-time smoothing of under-five mortality (U5MR)
//! from complex-survey and surveillance child survival records.
//!
//! The pipeline has two stages:
//!
//! 1. [`direct`] turns child records into per (region, period, survey)
//!    estimates of `logit(5q0)` with design-based variances, using a
//!    survey-weighted discrete-time hazard model, a sandwich covariance and
//!    the delta method (a delete-one-cluster jackknife is available as a
//!    cross-check).
//! 2. [`lgm`] treats those estimates as Gaussian observations with known
//!    variance and smooths them with a hierarchical latent Gaussian model
//!    built from IID, random-walk and ICAR blocks ([`gmrf`]). Because the
//!    working likelihood is Gaussian, the latent conditional is exact; the
//!    engine offers an empirical-Bayes mode with a Laplace approximation over
//!    the hyperparameters, and a fully conjugate Gibbs sampler.
//!
//! [`eval`] scores fitted models (DIC, CPO, log evidence, variance shares,
//! leave-area-period-out validation) and [`sim`] holds the simulation
//! studies used to check the variance estimators and the smoother.

pub mod data;
pub mod direct;
pub mod error;
pub mod eval;
pub mod gmrf;
pub mod lgm;
pub mod sim;
pub mod sparse;
pub mod stats;

pub use data::{ChildRecord, PeriodGrid, RegionGraph, SurveyKind, SurveyRegistry};
pub use direct::{AgeBands, BandEstimates, DirectEstimate};
pub use error::{Error, Result};
pub use eval::{EvalReport, ValidationReport};
pub use gmrf::{ScaledHyperprior, StructureKind, StructureMatrix};
pub use lgm::{AssembledModel, LatentFieldPosterior, ModelId, ModelSpec, U5mrPosterior};
pub use sim::SimDesign;


