//! Latent Gaussian smoothing of direct estimates. Observations are
//! `y_its ~ N(eta_its, V_its)` with known design variances and `eta` a sum
//! of Gaussian blocks; given the block precisions the latent field is
//! exactly Gaussian, which both inference paths (empirical Bayes and
//! conjugate Gibbs) exploit.

mod conditional;
mod eb;
mod gibbs;
mod model;
mod posterior;
mod spec;

pub use conditional::{latent_conditional, loglik_gradient, loglik_tau, LatentConditional};
pub use eb::{fit_eb, hessian_at, laplace_evidence, log_prior_theta, EbFit, EbOptions, LOG_TAU_BOUNDS};
pub use gibbs::{chain_rng, gibbs, GibbsOptions};
pub use model::{
    assemble, AssembledModel, Block, BlockPrecision, CellKey, Dims, ModelBuilder, Observation, INTERCEPT_PRECISION,
};
pub use posterior::{
    project, sample_eb, u5mr_posterior, LatentFieldPosterior, SamplerDiagnostics, Summary, U5mrCell, U5mrPosterior,
};
pub use spec::{Effect, ModelId, ModelSpec};

#[cfg(test)]
mod tests;
