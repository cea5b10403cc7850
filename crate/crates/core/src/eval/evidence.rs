use crate::error::{Error, Result};
use crate::lgm::{laplace_evidence, log_prior_theta, loglik_tau, AssembledModel, LatentFieldPosterior, LOG_TAU_BOUNDS};
use crate::stats::log_sum_exp;

/// Simpson intervals over the log-precision range.
pub const QUADRATURE_INTERVALS: usize = 4000;

/// Laplace approximation to `log p(y)` at the empirical-Bayes mode.
pub fn log_evidence(post: &LatentFieldPosterior) -> Result<f64> {
    let fit = post.eb.as_ref().ok_or_else(|| Error::InvalidArgument("log evidence needs an EB fit".into()))?;
    laplace_evidence(fit)
}

/// `log p(y)` by Simpson's rule over `log tau` for models with at most one
/// free precision.
pub fn log_evidence_quadrature(model: &AssembledModel) -> Result<f64> {
    match model.n_hyper() {
        0 => loglik_tau(model, &[]),
        1 => {
            let (lo, hi) = LOG_TAU_BOUNDS;
            let n = QUADRATURE_INTERVALS;
            let h = (hi - lo) / n as f64;
            let terms = (0..=n)
                .map(|k| {
                    let theta = lo + k as f64 * h;
                    let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                    let ll = loglik_tau(model, &[theta.exp()])?;
                    Ok((w * h / 3.0).ln() + ll + log_prior_theta(model, &[theta]).0)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(log_sum_exp(&terms))
        }
        d => Err(Error::InvalidArgument(format!("quadrature evidence supports at most one free precision, model has {d}"))),
    }
}

/// `log CPO_k = log p(y) - log p(y_{-k})`, both by quadrature. With a
/// single observation the denominator is the integral of a proper prior.
pub fn log_cpo_refit(model: &AssembledModel, k: usize) -> Result<f64> {
    if k >= model.observations.len() {
        return Err(Error::InvalidArgument(format!("observation {k} out of range")));
    }
    let full = log_evidence_quadrature(model)?;
    if model.observations.len() == 1 {
        let flat: usize = model
            .blocks
            .iter()
            .map(|b| b.size() - b.constraints.len() - b.effective_rank)
            .sum();
        if flat > 0 {
            return Err(Error::InvalidArgument("leaving out the only observation leaves an improper prior".into()));
        }
        return Ok(full);
    }
    Ok(full - log_evidence_quadrature(&model.without_observations(&[k])?)?)
}
