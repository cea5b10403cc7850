use nalgebra::{DMatrix, SymmetricEigen};

use super::conditional::{loglik_gradient, LatentConditional};
use super::model::AssembledModel;
use super::posterior::LatentFieldPosterior;
use crate::error::{Error, Result};
use crate::stats::LN_2PI;

/// Bounds on the log-precisions.
pub const LOG_TAU_BOUNDS: (f64, f64) = (-20.0, 20.0);

#[derive(Debug, Clone)]
pub struct EbOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's largest entry falls below this.
    pub grad_tol: f64,
    /// Starting log-precisions; defaults to 4 for every block.
    pub init: Option<Vec<f64>>,
    /// Step for the finite-difference Hessian.
    pub hessian_step: f64,
}

impl Default for EbOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-6, init: None, hessian_step: 1e-4 }
    }
}

/// Hyperposterior mode and the Gaussian latent conditional there.
#[derive(Debug, Clone)]
pub struct EbFit {
    /// Log-precisions at the mode.
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
    pub log_lik: f64,
    /// Log prior of `theta` (Gamma prior on `tau` plus the log Jacobian).
    pub log_prior: f64,
    /// Hessian of the negative log hyperposterior in `theta`.
    pub hessian: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub marginal_var: Vec<f64>,
    /// Lower-triangle entries of the latent precision at the mode.
    pub precision: Vec<(usize, usize, f64)>,
    pub iterations: usize,
}

impl EbFit {
    pub fn log_posterior(&self) -> f64 {
        self.log_lik + self.log_prior
    }
}

/// Log density of `theta = log tau` when `tau ~ Gamma(a, b)`.
pub fn log_prior_theta(model: &AssembledModel, theta: &[f64]) -> (f64, Vec<f64>) {
    let mut v = 0.0;
    let mut g = Vec::with_capacity(theta.len());
    for (h, &t) in model.hyperpriors().iter().zip(theta) {
        let tau = t.exp();
        v += h.a * h.b.ln() - statrs::function::gamma::ln_gamma(h.a) + h.a * t - h.b * tau;
        g.push(h.a - h.b * tau);
    }
    (v, g)
}

/// Negative log hyperposterior and gradient in `theta`.
fn objective(model: &AssembledModel, theta: &[f64]) -> Result<(f64, Vec<f64>, f64, LatentConditional)> {
    let tau: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
    let (ll, g, cond) = loglik_gradient(model, &tau)?;
    let (lp, gp) = log_prior_theta(model, theta);
    let grad = g.iter().zip(gp).map(|(a, b)| -(a + b)).collect();
    Ok((-(ll + lp), grad, ll, cond))
}

fn projected_gradient(theta: &[f64], grad: &[f64]) -> f64 {
    let (lo, hi) = LOG_TAU_BOUNDS;
    theta
        .iter()
        .zip(grad)
        .map(|(&t, &g)| if (t <= lo && g > 0.0) || (t >= hi && g < 0.0) { 0.0 } else { g.abs() })
        .fold(0.0, f64::max)
}

fn clamp(theta: &mut [f64]) {
    for t in theta {
        *t = t.clamp(LOG_TAU_BOUNDS.0, LOG_TAU_BOUNDS.1);
    }
}

/// Finite-difference Hessian of the negative log hyperposterior from the
/// analytic gradient.
pub fn hessian_at(model: &AssembledModel, theta: &[f64], step: f64) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[j] += step;
        tm[j] -= step;
        let (_, gp, _, _) = objective(model, &tp)?;
        let (_, gm, _, _) = objective(model, &tm)?;
        for i in 0..d {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Maximizes `log p(y|tau) + log p(tau)` over `theta = log tau` by
/// projected BFGS with an Armijo line search.
pub fn fit_eb(model: &AssembledModel, opts: &EbOptions) -> Result<LatentFieldPosterior> {
    let d = model.n_hyper();
    let mut theta = opts.init.clone().unwrap_or_else(|| vec![4.0; d]);
    if theta.len() != d {
        return Err(Error::InvalidArgument(format!("expected {d} initial log-precisions, got {}", theta.len())));
    }
    clamp(&mut theta);
    let (mut f, mut g, mut ll, mut cond) = objective(model, &theta)?;
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut iterations = 0;
    let mut converged = d == 0 || projected_gradient(&theta, &g) < opts.grad_tol;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut dir = -(&hinv * &gv);
        // drop components that push into an active bound
        for i in 0..d {
            let at_lo = theta[i] <= LOG_TAU_BOUNDS.0 && dir[i] < 0.0;
            let at_hi = theta[i] >= LOG_TAU_BOUNDS.1 && dir[i] > 0.0;
            if at_lo || at_hi {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&gv) >= 0.0 {
            hinv = DMatrix::identity(d, d);
            dir = -gv.clone();
        }
        let max_step = dir.amax();
        let mut alpha = if max_step > 5.0 { 5.0 / max_step } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, s)| t + alpha * s).collect();
            clamp(&mut trial);
            let decrease: f64 = trial.iter().zip(&theta).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            match objective(model, &trial) {
                Ok((ft, gt, llt, ct)) if ft <= f + 1e-4 * decrease.min(0.0) => {
                    accepted = Some((trial, ft, gt, llt, ct));
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        let Some((trial, ft, gt, llt, ct)) = accepted else {
            // no progress possible along any descent direction at this
            // resolution; accept the point if the gradient is small
            if projected_gradient(&theta, &g) < opts.grad_tol.sqrt() {
                converged = true;
            }
            break;
        };
        let s = nalgebra::DVector::from_iterator(d, trial.iter().zip(&theta).map(|(a, b)| a - b));
        let yv = nalgebra::DVector::from_iterator(d, gt.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(d, d);
            let left = &eye - rho * &s * yv.transpose();
            let right = &eye - rho * &yv * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let change = (f - ft).abs();
        theta = trial;
        f = ft;
        g = gt;
        ll = llt;
        cond = ct;
        if projected_gradient(&theta, &g) < opts.grad_tol || change < 1e-14 * (1.0 + f.abs()) {
            converged = projected_gradient(&theta, &g) < opts.grad_tol.sqrt();
            if converged {
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations, best_value: -f, best_point: theta });
    }
    let hessian = hessian_at(model, &theta, opts.hessian_step)?;
    let (lp, _) = log_prior_theta(model, &theta);
    let tau: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
    let marginal_var = cond.marginal_variances();
    let fit = EbFit {
        precision: model.precision_triplets(&tau),
        theta,
        tau,
        log_lik: ll,
        log_prior: lp,
        hessian,
        mean: cond.mean.clone(),
        marginal_var,
        iterations,
    };
    Ok(LatentFieldPosterior::from_eb(model, fit))
}

/// Laplace approximation to `log p(y)` around the hyperposterior mode.
pub fn laplace_evidence(fit: &EbFit) -> Result<f64> {
    let d = fit.theta.len();
    if d == 0 {
        return Ok(fit.log_lik);
    }
    let eig = SymmetricEigen::new(fit.hessian.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::IndefiniteHessian(eig.eigenvalues.iter().copied().collect()));
    }
    let log_det: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    Ok(fit.log_posterior() + 0.5 * d as f64 * LN_2PI - 0.5 * log_det)
}
