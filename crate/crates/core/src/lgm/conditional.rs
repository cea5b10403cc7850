use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::model::AssembledModel;
use crate::error::{Error, Result};
use crate::sparse::Factor;
use crate::stats::LN_2PI;

/// Exact Gaussian conditional of the latent field given the free
/// precisions, restricted to the constraint subspace.
#[derive(Debug, Clone)]
pub struct LatentConditional {
    pub tau: Vec<f64>,
    /// Constrained posterior mean.
    pub mean: Vec<f64>,
    factor: Factor,
    /// `P^-1 a_j` for each constraint row `a_j`.
    w: Vec<Vec<f64>>,
    /// Cholesky factor of `A P^-1 A'`.
    aw: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    /// Log determinant of the precision on the constraint subspace.
    log_det_constrained: f64,
}

impl LatentConditional {
    fn krige(&self, model: &AssembledModel, x: &mut [f64]) {
        let Some(aw) = &self.aw else { return };
        let ax = DVector::from_iterator(
            self.w.len(),
            model.constraint_rows().iter().map(|g| g.iter().map(|&j| x[j]).sum::<f64>()),
        );
        let lambda = aw.solve(&ax);
        for (wj, &l) in self.w.iter().zip(lambda.iter()) {
            for (xi, &wi) in x.iter_mut().zip(wj) {
                *xi -= wi * l;
            }
        }
    }

    fn kriging_inverse(&self) -> Option<DMatrix<f64>> {
        self.aw.as_ref().map(|c| c.inverse())
    }

    pub fn log_det_constrained(&self) -> f64 {
        self.log_det_constrained
    }

    /// Draw from the constrained conditional given standard normals `z`.
    pub fn draw_from_standard(&self, model: &AssembledModel, z: &[f64]) -> Vec<f64> {
        let mut noise = self.factor.sample_from_standard(z);
        self.krige(model, &mut noise);
        self.mean.iter().zip(&noise).map(|(m, e)| m + e).collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, model: &AssembledModel, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.draw_from_standard(model, &z)
    }

    /// Marginal posterior variances of every coefficient.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let sel = self.factor.selected_inverse();
        let mut d = sel.diagonal();
        if let Some(minv) = self.kriging_inverse() {
            let c = self.w.len();
            for (i, di) in d.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..c {
                    for l in 0..c {
                        s += self.w[j][i] * minv[(j, l)] * self.w[l][i];
                    }
                }
                *di -= s;
            }
        }
        d
    }

    /// Posterior mean and variance of `h'x`.
    pub fn linear_combination(&self, h: &[(usize, f64)]) -> (f64, f64) {
        let mean = h.iter().map(|&(j, v)| v * self.mean[j]).sum();
        let mut dense = vec![0.0; self.mean.len()];
        for &(j, v) in h {
            dense[j] += v;
        }
        let s = self.factor.solve(&dense);
        let mut var: f64 = h.iter().map(|&(j, v)| v * s[j]).sum();
        if let Some(aw) = &self.aw {
            let hw = DVector::from_iterator(self.w.len(), self.w.iter().map(|wj| h.iter().map(|&(j, v)| v * wj[j]).sum()));
            var -= hw.dot(&aw.solve(&hw));
        }
        (mean, var.max(0.0))
    }

    /// `E[x_k' Q_k x_k | y, tau]` for each free block.
    pub fn expected_quadratics(&self, model: &AssembledModel) -> Vec<f64> {
        let sel = self.factor.selected_inverse();
        let minv = self.kriging_inverse();
        model
            .free_blocks()
            .iter()
            .map(|&k| {
                let b = &model.blocks[k];
                let mut tr = 0.0;
                for (r, c, q) in b.structure.lower_triplets() {
                    let (gr, gc) = (b.offset + r, b.offset + c);
                    let mut s = sel.get(gr, gc).expect("structure entries lie in the factor pattern");
                    if let Some(minv) = &minv {
                        let nc = self.w.len();
                        for j in 0..nc {
                            for l in 0..nc {
                                s -= self.w[j][gr] * minv[(j, l)] * self.w[l][gc];
                            }
                        }
                    }
                    tr += if r == c { q * s } else { 2.0 * q * s };
                }
                model.block_quadratic(k, &self.mean) + tr
            })
            .collect()
    }
}

/// Exact conditional `x | y, tau` with precision `Z'D^-1Z + sum tau_k Q_k`
/// (plus the intercept prior) under the sum-to-zero constraints, obtained by
/// conditioning by kriging.
pub fn latent_conditional(model: &AssembledModel, tau: &[f64]) -> Result<LatentConditional> {
    if tau.len() != model.n_hyper() {
        return Err(Error::InvalidArgument(format!("expected {} precisions, got {}", model.n_hyper(), tau.len())));
    }
    if let Some(t) = tau.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument(format!("precisions must be positive and finite, got {t}")));
    }
    let values = model.precision_values(tau);
    let factor = model.layout.analysis.factor(&values)?;
    let mut mean = factor.solve(model.rhs());
    let c = model.n_constraints();
    let mut log_det = factor.log_det();
    let mut out = LatentConditional { tau: tau.to_vec(), mean: Vec::new(), factor, w: Vec::new(), aw: None, log_det_constrained: 0.0 };
    if c > 0 {
        let n = model.n_coef;
        let w: Vec<Vec<f64>> = model
            .constraint_rows()
            .iter()
            .map(|g| {
                let mut a = vec![0.0; n];
                for &j in g {
                    a[j] = 1.0;
                }
                out.factor.solve(&a)
            })
            .collect();
        let aw = DMatrix::from_fn(c, c, |i, j| model.constraint_rows()[i].iter().map(|&k| w[j][k]).sum::<f64>());
        let aw = (&aw + aw.transpose()) * 0.5;
        let chol = aw.clone().cholesky().ok_or(Error::Degenerate(
            "constraint system is singular: a constraint is not identified".into(),
        ))?;
        log_det += 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() - model.log_det_aat();
        out.w = w;
        out.aw = Some(chol);
        out.krige(model, &mut mean);
        out.mean = mean;
    } else {
        out.mean = mean;
    }
    out.log_det_constrained = log_det;
    Ok(out)
}

/// Log prior density of the constrained latent field at `x`.
fn log_prior_latent(model: &AssembledModel, tau: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for (k, b) in model.blocks.iter().enumerate() {
        let p = model.block_precision(k, tau);
        let r = b.effective_rank as f64;
        s += -0.5 * r * LN_2PI + 0.5 * r * p.ln() + 0.5 * b.log_pdet - 0.5 * p * model.block_quadratic(k, x);
    }
    s
}

fn log_lik_at(model: &AssembledModel, x: &[f64]) -> f64 {
    model
        .observations
        .iter()
        .map(|o| {
            let r = o.y - o.predictor(x);
            -0.5 * (LN_2PI + o.v.ln() + r * r / o.v)
        })
        .sum()
}

/// `log p(y | tau)` with the latent field integrated out, together with
/// the conditional it was computed from.
pub fn loglik_with_conditional(model: &AssembledModel, tau: &[f64]) -> Result<(f64, LatentConditional)> {
    let cond = latent_conditional(model, tau)?;
    let x = &cond.mean;
    let dim = (model.n_coef - model.n_constraints()) as f64;
    let log_post_at_mode = -0.5 * dim * LN_2PI + 0.5 * cond.log_det_constrained;
    let value = log_lik_at(model, x) + log_prior_latent(model, tau, x) - log_post_at_mode;
    if !value.is_finite() {
        return Err(Error::Degenerate(format!("log p(y|tau) is not finite at tau = {tau:?}")));
    }
    Ok((value, cond))
}

/// `log p(y | tau)`: Gaussian marginal likelihood of the observations. Flat
/// directions of intrinsic blocks that the constraints leave free enter
/// with unit density.
pub fn loglik_tau(model: &AssembledModel, tau: &[f64]) -> Result<f64> {
    loglik_with_conditional(model, tau).map(|(v, _)| v)
}

/// `log p(y | tau)` and its gradient with respect to `log tau`.
pub fn loglik_gradient(model: &AssembledModel, tau: &[f64]) -> Result<(f64, Vec<f64>, LatentConditional)> {
    let (value, cond) = loglik_with_conditional(model, tau)?;
    let eq = cond.expected_quadratics(model);
    let grad = model
        .free_blocks()
        .iter()
        .zip(eq)
        .zip(tau)
        .map(|((&k, e), &t)| 0.5 * model.blocks[k].effective_rank as f64 - 0.5 * t * e)
        .collect();
    Ok((value, grad, cond))
}
