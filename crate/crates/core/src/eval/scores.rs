use crate::error::Result;
use crate::lgm::{AssembledModel, LatentFieldPosterior};
use crate::stats::{chain_ess, log_sum_exp, normal_ln_pdf, LN_2PI};

/// The inverse-density summands of a CPO estimate are flagged when their
/// coefficient of variation exceeds this, i.e. when the importance
/// effective sample size `n / (1 + cv^2)` falls below about 4% of the draws.
pub const CPO_CV_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dic {
    pub p_d: f64,
    pub d_bar: f64,
    pub dic: f64,
}

/// Deviance `sum [log(2 pi v) + (y - eta)^2 / v]`.
fn deviance(model: &AssembledModel, eta: &[f64]) -> f64 {
    model
        .observations
        .iter()
        .zip(eta)
        .map(|(o, e)| LN_2PI + o.v.ln() + (o.y - e).powi(2) / o.v)
        .sum()
}

/// DIC with the posterior mean of the linear predictor as plug-in.
pub fn dic(post: &LatentFieldPosterior, model: &AssembledModel) -> Result<Dic> {
    require_draws(post)?;
    let d_bar = post.samples.iter().map(|x| deviance(model, &model.predictors(x))).sum::<f64>() / post.n_draws() as f64;
    let eta_bar = model.predictors(&post.latent_mean());
    let p_d = d_bar - deviance(model, &eta_bar);
    Ok(Dic { p_d, d_bar, dic: d_bar + p_d })
}

fn require_draws(post: &LatentFieldPosterior) -> Result<()> {
    if post.samples.is_empty() {
        return Err(crate::Error::InvalidArgument("scores need posterior draws".into()));
    }
    Ok(())
}

/// Conditional predictive ordinates from the harmonic identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpo {
    pub log_cpo: Vec<f64>,
    /// Monte Carlo standard error of each CPO (not its log).
    pub mcse: Vec<f64>,
    /// Coefficient of variation of the inverse-density summands.
    pub cv: Vec<f64>,
    pub unstable: Vec<bool>,
    pub lcpo: f64,
}

impl Cpo {
    pub fn values(&self) -> Vec<f64> {
        self.log_cpo.iter().map(|l| l.exp()).collect()
    }

    pub fn n_unstable(&self) -> usize {
        self.unstable.iter().filter(|&&u| u).count()
    }
}

/// `CPO_k = 1 / E[1 / N(y_k; eta_k, v_k)]` over the posterior draws.
pub fn cpo(post: &LatentFieldPosterior, model: &AssembledModel) -> Result<Cpo> {
    require_draws(post)?;
    let etas: Vec<Vec<f64>> = post.samples.iter().map(|x| model.predictors(x)).collect();
    let n = etas.len() as f64;
    let mut out = Cpo { log_cpo: Vec::new(), mcse: Vec::new(), cv: Vec::new(), unstable: Vec::new(), lcpo: 0.0 };
    for (k, o) in model.observations.iter().enumerate() {
        let inv: Vec<f64> = etas.iter().map(|e| -normal_ln_pdf(o.y, e[k], o.v)).collect();
        let log_cpo = n.ln() - log_sum_exp(&inv);
        let top = inv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = inv.iter().map(|l| (l - top).exp()).collect();
        let m = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let cv = var.sqrt() / m;
        let ess = chain_ess(&w, &post.chain_lengths).max(1.0);
        out.mcse.push(log_cpo.exp() * cv / ess.sqrt());
        out.cv.push(cv);
        out.unstable.push(cv > CPO_CV_THRESHOLD);
        out.log_cpo.push(log_cpo);
    }
    out.lcpo = out.log_cpo.iter().sum();
    Ok(out)
}
