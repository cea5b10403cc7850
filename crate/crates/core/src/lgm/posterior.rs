use rand::Rng;
use rand_distr::StandardNormal;

use super::conditional::latent_conditional;
use super::eb::EbFit;
use super::gibbs::chain_rng;
use super::model::AssembledModel;
use super::spec::Effect;
use crate::error::{Error, Result};
use crate::gmrf::StructureKind;
use crate::stats::{expit, mean, quantile_sorted, variance};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerDiagnostics {
    pub n_chains: usize,
    /// Effective sample size of each `log tau`, summed over chains.
    pub ess_tau: Vec<f64>,
    pub ess_latent: Vec<f64>,
    pub ess_latent_min: f64,
}

/// Posterior over the latent field and precisions: draws (from Gibbs or
/// from the Gaussian at the empirical-Bayes mode) and, when fitted, the
/// mode itself.
#[derive(Debug, Clone)]
pub struct LatentFieldPosterior {
    /// One latent vector per retained draw.
    pub samples: Vec<Vec<f64>>,
    /// Free precisions of each retained draw.
    pub tau_samples: Vec<Vec<f64>>,
    pub chain_lengths: Vec<usize>,
    pub hyper_names: Vec<String>,
    pub eb: Option<EbFit>,
    pub diagnostics: Option<SamplerDiagnostics>,
}

impl LatentFieldPosterior {
    pub(crate) fn from_eb(model: &AssembledModel, fit: EbFit) -> Self {
        Self {
            samples: Vec::new(),
            tau_samples: Vec::new(),
            chain_lengths: Vec::new(),
            hyper_names: model.hyper_names(),
            eb: Some(fit),
            diagnostics: None,
        }
    }

    pub(crate) fn from_draws(
        model: &AssembledModel,
        samples: Vec<Vec<f64>>,
        tau_samples: Vec<Vec<f64>>,
        chain_lengths: Vec<usize>,
    ) -> Self {
        Self { samples, tau_samples, chain_lengths, hyper_names: model.hyper_names(), eb: None, diagnostics: None }
    }

    pub fn n_draws(&self) -> usize {
        self.samples.len()
    }

    fn require_draws(&self) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::InvalidArgument("posterior has no draws; run the sampler or sample_eb first".into()))
        } else {
            Ok(())
        }
    }

    /// Posterior mean of the latent field: the draw average, or the
    /// conditional mean at the mode when there are no draws.
    pub fn latent_mean(&self) -> Vec<f64> {
        if self.samples.is_empty() {
            return self.eb.as_ref().map(|e| e.mean.clone()).unwrap_or_default();
        }
        let n = self.samples[0].len();
        let mut m = vec![0.0; n];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b;
            }
        }
        let k = self.samples.len() as f64;
        m.iter_mut().for_each(|v| *v /= k);
        m
    }

    /// Draws of coefficient `j`.
    pub fn coefficient_draws(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }

    /// Draws of precision `h`.
    pub fn tau_draws(&self, h: usize) -> Vec<f64> {
        self.tau_samples.iter().map(|t| t[h]).collect()
    }

    /// Monte Carlo standard error of the draw mean of coefficient `j`, using
    /// the effective sample size when diagnostics are available.
    pub fn mcse(&self, j: usize) -> f64 {
        let d = self.coefficient_draws(j);
        let ess = self.diagnostics.as_ref().map(|g| g.ess_latent[j]).unwrap_or(d.len() as f64);
        (variance(&d) / ess.max(1.0)).sqrt()
    }

    /// Median and central 95% interval of precision `h`, from draws or the
    /// mode.
    pub fn tau_summary(&self, h: usize) -> Summary {
        if self.tau_samples.is_empty() {
            let t = self.eb.as_ref().map(|e| e.tau[h]).unwrap_or(f64::NAN);
            return Summary { mean: t, median: t, lower: t, upper: t };
        }
        Summary::of(&self.tau_draws(h))
    }
}

/// Draws `n` latent vectors from the Gaussian conditional at the
/// empirical-Bayes mode (precisions held at the mode).
pub fn sample_eb(model: &AssembledModel, post: &mut LatentFieldPosterior, n: usize, seed: u64) -> Result<()> {
    let fit = post.eb.as_ref().ok_or_else(|| Error::InvalidArgument("posterior has no EB fit".into()))?;
    let cond = latent_conditional(model, &fit.tau)?;
    let mut rng = chain_rng(seed, 0);
    post.samples = (0..n).map(|_| cond.draw(model, &mut rng)).collect();
    post.tau_samples = vec![fit.tau.clone(); n];
    post.chain_lengths = vec![n];
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// 2.5% point.
    pub lower: f64,
    /// 97.5% point.
    pub upper: f64,
}

impl Summary {
    pub fn of(draws: &[f64]) -> Self {
        let mut v = draws.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: mean(&v),
            median: quantile_sorted(&v, 0.5),
            lower: quantile_sorted(&v, 0.025),
            upper: quantile_sorted(&v, 0.975),
        }
    }
}

/// Posterior of `5q0` in one region and period.
#[derive(Debug, Clone, PartialEq)]
pub struct U5mrCell {
    pub region: usize,
    pub period: usize,
    pub q5: Summary,
    pub logit: Summary,
    pub logit_var: f64,
}

/// Posterior of `5q0 = expit(mu + alpha_t + gamma_t + theta_i + phi_i +
/// delta_it)` for every region and period, with the logit-scale draws.
#[derive(Debug, Clone, PartialEq)]
pub struct U5mrPosterior {
    pub cells: Vec<U5mrCell>,
    /// Logit-scale draws, one vector per cell.
    pub logit_draws: Vec<Vec<f64>>,
}

impl U5mrPosterior {
    fn from_logit_draws(keys: Vec<(usize, usize)>, logit_draws: Vec<Vec<f64>>) -> Self {
        let cells = keys
            .iter()
            .zip(&logit_draws)
            .map(|(&(region, period), d)| {
                let q: Vec<f64> = d.iter().map(|&v| expit(v)).collect();
                U5mrCell {
                    region,
                    period,
                    q5: Summary::of(&q),
                    logit: Summary::of(d),
                    logit_var: if d.len() > 1 { variance(d) } else { 0.0 },
                }
            })
            .collect();
        Self { cells, logit_draws }
    }

    pub fn cell(&self, region: usize, period: usize) -> Option<&U5mrCell> {
        self.cells.iter().find(|c| c.region == region && c.period == period)
    }

    /// `5q0` draws for cell index `k`.
    pub fn q5_draws(&self, k: usize) -> Vec<f64> {
        self.logit_draws[k].iter().map(|&v| expit(v)).collect()
    }
}

/// Transforms every draw of the target linear predictor through `expit`.
/// Survey effects are not part of the target.
pub fn u5mr_posterior(post: &LatentFieldPosterior, model: &AssembledModel) -> Result<U5mrPosterior> {
    post.require_draws()?;
    let dims = model.dims.ok_or_else(|| Error::InvalidArgument("model has no region-period grid".into()))?;
    let mut keys = Vec::new();
    let mut draws = Vec::new();
    for i in 0..dims.n_regions {
        for t in 0..dims.n_periods {
            let h = model.target_combination(i, t)?;
            keys.push((i, t));
            draws.push(post.samples.iter().map(|x| h.iter().map(|&(j, v)| v * x[j]).sum()).collect());
        }
    }
    Ok(U5mrPosterior::from_logit_draws(keys, draws))
}

/// Forecasts periods `T .. T + horizon - 1`: per draw, the random walk is
/// extended with its own precision, period and interaction IID effects are
/// drawn fresh, and spatial effects are carried forward. An infinite
/// precision gives a noiseless extension.
pub fn project(
    post: &LatentFieldPosterior,
    model: &AssembledModel,
    horizon: usize,
    seed: u64,
) -> Result<U5mrPosterior> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("projection horizon must be at least 1".into()));
    }
    post.require_draws()?;
    let dims = model.dims.ok_or_else(|| Error::InvalidArgument("model has no region-period grid".into()))?;
    let gamma = model
        .block(Effect::Gamma)
        .ok_or_else(|| Error::InvalidArgument("projection needs a random-walk block".into()))?;
    let order = match gamma.structure.kind {
        StructureKind::Rw1 => 1,
        StructureKind::Rw2 => 2,
        _ => return Err(Error::InvalidArgument("gamma block is not a random walk".into())),
    };
    let tau_of = |effect: Effect, draw: usize| -> Option<f64> {
        let k = model.blocks.iter().position(|b| b.effect == Some(effect))?;
        Some(match model.hyper_index(effect) {
            Some(h) => post.tau_samples[draw][h],
            None => model.block_precision(k, &[]),
        })
    };
    let noise = |rng: &mut rand_chacha::ChaCha8Rng, tau: f64| -> f64 {
        if tau.is_infinite() {
            0.0
        } else {
            rng.sample::<f64, _>(StandardNormal) / tau.sqrt()
        }
    };
    let (n_i, n_t) = (dims.n_regions, dims.n_periods);
    let mut draws = vec![vec![0.0; post.n_draws()]; n_i * horizon];
    let mut rng = chain_rng(seed, 0);
    let mu = model.block_index("mu").map(|k| model.blocks[k].offset);
    let spatial: Vec<usize> = [Effect::Theta, Effect::Phi]
        .iter()
        .filter_map(|&e| model.block(e).map(|b| b.offset))
        .collect();
    for (d, x) in post.samples.iter().enumerate() {
        let g = &x[gamma.range()];
        let tau_g = tau_of(Effect::Gamma, d).expect("gamma present");
        let mut path = g.to_vec();
        for _ in 0..horizon {
            let n = path.len();
            let mean = if order == 1 { path[n - 1] } else { 2.0 * path[n - 1] - path[n - 2] };
            path.push(mean + noise(&mut rng, tau_g));
        }
        for h in 0..horizon {
            let alpha = match tau_of(Effect::Alpha, d) {
                Some(t) => noise(&mut rng, t),
                None => 0.0,
            };
            for i in 0..n_i {
                let delta = match tau_of(Effect::Delta, d) {
                    Some(t) => noise(&mut rng, t),
                    None => 0.0,
                };
                let base = mu.map(|o| x[o]).unwrap_or(0.0) + spatial.iter().map(|&o| x[o + i]).sum::<f64>();
                draws[i * horizon + h][d] = base + path[n_t + h] + alpha + delta;
            }
        }
    }
    let keys = (0..n_i).flat_map(|i| (0..horizon).map(move |h| (i, n_t + h))).collect();
    Ok(U5mrPosterior::from_logit_draws(keys, draws))
}
