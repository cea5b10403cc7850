use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use rayon::prelude::*;

use super::conditional::latent_conditional;
use super::model::AssembledModel;
use super::posterior::{LatentFieldPosterior, SamplerDiagnostics};
use crate::error::{Error, Result};
use crate::stats::effective_sample_size;

#[derive(Debug, Clone)]
pub struct GibbsOptions {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    /// Hold the precisions at these values and only draw the latent field.
    pub fixed_tau: Option<Vec<f64>>,
    /// Starting precisions (default 100 for every block).
    pub init_tau: Option<Vec<f64>>,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self { n_iter: 2000, n_burn: 500, thin: 1, seed: 1, chains: 1, fixed_tau: None, init_tau: None }
    }
}

/// Per-chain RNG: the master seed selects the key, the chain index the
/// stream, so chains are independent and reproducible in any order.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

struct Chain {
    latent: Vec<Vec<f64>>,
    tau: Vec<Vec<f64>>,
}

fn run_chain(model: &AssembledModel, opts: &GibbsOptions, chain: usize) -> Result<Chain> {
    let mut rng = chain_rng(opts.seed, chain as u64);
    let d = model.n_hyper();
    let priors = model.hyperpriors();
    let mut tau = match (&opts.fixed_tau, &opts.init_tau) {
        (Some(t), _) | (None, Some(t)) => t.clone(),
        (None, None) => vec![100.0; d],
    };
    if tau.len() != d {
        return Err(Error::InvalidArgument(format!("expected {d} precisions, got {}", tau.len())));
    }
    let fixed = opts.fixed_tau.is_some();
    let mut latent = Vec::new();
    let mut taus = Vec::new();
    // with fixed precisions the conditional never changes
    let fixed_cond = if fixed { Some(latent_conditional(model, &tau)?) } else { None };
    for it in 0..opts.n_iter {
        let x = match &fixed_cond {
            Some(c) => c.draw(model, &mut rng),
            None => latent_conditional(model, &tau)?.draw(model, &mut rng),
        };
        if !fixed {
            for (h, &k) in model.free_blocks().iter().enumerate() {
                let b = &model.blocks[k];
                let shape = priors[h].a + 0.5 * b.effective_rank as f64;
                let rate = priors[h].b + 0.5 * model.block_quadratic(k, &x);
                let g = Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| Error::Degenerate(format!("precision update for {}: {e}", b.name)))?;
                tau[h] = rng.sample(g).clamp(1e-9, 1e12);
            }
        }
        if it >= opts.n_burn && (it - opts.n_burn).is_multiple_of(opts.thin.max(1)) {
            latent.push(x);
            taus.push(tau.clone());
        }
    }
    Ok(Chain { latent, tau: taus })
}

/// Conjugate Gibbs sampler: a joint draw of the latent field from its exact
/// constrained conditional, then `tau_k ~ Gamma(a_k + r_k/2, b_k +
/// x_k'Q_k x_k/2)` with `r_k` the block's effective rank. Chains run in
/// parallel and are concatenated in chain order.
pub fn gibbs(model: &AssembledModel, opts: &GibbsOptions) -> Result<LatentFieldPosterior> {
    if opts.n_iter <= opts.n_burn {
        return Err(Error::InvalidArgument(format!(
            "n_iter ({}) must exceed n_burn ({})",
            opts.n_iter, opts.n_burn
        )));
    }
    let chains: Vec<Chain> =
        (0..opts.chains.max(1)).into_par_iter().map(|c| run_chain(model, opts, c)).collect::<Result<_>>()?;
    let chain_lengths: Vec<usize> = chains.iter().map(|c| c.latent.len()).collect();
    let diagnostics = diagnostics(model, &chains);
    let mut latent = Vec::new();
    let mut tau = Vec::new();
    for c in chains {
        latent.extend(c.latent);
        tau.extend(c.tau);
    }
    let mut post = LatentFieldPosterior::from_draws(model, latent, tau, chain_lengths);
    post.diagnostics = Some(diagnostics);
    Ok(post)
}

fn diagnostics(model: &AssembledModel, chains: &[Chain]) -> SamplerDiagnostics {
    let ess_of = |f: &dyn Fn(&Chain, usize) -> f64| -> f64 {
        chains
            .iter()
            .map(|c| {
                let series: Vec<f64> = (0..c.latent.len()).map(|d| f(c, d)).collect();
                effective_sample_size(&series)
            })
            .sum()
    };
    let ess_tau: Vec<f64> = (0..model.n_hyper()).map(|h| ess_of(&|c: &Chain, d| c.tau[d][h].ln())).collect();
    let ess_latent: Vec<f64> = (0..model.n_coef).map(|j| ess_of(&|c: &Chain, d| c.latent[d][j])).collect();
    SamplerDiagnostics {
        n_chains: chains.len(),
        ess_tau,
        ess_latent_min: ess_latent.iter().cloned().fold(f64::INFINITY, f64::min),
        ess_latent,
    }
}
