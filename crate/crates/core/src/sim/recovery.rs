use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use super::smoothing::{draw_prior_field, simulate_estimates};
use crate::data::{PeriodGrid, RegionGraph, SurveyRegistry};
use crate::direct::DirectEstimate;
use crate::error::{Error, Result};
use crate::lgm::{
    assemble, chain_rng, fit_eb, gibbs, sample_eb, u5mr_posterior, AssembledModel, EbOptions, Effect, GibbsOptions,
    LatentFieldPosterior, ModelSpec,
};
use crate::stats::{expit, logit};

/// How a fitted model's posterior is obtained.
#[derive(Debug, Clone)]
pub enum Inference {
    /// Empirical-Bayes mode, then `draws` samples from the latent
    /// conditional there.
    Eb { draws: usize },
    Gibbs(GibbsOptions),
}

impl Default for Inference {
    fn default() -> Self {
        Inference::Eb { draws: 1000 }
    }
}

/// Fits `model` and returns a posterior with draws.
pub fn fit_with(model: &AssembledModel, inference: &Inference, seed: u64) -> Result<LatentFieldPosterior> {
    match inference {
        Inference::Eb { draws } => {
            let mut post = fit_eb(model, &EbOptions::default())?;
            sample_eb(model, &mut post, *draws, seed)?;
            Ok(post)
        }
        Inference::Gibbs(opts) => gibbs(model, &GibbsOptions { seed, ..opts.clone() }),
    }
}

/// Truth-generating scenario for the smoother: a full region x period x
/// survey grid with a common design variance.
#[derive(Debug, Clone)]
pub struct RecoveryScenario {
    pub spec: ModelSpec,
    pub graph: RegionGraph,
    pub grid: PeriodGrid,
    pub n_surveys: usize,
    pub v_des: f64,
    /// True precision of each random-effect block; blocks not listed use
    /// `default_tau`.
    pub tau: BTreeMap<Effect, f64>,
    pub default_tau: f64,
    pub mu: f64,
    pub gamma_slope: f64,
    /// Survey displaced by a constant on the logit scale.
    pub survey_shift: Option<(usize, f64)>,
    pub n_reps: usize,
    pub seed: u64,
    pub inference: Inference,
}

impl RecoveryScenario {
    pub fn new(spec: ModelSpec, graph: RegionGraph, grid: PeriodGrid, n_surveys: usize) -> Self {
        Self {
            spec,
            graph,
            grid,
            n_surveys,
            v_des: 0.02,
            tau: BTreeMap::new(),
            default_tau: 100.0,
            mu: logit(0.1),
            gamma_slope: -0.1,
            survey_shift: None,
            n_reps: 50,
            seed: 1,
            inference: Inference::default(),
        }
    }

    fn skeleton(&self) -> Result<(AssembledModel, SurveyRegistry)> {
        let registry = SurveyRegistry::households(self.n_surveys);
        let mut data = Vec::new();
        for i in 0..self.graph.len() {
            for t in 0..self.grid.n_periods() {
                for s in 0..self.n_surveys {
                    data.push(DirectEstimate {
                        region: i,
                        period: t,
                        survey: s,
                        y: 0.0,
                        v_des: self.v_des,
                        v_jackknife: None,
                        n_clusters: 0,
                        n_child_months: 0,
                    });
                }
            }
        }
        Ok((assemble(&self.spec, &data, &self.grid, &self.graph, &registry)?, registry))
    }

    pub fn true_tau(&self, model: &AssembledModel) -> Vec<f64> {
        model
            .free_blocks()
            .iter()
            .map(|&k| {
                model.blocks[k].effect.and_then(|e| self.tau.get(&e).copied()).unwrap_or(self.default_tau)
            })
            .collect()
    }
}

/// One replicate of a recovery study.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub rep: usize,
    /// Mean over cells of posterior-median minus true `logit(5q0)`.
    pub bias_logit: f64,
    /// Mean over cells of posterior-median minus true `5q0`.
    pub bias_q5: f64,
    /// Share of cells whose 95% interval contains the true `5q0`.
    pub coverage: f64,
    /// Largest absolute gap between fitted predictor and observation.
    pub max_fit_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryTable {
    pub rows: Vec<RecoveryRow>,
    pub n_failed: usize,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub bias_logit: f64,
    pub bias_q5: f64,
}

/// Simulates `y_its ~ N(eta_its, V)` from the scenario's truth, fits, and
/// reports bias and interval coverage of `5q0_it`. Replicates run in
/// parallel on RNG streams derived from the seed.
pub fn recovery_study(scenario: &RecoveryScenario) -> Result<RecoveryTable> {
    let (skeleton, registry) = scenario.skeleton()?;
    let tau = scenario.true_tau(&skeleton);
    let results: Vec<Result<RecoveryRow>> = (0..scenario.n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = chain_rng(scenario.seed, rep as u64);
            let x = draw_prior_field(&skeleton, &tau, scenario.mu, scenario.gamma_slope, &mut rng)?;
            let shift = |s: usize| match scenario.survey_shift {
                Some((ss, d)) if ss == s => d,
                _ => 0.0,
            };
            let data = simulate_estimates(&skeleton, &x, shift, &mut rng)?;
            let model = assemble(&scenario.spec, &data, &scenario.grid, &scenario.graph, &registry)?;
            let post = fit_with(&model, &scenario.inference, scenario.seed.wrapping_add(1 + rep as u64))?;
            let u = u5mr_posterior(&post, &model)?;
            let mut hits = 0usize;
            let (mut bl, mut bq) = (0.0, 0.0);
            for c in &u.cells {
                let h = model.target_combination(c.region, c.period)?;
                let truth: f64 = h.iter().map(|&(j, v)| v * x[j]).sum();
                bl += c.logit.median - truth;
                bq += c.q5.median - expit(truth);
                let q = expit(truth);
                if c.q5.lower <= q && q <= c.q5.upper {
                    hits += 1;
                }
            }
            let n = u.cells.len() as f64;
            let mean = post.latent_mean();
            let max_fit_gap =
                model.observations.iter().map(|o| (o.predictor(&mean) - o.y).abs()).fold(0.0, f64::max);
            Ok(RecoveryRow { rep, bias_logit: bl / n, bias_q5: bq / n, coverage: hits as f64 / n, max_fit_gap })
        })
        .collect();
    let mut rows = Vec::new();
    let mut n_failed = 0;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("recovery replicate failed: {e}");
                n_failed += 1;
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("every recovery replicate failed".into()));
    }
    let k = rows.len() as f64;
    let coverage = rows.iter().map(|r| r.coverage).sum::<f64>() / k;
    let sd = (rows.iter().map(|r| (r.coverage - coverage).powi(2)).sum::<f64>() / (k - 1.0).max(1.0)).sqrt();
    Ok(RecoveryTable {
        coverage,
        coverage_mcse: sd / k.sqrt(),
        bias_logit: rows.iter().map(|r| r.bias_logit).sum::<f64>() / k,
        bias_q5: rows.iter().map(|r| r.bias_q5).sum::<f64>() / k,
        rows,
        n_failed,
    })
}

pub fn write_recovery_table<W: Write>(writer: W, table: &RecoveryTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rep", "bias_logit", "bias_q5", "coverage", "max_fit_gap"])?;
    for r in &table.rows {
        w.write_record([
            r.rep.to_string(),
            r.bias_logit.to_string(),
            r.bias_q5.to_string(),
            r.coverage.to_string(),
            r.max_fit_gap.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}
