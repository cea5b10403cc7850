use std::io::Write;

use rayon::prelude::*;

use super::evidence::log_evidence;
use super::scores::{cpo, dic};
use crate::data::{PeriodGrid, RegionGraph, SurveyRegistry};
use crate::direct::DirectEstimate;
use crate::error::{Error, Result};
use crate::lgm::{assemble, fit_eb, sample_eb, AssembledModel, EbOptions, LatentFieldPosterior, ModelSpec};

/// One row of a model comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub n_params: usize,
    pub log_evidence: f64,
    pub p_d: f64,
    pub d_bar: f64,
    pub dic: f64,
    pub lcpo: f64,
    pub n_unstable_cpo: usize,
}

/// Scores a posterior that carries both an EB fit and draws.
pub fn evaluate(model_id: &str, model: &AssembledModel, post: &LatentFieldPosterior) -> Result<EvalReport> {
    let d = dic(post, model)?;
    let c = cpo(post, model)?;
    Ok(EvalReport {
        model_id: model_id.to_string(),
        n_params: model.n_coef,
        log_evidence: log_evidence(post)?,
        p_d: d.p_d,
        d_bar: d.d_bar,
        dic: d.dic,
        lcpo: c.lcpo,
        n_unstable_cpo: c.n_unstable(),
    })
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub eb: EbOptions,
    pub draws: usize,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { eb: EbOptions::default(), draws: 1000, seed: 1 }
    }
}

/// Fits every spec by empirical Bayes, draws from the latent conditional at
/// the mode and scores the result. Rows follow the order of `specs`.
pub fn compare(
    specs: &[ModelSpec],
    data: &[DirectEstimate],
    grid: &PeriodGrid,
    graph: &RegionGraph,
    registry: &SurveyRegistry,
    opts: &CompareOptions,
) -> Result<Vec<EvalReport>> {
    specs
        .par_iter()
        .map(|spec| {
            let model = assemble(spec, data, grid, graph, registry)?;
            let mut post = fit_eb(&model, &opts.eb)?;
            sample_eb(&model, &mut post, opts.draws, opts.seed)?;
            evaluate(&spec.label(), &model, &post)
        })
        .collect()
}

/// Delimited comparison table with the lowest-DIC row flagged.
pub fn write_comparison_table<W: Write>(w: W, reports: &[EvalReport]) -> Result<()> {
    let best = reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.dic.total_cmp(&b.1.dic))
        .map(|(k, _)| k);
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["model", "n_params", "log_evidence", "pD", "D_bar", "DIC", "LCPO", "best_dic"])?;
    for (k, r) in reports.iter().enumerate() {
        w.write_record([
            r.model_id.clone(),
            r.n_params.to_string(),
            r.log_evidence.to_string(),
            r.p_d.to_string(),
            r.d_bar.to_string(),
            r.dic.to_string(),
            r.lcpo.to_string(),
            ((Some(k) == best) as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}
