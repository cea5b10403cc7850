use std::io::Write;

use rayon::prelude::*;

use crate::data::{PeriodGrid, RegionGraph, SurveyRegistry};
use crate::direct::DirectEstimate;
use crate::error::{Error, Result};
use crate::lgm::{assemble, fit_eb, latent_conditional, EbOptions, ModelSpec};

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub eb: EbOptions,
    /// Normal quantile for the interval on the logit scale.
    pub z: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { eb: EbOptions::default(), z: 1.96 }
    }
}

/// One held-out survey observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCell {
    pub region: usize,
    pub period: usize,
    pub survey: usize,
    pub y: f64,
    pub v_des: f64,
    /// Posterior mean and variance of `logit 5q0` from the refit.
    pub mean: f64,
    pub post_var: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedCell {
    pub region: usize,
    pub period: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub cells: Vec<ValidationCell>,
    pub skipped: Vec<SkippedCell>,
    pub coverage: f64,
    /// Coverage per period; `None` when no observation was held out there.
    pub per_period: Vec<Option<f64>>,
}

fn rate(cells: &[&ValidationCell]) -> Option<f64> {
    (!cells.is_empty()).then(|| cells.iter().filter(|c| c.covered).count() as f64 / cells.len() as f64)
}

/// Removes each region-period cell in turn, refits by empirical Bayes and
/// checks whether each held-out estimate falls in
/// `mean +- z sqrt(post_var + v_des)`.
pub fn validate_loo_area_time(
    data: &[DirectEstimate],
    spec: &ModelSpec,
    grid: &PeriodGrid,
    graph: &RegionGraph,
    registry: &SurveyRegistry,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    if graph.len() < 2 || grid.n_periods() < 2 {
        return Err(Error::InvalidArgument("validation needs at least two regions and two periods".into()));
    }
    let model = assemble(spec, data, grid, graph, registry)?;
    let full = fit_eb(&model, &opts.eb)?;
    let theta = full.eb.as_ref().map(|e| e.theta.clone());
    let eb = EbOptions { init: theta, ..opts.eb.clone() };
    let cells: Vec<(usize, usize)> = (0..graph.len()).flat_map(|i| (0..grid.n_periods()).map(move |t| (i, t))).collect();
    let results: Vec<std::result::Result<Vec<ValidationCell>, SkippedCell>> = cells
        .par_iter()
        .map(|&(i, t)| {
            let skip = |reason: String| SkippedCell { region: i, period: t, reason };
            let rows = model.rows_for_cell(i, t);
            if rows.is_empty() {
                return Err(skip("no observations".into()));
            }
            let refit = || -> Result<(f64, f64)> {
                let reduced = model.without_observations(&rows)?;
                let post = fit_eb(&reduced, &eb)?;
                let tau = &post.eb.as_ref().expect("EB fit").tau;
                let cond = latent_conditional(&reduced, tau)?;
                Ok(cond.linear_combination(&reduced.target_combination(i, t)?))
            };
            let (mean, post_var) = refit().map_err(|e| skip(format!("refit failed: {e}")))?;
            Ok(rows
                .iter()
                .map(|&r| {
                    let o = &model.observations[r];
                    let half = opts.z * (post_var + o.v).sqrt();
                    ValidationCell {
                        region: i,
                        period: t,
                        survey: o.key.survey.unwrap_or(0),
                        y: o.y,
                        v_des: o.v,
                        mean,
                        post_var,
                        covered: (o.y - mean).abs() <= half,
                    }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(c) => out.extend(c),
            Err(s) => {
                log::debug!("validation skipped cell ({}, {}): {}", s.region, s.period, s.reason);
                skipped.push(s)
            }
        }
    }
    let all: Vec<&ValidationCell> = out.iter().collect();
    let coverage = rate(&all).ok_or_else(|| Error::Degenerate("no cell could be validated".into()))?;
    let per_period = (0..grid.n_periods())
        .map(|t| rate(&out.iter().filter(|c| c.period == t).collect::<Vec<_>>()))
        .collect();
    Ok(ValidationReport { cells: out, skipped, coverage, per_period })
}

/// One row per held-out observation.
pub fn write_validation_table<W: Write>(
    w: W,
    report: &ValidationReport,
    graph: &RegionGraph,
    grid: &PeriodGrid,
    registry: &SurveyRegistry,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["region", "period", "survey", "y", "v_des", "mean", "post_var", "lower", "upper", "covered"])?;
    for c in &report.cells {
        let half = 1.96 * (c.post_var + c.v_des).sqrt();
        w.write_record([
            graph.names()[c.region].clone(),
            grid.label(c.period),
            registry.entries()[c.survey].label.clone(),
            c.y.to_string(),
            c.v_des.to_string(),
            c.mean.to_string(),
            c.post_var.to_string(),
            (c.mean - half).to_string(),
            (c.mean + half).to_string(),
            (c.covered as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}
