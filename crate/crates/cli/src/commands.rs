use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use u5mr_core::data::{ingest_adjacency, ingest_children, ingest_registry, renormalize_weights, ColumnMap};
use u5mr_core::direct::{direct_estimates, read_direct_table, write_direct_table, AgeBands, DirectEstimate, DirectOptions};
use u5mr_core::eval::{
    compare, validate_loo_area_time, variance_decomposition, write_comparison_table, write_validation_table,
    CompareOptions, ValidationOptions,
};
use u5mr_core::lgm::{
    assemble, fit_eb, gibbs, project, sample_eb, u5mr_posterior, AssembledModel, EbOptions, LatentFieldPosterior,
    ModelSpec, U5mrPosterior,
};
use u5mr_core::sim::synthetic::{tanzania_like, write_dataset};
use u5mr_core::sim::{coverage_grid, write_coverage_table, Estimators};
use u5mr_core::{PeriodGrid, RegionGraph, SurveyRegistry};

use crate::config::{Method, RunConfig};

type Writer = csv::Writer<BufWriter<File>>;

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let path = out.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn csv_writer(out: &Path, name: &str) -> Result<Writer> {
    Ok(csv::Writer::from_writer(create(out, name)?))
}

struct Inputs {
    graph: RegionGraph,
    registry: SurveyRegistry,
    grid: PeriodGrid,
}

fn load_inputs(cfg: &RunConfig, why_adjacency: &str) -> Result<Inputs> {
    let graph = ingest_adjacency(cfg.input("adjacency", why_adjacency)?, None)?;
    let registry = ingest_registry(cfg.input("registry", "survey labels and coverage")?, &graph)?;
    Ok(Inputs { graph, registry, grid: cfg.grid.grid()? })
}

fn compute_direct(cfg: &RunConfig, inp: &Inputs) -> Result<u5mr_core::direct::DirectOutcome> {
    let path = cfg.input("children", "child records for direct estimation")?;
    let outcome = ingest_children(path, &ColumnMap::default(), &inp.graph, &inp.registry)?;
    if let Some(first) = outcome.rejected.first() {
        log::warn!("{} child records rejected; first: {:?}", outcome.rejected.len(), first);
    }
    let mut records = outcome.records;
    renormalize_weights(&mut records, &inp.registry);
    let opts = DirectOptions { jackknife: cfg.direct.jackknife, allow_unstable: cfg.direct.allow_unstable };
    Ok(direct_estimates(&records, &inp.grid, &AgeBands::standard(), &opts)?)
}

/// Direct estimates from `[data] direct` when given, otherwise computed
/// from the child records.
fn direct_for_model(cfg: &RunConfig, inp: &Inputs) -> Result<Vec<DirectEstimate>> {
    if cfg.data.direct.is_some() {
        let path = cfg.input("direct", "precomputed direct estimates")?;
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        return Ok(read_direct_table(f, &inp.graph, &inp.registry)?);
    }
    Ok(compute_direct(cfg, inp)?.estimates)
}

pub fn cmd_direct(cfg: &RunConfig) -> Result<()> {
    let inp = load_inputs(cfg, "region labels")?;
    let outcome = compute_direct(cfg, &inp)?;
    write_direct_table(create(&cfg.out, "direct.csv")?, &outcome.estimates, &inp.graph, &inp.registry)?;
    let mut w = csv_writer(&cfg.out, "direct_excluded.csv")?;
    w.write_record(["region", "period", "survey", "reason"])?;
    for e in &outcome.excluded {
        w.write_record([
            inp.graph.names()[e.region].clone(),
            (e.period + 1).to_string(),
            inp.registry.get(e.survey).label.clone(),
            e.reason.clone(),
        ])?;
    }
    w.flush()?;
    println!(
        "direct: {} estimates, {} cells excluded; tables in {}",
        outcome.estimates.len(),
        outcome.excluded.len(),
        cfg.out.display()
    );
    Ok(())
}

fn fit(cfg: &RunConfig, model: &AssembledModel) -> Result<LatentFieldPosterior> {
    Ok(match cfg.sampler.method {
        Method::Eb => {
            let mut post = fit_eb(model, &EbOptions::default())?;
            sample_eb(model, &mut post, cfg.sampler.draws, cfg.seed)?;
            post
        }
        Method::Gibbs => gibbs(model, &cfg.sampler.gibbs(cfg.seed))?,
    })
}

fn write_u5mr(w: &mut Writer, u: &U5mrPosterior, inp: &Inputs, forecast: bool) -> Result<()> {
    let mut header = vec!["region", "period"];
    if forecast {
        header.push("forecast");
    }
    header.extend([
        "q5_median", "q5_lower", "q5_upper", "q5_mean", "logit_median", "logit_lower", "logit_upper", "logit_var",
    ]);
    w.write_record(&header)?;
    let t_obs = inp.grid.n_periods();
    for c in &u.cells {
        let period = if c.period < t_obs { inp.grid.label(c.period) } else { inp.grid.forecast_label(c.period - t_obs + 1) };
        let mut row = vec![inp.graph.names()[c.region].clone(), period];
        if forecast {
            row.push(((c.period >= t_obs) as u8).to_string());
        }
        row.extend(
            [c.q5.median, c.q5.lower, c.q5.upper, c.q5.mean, c.logit.median, c.logit.lower, c.logit.upper, c.logit_var]
                .iter()
                .map(f64::to_string),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_fit(cfg: &RunConfig, spec: &ModelSpec) -> Result<()> {
    let t0 = Instant::now();
    let inp = load_inputs(cfg, "needed for the ICAR spatial block")?;
    let data = direct_for_model(cfg, &inp)?;
    let model = assemble(spec, &data, &inp.grid, &inp.graph, &inp.registry)?;
    let post = fit(cfg, &model)?;
    let label = spec.label();
    let u = u5mr_posterior(&post, &model)?;
    write_u5mr(&mut csv_writer(&cfg.out, &format!("u5mr_{label}.csv"))?, &u, &inp, false)?;

    let mut w = csv_writer(&cfg.out, &format!("precisions_{label}.csv"))?;
    w.write_record(["block", "tau_median", "tau_lower", "tau_upper", "sd_median", "ess"])?;
    for (h, name) in post.hyper_names.iter().enumerate() {
        let s = post.tau_summary(h);
        let ess = post.diagnostics.as_ref().map(|d| d.ess_tau[h].to_string()).unwrap_or_default();
        w.write_record([
            name.clone(),
            s.median.to_string(),
            s.lower.to_string(),
            s.upper.to_string(),
            (1.0 / s.median.sqrt()).to_string(),
            ess,
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&cfg.out, &format!("variance_{label}.csv"))?;
    w.write_record(["block", "variance", "share"])?;
    for s in variance_decomposition(&post, &model) {
        w.write_record([s.block, s.variance.to_string(), s.share.to_string()])?;
    }
    w.flush()?;

    if cfg.sampler.dump_draws {
        let mut w = csv_writer(&cfg.out, &format!("draws_{label}.csv"))?;
        let mut header = vec!["draw".to_string()];
        header.extend(post.hyper_names.iter().map(|n| format!("tau_{n}")));
        for b in &model.blocks {
            header.extend((0..b.size()).map(|k| format!("{}[{}]", b.name, k + 1)));
        }
        w.write_record(&header)?;
        for (d, (x, tau)) in post.samples.iter().zip(&post.tau_samples).enumerate() {
            let mut row = vec![(d + 1).to_string()];
            row.extend(tau.iter().chain(x).map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    println!(
        "fit {label}: {} observations, {} coefficients, {} draws; {:.2?}; tables in {}",
        model.observations.len(),
        model.n_coef,
        post.n_draws(),
        t0.elapsed(),
        cfg.out.display()
    );
    Ok(())
}

pub fn cmd_compare(cfg: &RunConfig, specs: &[ModelSpec]) -> Result<()> {
    let inp = load_inputs(cfg, "needed for the ICAR spatial block")?;
    let data = direct_for_model(cfg, &inp)?;
    let opts = CompareOptions { eb: EbOptions::default(), draws: cfg.sampler.draws, seed: cfg.seed };
    let reports = compare(specs, &data, &inp.grid, &inp.graph, &inp.registry, &opts)?;
    write_comparison_table(create(&cfg.out, "compare.csv")?, &reports)?;
    println!("{:<6} {:>8} {:>12} {:>9} {:>11} {:>11} {:>11}", "model", "params", "log p(y)", "pD", "D_bar", "DIC", "LCPO");
    for r in &reports {
        println!(
            "{:<6} {:>8} {:>12.3} {:>9.2} {:>11.2} {:>11.2} {:>11.2}",
            r.model_id, r.n_params, r.log_evidence, r.p_d, r.d_bar, r.dic, r.lcpo
        );
    }
    Ok(())
}

pub fn cmd_validate(cfg: &RunConfig, spec: &ModelSpec) -> Result<()> {
    let inp = load_inputs(cfg, "needed for the ICAR spatial block")?;
    let data = direct_for_model(cfg, &inp)?;
    let report = validate_loo_area_time(&data, spec, &inp.grid, &inp.graph, &inp.registry, &ValidationOptions::default())?;
    let label = spec.label();
    write_validation_table(create(&cfg.out, &format!("validation_{label}.csv"))?, &report, &inp.graph, &inp.grid, &inp.registry)?;
    let mut w = csv_writer(&cfg.out, &format!("validation_summary_{label}.csv"))?;
    w.write_record(["period", "n", "coverage"])?;
    println!("validation {label}: overall coverage {:.4} ({} held-out estimates, {} cells skipped)", report.coverage, report.cells.len(), report.skipped.len());
    for (t, rate) in report.per_period.iter().enumerate() {
        let n = report.cells.iter().filter(|c| c.period == t).count();
        let text = rate.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([inp.grid.label(t), n.to_string(), text])?;
        match rate {
            Some(r) => println!("  {}: {:.4} (n = {n})", inp.grid.label(t), r),
            None => println!("  {}: no held-out estimates", inp.grid.label(t)),
        }
    }
    w.write_record(["all".to_string(), report.cells.len().to_string(), report.coverage.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn cmd_project(cfg: &RunConfig, spec: &ModelSpec, horizon: usize) -> Result<()> {
    if horizon == 0 {
        bail!("projection horizon must be at least 1");
    }
    let inp = load_inputs(cfg, "needed for the ICAR spatial block")?;
    let data = direct_for_model(cfg, &inp)?;
    let model = assemble(spec, &data, &inp.grid, &inp.graph, &inp.registry)?;
    let post = fit(cfg, &model)?;
    let p = project(&post, &model, horizon, cfg.seed)?;
    let label = spec.label();
    write_u5mr(&mut csv_writer(&cfg.out, &format!("projection_{label}.csv"))?, &p, &inp, true)?;
    println!("project {label}: {horizon} period(s) ahead for {} regions; table in {}", inp.graph.len(), cfg.out.display());
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig, dataset: Option<&Path>) -> Result<()> {
    if let Some(dir) = dataset {
        let d = tanzania_like(cfg.seed)?;
        write_dataset(&d, dir)?;
        println!("simulate: synthetic dataset with {} children written to {}", d.records.len(), dir.display());
        return Ok(());
    }
    let s = &cfg.simulate;
    let est = Estimators { delta: true, jackknife: s.jackknife };
    let rows = coverage_grid(&s.design(cfg.seed), &s.clusters, &s.children, s.reps, est)?;
    write_coverage_table(create(&cfg.out, "coverage.csv")?, &rows)?;
    println!("{:>8} {:>9} {:>6} {:>12} {:>12} {:>10}", "clusters", "children", "reps", "cov_delta", "cov_jack", "var_ratio");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for r in &rows {
        println!(
            "{:>8} {:>9} {:>6} {:>12} {:>12} {:>10}",
            r.clusters,
            r.children_per_cluster,
            r.n_reps - r.n_dropped,
            fmt(r.coverage_delta),
            fmt(r.coverage_jackknife),
            fmt(r.mean_var_ratio)
        );
    }
    Ok(())
}
