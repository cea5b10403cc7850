use std::io::Write;

use rayon::prelude::*;

use super::population::{simulate_population_rep, ChildrenPerHousehold, SimDesign};
use crate::direct::{
    delta_var_logit_u5mr, expand_child_months, jackknife_var_logit_u5mr, u5mr_from_bands, ClusterTable,
};
use crate::direct::fit_cluster_table;
use crate::error::{Error, Result};
use crate::stats::logit;

/// Default cluster counts and children per cluster of the coverage grid.
pub const DEFAULT_CLUSTERS: [usize; 4] = [5, 15, 30, 60];
pub const DEFAULT_CHILDREN: [usize; 2] = [10, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Estimators {
    pub delta: bool,
    pub jackknife: bool,
}

impl Default for Estimators {
    fn default() -> Self {
        Self { delta: true, jackknife: true }
    }
}

/// Empirical coverage of 95% Wald intervals on `logit(5q0)` for one design.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub clusters: usize,
    pub children_per_cluster: f64,
    pub n_reps: usize,
    pub n_dropped: usize,
    pub coverage_delta: Option<f64>,
    pub coverage_jackknife: Option<f64>,
    /// Binomial Monte Carlo standard errors of the coverages.
    pub mcse_delta: Option<f64>,
    pub mcse_jackknife: Option<f64>,
    /// Mean over replicates of `V_delta / V_jackknife`.
    pub mean_var_ratio: Option<f64>,
    pub mean_y: f64,
    pub target_logit: f64,
    pub design_q5: f64,
    pub target_q5: f64,
}

struct Replicate {
    y: f64,
    v_delta: f64,
    v_jack: f64,
}

fn replicate(design: &SimDesign, rep: u64, est: Estimators) -> Option<Replicate> {
    let recs = simulate_population_rep(design, rep).ok()?;
    let months = expand_child_months(&recs, &design.bands);
    let table = ClusterTable::from_months(&months, design.bands.len());
    if table.clusters_with_events() == 0 {
        return None;
    }
    let fit = fit_cluster_table(&table).ok()?;
    let q = u5mr_from_bands(&fit.b_hat, &design.bands);
    if !(q > 0.0 && q < 1.0) {
        return None;
    }
    let v_delta = if est.delta || est.jackknife { delta_var_logit_u5mr(&fit, &design.bands).ok()? } else { f64::NAN };
    let v_jack = if est.jackknife { jackknife_var_logit_u5mr(&table, &design.bands).ok()?.variance } else { f64::NAN };
    if (est.delta && !(v_delta > 0.0)) || (est.jackknife && !(v_jack > 0.0)) {
        return None;
    }
    Some(Replicate { y: logit(q), v_delta, v_jack })
}

fn children_per_cluster(design: &SimDesign) -> f64 {
    let per_household = match design.children_per_household {
        ChildrenPerHousehold::Fixed(n) => n as f64,
        ChildrenPerHousehold::OnePlusPoisson(m) => 1.0 + m,
    };
    per_household * design.households_per_cluster as f64
}

/// Runs `n_reps` replicates (in parallel; replicate `r` uses RNG stream `r`
/// of the design seed) and reports coverage of the population target.
/// Replicates without deaths or with a zero variance are dropped and
/// counted.
pub fn coverage_study(design: &SimDesign, n_reps: usize, estimators: Estimators) -> Result<CoverageRow> {
    design.validate()?;
    if n_reps < 100 {
        return Err(Error::InvalidArgument(format!("coverage study needs at least 100 replicates, got {n_reps}")));
    }
    let target_q5 = design.target_u5mr();
    let target = logit(target_q5);
    let reps: Vec<Option<Replicate>> =
        (0..n_reps as u64).into_par_iter().map(|r| replicate(design, r, estimators)).collect();
    let used: Vec<&Replicate> = reps.iter().flatten().collect();
    let n = used.len();
    if n == 0 {
        return Err(Error::Degenerate("every replicate was degenerate".into()));
    }
    let cover = |v: &dyn Fn(&Replicate) -> f64| -> (f64, f64) {
        let hits = used.iter().filter(|r| (r.y - target).abs() <= 1.96 * v(r).sqrt()).count() as f64;
        let p = hits / n as f64;
        (p, (p * (1.0 - p) / n as f64).sqrt())
    };
    let (cd, md) = if estimators.delta { let (a, b) = cover(&|r| r.v_delta); (Some(a), Some(b)) } else { (None, None) };
    let (cj, mj) =
        if estimators.jackknife { let (a, b) = cover(&|r| r.v_jack); (Some(a), Some(b)) } else { (None, None) };
    let ratio = (estimators.delta && estimators.jackknife)
        .then(|| used.iter().map(|r| r.v_delta / r.v_jack).sum::<f64>() / n as f64);
    Ok(CoverageRow {
        clusters: design.n_strata * design.clusters_per_stratum,
        children_per_cluster: children_per_cluster(design),
        n_reps,
        n_dropped: n_reps - n,
        coverage_delta: cd,
        coverage_jackknife: cj,
        mcse_delta: md,
        mcse_jackknife: mj,
        mean_var_ratio: ratio,
        mean_y: used.iter().map(|r| r.y).sum::<f64>() / n as f64,
        target_logit: target,
        design_q5: design.design_u5mr(),
        target_q5,
    })
}

/// Coverage over a grid of cluster counts and children per cluster (one
/// stratum, one child per household).
pub fn coverage_grid(
    base: &SimDesign,
    clusters: &[usize],
    children: &[usize],
    n_reps: usize,
    estimators: Estimators,
) -> Result<Vec<CoverageRow>> {
    let mut rows = Vec::new();
    for &c in clusters {
        for &k in children {
            let design = SimDesign {
                n_strata: 1,
                clusters_per_stratum: c,
                households_per_cluster: k,
                children_per_household: ChildrenPerHousehold::Fixed(1),
                ..base.clone()
            };
            rows.push(coverage_study(&design, n_reps, estimators)?);
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_coverage_table<W: Write>(writer: W, rows: &[CoverageRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "clusters",
        "children_per_cluster",
        "n_reps",
        "n_dropped",
        "coverage_delta",
        "mcse_delta",
        "coverage_jackknife",
        "mcse_jackknife",
        "mean_var_ratio",
        "mean_y",
        "target_logit",
        "design_q5",
        "target_q5",
    ])?;
    for r in rows {
        w.write_record([
            r.clusters.to_string(),
            r.children_per_cluster.to_string(),
            r.n_reps.to_string(),
            r.n_dropped.to_string(),
            opt(r.coverage_delta),
            opt(r.mcse_delta),
            opt(r.coverage_jackknife),
            opt(r.mcse_jackknife),
            opt(r.mean_var_ratio),
            r.mean_y.to_string(),
            r.target_logit.to_string(),
            r.design_q5.to_string(),
            r.target_q5.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn needs_enough_replicates() {
        assert!(coverage_study(&SimDesign::default(), 50, Estimators::default()).is_err());
    }

    #[test]
    fn thirty_clusters_cover() {
        let row = coverage_study(&SimDesign::default(), 400, Estimators::default()).unwrap();
        let cd = row.coverage_delta.unwrap();
        let cj = row.coverage_jackknife.unwrap();
        // 400 replicates: allow three binomial standard errors around [0.92, 0.97]
        let slack = 3.0 * row.mcse_delta.unwrap();
        assert!(cd > 0.92 - slack && cd < 0.97 + slack, "{row:?}");
        assert!(cj > 0.92 - slack && cj < 0.97 + slack, "{row:?}");
        assert!((row.mean_var_ratio.unwrap() - 1.0).abs() < 0.15);
    }

    #[test]
    fn table_has_header_and_rows() {
        let rows = coverage_grid(&SimDesign::default(), &[15], &[10], 100, Estimators::default()).unwrap();
        let mut buf = Vec::new();
        write_coverage_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("clusters,children_per_cluster"));
    }
}
