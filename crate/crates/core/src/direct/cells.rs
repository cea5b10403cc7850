use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use super::bands::AgeBands;
use super::delta::{delta_var_logit_u5mr, u5mr_from_bands};
use super::hazards::{fit_cluster_table, ClusterStats, ClusterTable};
use super::jackknife::jackknife_var_logit_u5mr;
use crate::data::{ChildRecord, PeriodGrid, RegionGraph, SurveyRegistry};
use crate::error::{Error, Result};
use crate::stats::{expit, logit};

/// Direct estimate for one (region, period, survey) cell. Indices are
/// 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectEstimate {
    pub region: usize,
    pub period: usize,
    pub survey: usize,
    /// `logit(5q0_hat)`.
    pub y: f64,
    /// Delta-method design variance of `y`.
    pub v_des: f64,
    pub v_jackknife: Option<f64>,
    pub n_clusters: usize,
    pub n_child_months: usize,
}

impl DirectEstimate {
    pub fn q5(&self) -> f64 {
        expit(self.y)
    }

    /// `expit(y -/+ 1.96 sqrt(V_des))`.
    pub fn interval(&self) -> (f64, f64) {
        let h = 1.96 * self.v_des.sqrt();
        (expit(self.y - h), expit(self.y + h))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedCell {
    pub region: usize,
    pub period: usize,
    pub survey: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
#[derive(Default)]
pub struct DirectOptions {
    pub jackknife: bool,
    /// Keep cells with fewer than two clusters containing deaths.
    pub allow_unstable: bool,
}


#[derive(Debug, Clone)]
pub struct DirectOutcome {
    pub estimates: Vec<DirectEstimate>,
    pub excluded: Vec<ExcludedCell>,
}

type CellKey = (usize, usize, usize);

/// Splits every child's exposure by calendar period and age band, and
/// estimates each (region, period, survey) cell separately. Clusters are
/// nested within strata within a survey, so cluster labels are never pooled
/// across surveys.
pub fn direct_estimates(
    records: &[ChildRecord],
    grid: &PeriodGrid,
    bands: &AgeBands,
    options: &DirectOptions,
) -> Result<DirectOutcome> {
    let n_bands = bands.len();
    let mut cells: BTreeMap<CellKey, BTreeMap<(String, String), ClusterStats>> = BTreeMap::new();
    for r in records {
        let birth = r.birth_calendar_month();
        if grid.period_of_month(birth).is_none() {
            return Err(Error::Grid(format!("child `{}` born outside the period grid", r.child_id)));
        }
        let n = r.age_end as u32;
        for k in 0..n {
            let Some(t) = grid.period_of_month(birth + k as i64) else { continue };
            let cell = cells.entry((r.region, t, r.survey)).or_default();
            let stats = cell
                .entry((r.stratum.clone(), r.cluster.clone()))
                .or_insert_with(|| ClusterStats::new(&r.stratum, &r.cluster, n_bands));
            let j = bands.band_of(k);
            stats.exposure[j] += r.weight;
            stats.months += 1;
            if r.died && k + 1 == n {
                stats.deaths[j] += r.weight;
            }
        }
    }

    let results: Vec<std::result::Result<DirectEstimate, ExcludedCell>> = cells
        .into_par_iter()
        .map(|((region, period, survey), clusters)| {
            let table = ClusterTable { n_bands, clusters: clusters.into_values().collect() };
            let exclude = |reason: String| ExcludedCell { region, period, survey, reason };
            estimate_cell(&table, bands, options)
                .map(|(y, v_des, v_jackknife)| DirectEstimate {
                    region,
                    period,
                    survey,
                    y,
                    v_des,
                    v_jackknife,
                    n_clusters: table.clusters.len(),
                    n_child_months: table.n_child_months(),
                })
                .map_err(exclude)
        })
        .collect();

    let mut estimates = Vec::new();
    let mut excluded = Vec::new();
    for r in results {
        match r {
            Ok(e) => estimates.push(e),
            Err(x) => excluded.push(x),
        }
    }
    Ok(DirectOutcome { estimates, excluded })
}

fn estimate_cell(
    table: &ClusterTable,
    bands: &AgeBands,
    options: &DirectOptions,
) -> std::result::Result<(f64, f64, Option<f64>), String> {
    let total_deaths: f64 = table.clusters.iter().flat_map(|c| c.deaths.iter()).sum();
    if total_deaths == 0.0 {
        return Err("zero-deaths cell".into());
    }
    if table.clusters_with_events() < 2 && !options.allow_unstable {
        return Err("unstable: fewer than 2 clusters with deaths".into());
    }
    let est = fit_cluster_table(table).map_err(|e| e.to_string())?;
    let q = u5mr_from_bands(&est.b_hat, bands);
    let v = delta_var_logit_u5mr(&est, bands).map_err(|e| e.to_string())?;
    if !(v > 0.0) && !options.allow_unstable {
        return Err("zero design variance".into());
    }
    let jk = if options.jackknife {
        Some(jackknife_var_logit_u5mr(table, bands).map_err(|e| e.to_string())?.variance)
    } else {
        None
    };
    Ok((logit(q), v, jk))
}

const DIRECT_HEADER: [&str; 11] = [
    "region", "period", "survey", "y_logit", "V_des", "V_jackknife", "n_clusters", "n_child_months",
    "q5_hat", "ci_lo", "ci_hi",
];

/// Writes estimates with region and survey labels and 1-based periods.
pub fn write_direct_table<W: Write>(
    writer: W,
    estimates: &[DirectEstimate],
    graph: &RegionGraph,
    registry: &SurveyRegistry,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DIRECT_HEADER)?;
    for e in estimates {
        let (lo, hi) = e.interval();
        w.write_record([
            graph.names()[e.region].clone(),
            (e.period + 1).to_string(),
            registry.get(e.survey).label.clone(),
            e.y.to_string(),
            e.v_des.to_string(),
            e.v_jackknife.map(|v| v.to_string()).unwrap_or_default(),
            e.n_clusters.to_string(),
            e.n_child_months.to_string(),
            e.q5().to_string(),
            lo.to_string(),
            hi.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn read_direct_table<R: Read>(
    reader: R,
    graph: &RegionGraph,
    registry: &SurveyRegistry,
) -> Result<Vec<DirectEstimate>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (cr, cp, cs, cy, cv) = (col("region")?, col("period")?, col("survey")?, col("y_logit")?, col("V_des")?);
    let cj = headers.iter().position(|h| h == "V_jackknife");
    let cn = headers.iter().position(|h| h == "n_clusters");
    let cm = headers.iter().position(|h| h == "n_child_months");
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let bad = |message: String| Error::InvalidRow { row, message };
        let region = graph.index_of(&rec[cr]).ok_or_else(|| bad(format!("unknown region `{}`", &rec[cr])))?;
        let survey = registry.index_of(&rec[cs]).ok_or_else(|| bad(format!("unknown survey `{}`", &rec[cs])))?;
        let period: usize = rec[cp].parse().map_err(|_| bad("bad period".into()))?;
        if period == 0 {
            return Err(bad("periods are 1-based".into()));
        }
        let num = |c: usize| rec[c].parse::<f64>().map_err(|_| bad(format!("cannot parse `{}`", &rec[c])));
        let v_des = num(cv)?;
        if !(v_des > 0.0) {
            return Err(bad("V_des must be positive".into()));
        }
        out.push(DirectEstimate {
            region,
            period: period - 1,
            survey,
            y: num(cy)?,
            v_des,
            v_jackknife: cj.and_then(|c| rec[c].parse().ok()),
            n_clusters: cn.and_then(|c| rec[c].parse().ok()).unwrap_or(0),
            n_child_months: cm.and_then(|c| rec[c].parse().ok()).unwrap_or(0),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn child(id: usize, region: usize, survey: usize, cluster: &str, age_end: u8, died: bool) -> ChildRecord {
        ChildRecord {
            child_id: id.to_string(),
            region,
            survey,
            birth_year: 1990,
            birth_month: 1,
            birth_period: None,
            age_end,
            died,
            weight: 1.0 + (id % 3) as f64,
            stratum: "s".into(),
            cluster: cluster.into(),
        }
    }

    fn sample(survey: usize) -> Vec<ChildRecord> {
        (0..200)
            .map(|k| {
                let died = k % 9 == 0;
                let age = if died { (k % 40 + 1) as u8 } else { 60 };
                child(k + 1000 * survey, 0, survey, &format!("c{}", k % 6), age, died)
            })
            .collect()
    }

    #[test]
    fn zero_death_cell_excluded() {
        let grid = PeriodGrid::uniform(1990, 5, 2, 0).unwrap();
        let recs: Vec<ChildRecord> = (0..20).map(|k| child(k, 0, 0, "a", 12, false)).collect();
        let out = direct_estimates(&recs, &grid, &AgeBands::standard(), &DirectOptions::default()).unwrap();
        assert!(out.estimates.is_empty());
        assert_eq!(out.excluded[0].reason, "zero-deaths cell");
    }

    #[test]
    fn two_surveys_same_cell() {
        let grid = PeriodGrid::uniform(1990, 5, 2, 0).unwrap();
        let mut recs = sample(0);
        recs.extend(sample(1));
        let out = direct_estimates(&recs, &grid, &AgeBands::standard(), &DirectOptions::default()).unwrap();
        let first: Vec<_> = out.estimates.iter().filter(|e| e.period == 0).collect();
        assert_eq!(first.len(), 2);
        assert_ne!(first[0].survey, first[1].survey);
    }

    #[test]
    fn scale_invariance() {
        let grid = PeriodGrid::uniform(1990, 5, 2, 0).unwrap();
        let opts = DirectOptions { jackknife: true, ..Default::default() };
        let recs = sample(0);
        let scaled: Vec<ChildRecord> = recs.iter().cloned().map(|mut r| { r.weight *= 37.5; r }).collect();
        let a = direct_estimates(&recs, &grid, &AgeBands::standard(), &opts).unwrap();
        let b = direct_estimates(&scaled, &grid, &AgeBands::standard(), &opts).unwrap();
        assert_eq!(a.estimates.len(), b.estimates.len());
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert!((x.y - y.y).abs() < 1e-12);
            assert!(((x.v_des - y.v_des) / x.v_des).abs() < 1e-10);
            assert!(((x.v_jackknife.unwrap() - y.v_jackknife.unwrap()) / x.v_des).abs() < 1e-10);
        }
    }

    #[test]
    fn band_without_exposure_excluded() {
        let grid = PeriodGrid::uniform(1990, 5, 2, 0).unwrap();
        let recs: Vec<ChildRecord> = (0..40).map(|k| child(k, 0, 0, &format!("c{}", k % 4), 30, k % 5 == 0)).collect();
        let out = direct_estimates(&recs, &grid, &AgeBands::standard(), &DirectOptions::default()).unwrap();
        assert!(out.estimates.is_empty());
        assert!(out.excluded[0].reason.contains("no exposure"));
    }

    #[test]
    fn unstable_cell_flag() {
        let grid = PeriodGrid::uniform(1990, 5, 2, 0).unwrap();
        let mut recs: Vec<ChildRecord> = (0..30).map(|k| child(k, 0, 0, if k < 15 { "a" } else { "b" }, 60, false)).collect();
        recs[3].died = true;
        recs[3].age_end = 5;
        let out = direct_estimates(&recs, &grid, &AgeBands::standard(), &DirectOptions::default()).unwrap();
        assert!(out.excluded[0].reason.starts_with("unstable"));
        let opts = DirectOptions { allow_unstable: true, ..Default::default() };
        let out = direct_estimates(&recs, &grid, &AgeBands::standard(), &opts).unwrap();
        assert_eq!(out.estimates.len(), 1);
    }

    #[test]
    fn table_round_trip() {
        let grid = PeriodGrid::uniform(1990, 5, 2, 0).unwrap();
        let g = RegionGraph::path(2);
        let reg = SurveyRegistry::households(2);
        let opts = DirectOptions { jackknife: true, ..Default::default() };
        let out = direct_estimates(&sample(1), &grid, &AgeBands::standard(), &opts).unwrap();
        let mut buf = Vec::new();
        write_direct_table(&mut buf, &out.estimates, &g, &reg).unwrap();
        let back = read_direct_table(buf.as_slice(), &g, &reg).unwrap();
        assert_eq!(back, out.estimates);
    }
}
