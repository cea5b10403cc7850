//! A bundled synthetic dataset shaped like a national survey programme:
//! 21 regions, six five-year periods (1980-2009), six household surveys
//! with retrospective birth histories and two surveillance sites that each
//! follow one region over the last three periods.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use super::population::DEFAULT_HAZARDS;
use crate::data::{ChildRecord, PeriodGrid, RegionGraph, SurveyEntry, SurveyKind, SurveyRegistry};
use crate::direct::AgeBands;
use crate::error::{Error, Result};
use crate::lgm::chain_rng;
use crate::stats::{expit, logit};

pub const SYNTHETIC_SEED: u64 = 20140601;

const ROWS: usize = 3;
const COLS: usize = 7;
/// (label, interview year, interview month).
const HOUSEHOLD_SURVEYS: [(&str, i32, u32); 6] = [
    ("DHS1992", 1992, 3),
    ("DHS1996", 1996, 9),
    ("DHS1999", 1999, 10),
    ("DHS2004", 2005, 1),
    ("MIS2007", 2008, 2),
    ("DHS2010", 2010, 6),
];
/// (label, region index).
const SITES: [(&str, usize); 2] = [("HDSS-N", 4), ("HDSS-S", 16)];
const CLUSTERS_URBAN: usize = 4;
const CLUSTERS_RURAL: usize = 8;
const CHILDREN_PER_CLUSTER: usize = 20;
const SITE_VILLAGES: usize = 20;
const SITE_BIRTHS_PER_VILLAGE_PERIOD: usize = 60;
const CLUSTER_SD: f64 = 0.25;

/// True `5q0` of one region and period (survey effects excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct TruthCell {
    pub region: usize,
    pub period: usize,
    pub q5: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<ChildRecord>,
    pub graph: RegionGraph,
    pub grid: PeriodGrid,
    pub registry: SurveyRegistry,
    pub truth: Vec<TruthCell>,
}

/// Lattice with rook adjacency plus one diagonal in every other square.
pub fn synthetic_graph() -> RegionGraph {
    let names = (1..=ROWS * COLS).map(|i| format!("R{i:02}")).collect();
    let mut pairs = Vec::new();
    for r in 0..ROWS {
        for c in 0..COLS {
            let k = r * COLS + c;
            if c + 1 < COLS {
                pairs.push((k, k + 1));
            }
            if r + 1 < ROWS {
                pairs.push((k, k + COLS));
                if c + 1 < COLS && (r + c) % 2 == 0 {
                    pairs.push((k, k + COLS + 1));
                }
            }
        }
    }
    RegionGraph::new(names, pairs).expect("valid synthetic graph")
}

/// Calendar shift `c` such that hazards `expit(logit(h_j) + c)` give `5q0 = q`.
fn hazard_shift(q: f64, bands: &AgeBands) -> f64 {
    let u5 = |c: f64| {
        1.0 - bands
            .lengths()
            .iter()
            .zip(DEFAULT_HAZARDS)
            .map(|(&n, h)| (1.0 - expit(logit(h) + c)).powi(n as i32))
            .product::<f64>()
    };
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if u5(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

struct Truth {
    /// Logit `5q0` per region and period, without survey effects.
    eta: Vec<Vec<f64>>,
    nu_s: Vec<f64>,
    nu_is: Vec<Vec<f64>>,
}

fn draw_truth<R: Rng>(rng: &mut R, n_surveys: usize) -> Truth {
    let n_i = ROWS * COLS;
    let mut n = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    let mu = logit(0.13);
    let gamma: Vec<f64> = (0..6).map(|t| 0.35 - 0.1 * t as f64 - 0.015 * (t * t) as f64).collect();
    let gbar = gamma.iter().sum::<f64>() / 6.0;
    let alpha: Vec<f64> = (0..6).map(|_| n(0.04)).collect();
    let theta: Vec<f64> = (0..n_i).map(|_| n(0.25)).collect();
    let phi: Vec<f64> = (0..n_i).map(|k| 0.12 * ((k % COLS) as f64 - 3.0) + 0.08 * ((k / COLS) as f64 - 1.0)).collect();
    let delta: Vec<Vec<f64>> = (0..n_i).map(|_| (0..6).map(|_| n(0.06)).collect()).collect();
    let nu_s = (0..n_surveys).map(|_| n(0.05)).collect();
    let nu_is = (0..n_i).map(|_| (0..n_surveys).map(|_| n(0.12)).collect()).collect();
    let eta = (0..n_i)
        .map(|i| (0..6).map(|t| mu + gamma[t] - gbar + alpha[t] + theta[i] + phi[i] + delta[i][t]).collect())
        .collect();
    Truth { eta, nu_s, nu_is }
}

/// Simulates one child born at `birth` (calendar month index) whose monthly
/// hazard depends on the calendar period of each month of life, censored at
/// `censor` months of age.
fn child_fate<R: Rng>(
    rng: &mut R,
    grid: &PeriodGrid,
    birth: i64,
    censor: i64,
    shifts: &[f64],
    monthly: &[f64],
    u: f64,
) -> (u8, bool) {
    let limit = censor.min(60);
    for m in 0..limit {
        let t = grid.period_of_month(birth + m).unwrap_or(shifts.len() - 1);
        let h = expit(logit(monthly[m as usize]) + shifts[t] + u);
        if rng.random::<f64>() < h {
            return ((m + 1) as u8, true);
        }
    }
    (limit as u8, false)
}

/// Generates the dataset deterministically from `seed`.
pub fn tanzania_like(seed: u64) -> Result<SyntheticDataset> {
    let graph = synthetic_graph();
    let grid = PeriodGrid::uniform(1980, 5, 6, 1)?;
    let bands = AgeBands::standard();
    let mut entries: Vec<SurveyEntry> = HOUSEHOLD_SURVEYS
        .iter()
        .map(|&(label, _, _)| SurveyEntry {
            label: label.to_string(),
            kind: SurveyKind::Household,
            regions: None,
            periods: None,
            renormalize: false,
        })
        .collect();
    for &(label, region) in &SITES {
        entries.push(SurveyEntry {
            label: label.to_string(),
            kind: SurveyKind::Surveillance,
            regions: Some(vec![region]),
            periods: Some(vec![3, 4, 5]),
            renormalize: false,
        });
    }
    let registry = SurveyRegistry::new(entries)?;
    let n_s = registry.len();
    let mut rng = chain_rng(seed, 0);
    let truth = draw_truth(&mut rng, n_s);
    let monthly: Vec<f64> = bands
        .lengths()
        .iter()
        .zip(DEFAULT_HAZARDS)
        .flat_map(|(&n, h)| std::iter::repeat_n(h, n as usize))
        .collect();
    // per region and survey, the hazard shift for each period
    let shifts = |i: usize, s: usize| -> Vec<f64> {
        (0..6).map(|t| hazard_shift(expit(truth.eta[i][t] + truth.nu_s[s] + truth.nu_is[i][s]), &bands)).collect()
    };
    let grid_start = grid.bounds()[0].0 as i64 * 12;
    let grid_end = grid.bounds()[5].1 as i64 * 12;
    let mut records = Vec::new();
    for (s, &(label, year, month)) in HOUSEHOLD_SURVEYS.iter().enumerate() {
        let interview = year as i64 * 12 + month as i64 - 1;
        let first = (interview - 15 * 12).max(grid_start);
        let last = interview.min(grid_end);
        for i in 0..graph.len() {
            let sh = shifts(i, s);
            let region = &graph.names()[i];
            for (stratum, n_clusters, base_weight) in [("U", CLUSTERS_URBAN, 0.6), ("R", CLUSTERS_RURAL, 1.3)] {
                for c in 0..n_clusters {
                    let u = CLUSTER_SD * rng.sample::<f64, _>(StandardNormal);
                    let weight = base_weight * rng.random_range(0.7..1.3);
                    for k in 0..CHILDREN_PER_CLUSTER {
                        let birth = rng.random_range(first..last);
                        let (age_end, died) = child_fate(&mut rng, &grid, birth, interview - birth, &sh, &monthly, u);
                        records.push(ChildRecord {
                            child_id: format!("{label}-{region}-{stratum}{c}-{k}"),
                            region: i,
                            survey: s,
                            birth_year: (birth / 12) as i32,
                            birth_month: (birth % 12 + 1) as u8,
                            birth_period: None,
                            age_end,
                            died,
                            weight: (weight * 1e6_f64).round() / 1e6,
                            stratum: format!("{region}-{stratum}"),
                            cluster: format!("{region}-{stratum}{c}"),
                        });
                    }
                }
            }
        }
    }
    for (k, &(label, region)) in SITES.iter().enumerate() {
        let s = HOUSEHOLD_SURVEYS.len() + k;
        let sh = shifts(region, s);
        for v in 0..SITE_VILLAGES {
            let u = CLUSTER_SD * rng.sample::<f64, _>(StandardNormal);
            for t in 3..6 {
                let (start, end) = grid.bounds()[t];
                for b in 0..SITE_BIRTHS_PER_VILLAGE_PERIOD {
                    let birth = rng.random_range(start as i64 * 12..end as i64 * 12);
                    let (age_end, died) = child_fate(&mut rng, &grid, birth, grid_end - birth, &sh, &monthly, u);
                    records.push(ChildRecord {
                        child_id: format!("{label}-v{v}-p{}-{b}", t + 1),
                        region,
                        survey: s,
                        birth_year: (birth / 12) as i32,
                        birth_month: (birth % 12 + 1) as u8,
                        birth_period: None,
                        age_end,
                        died,
                        weight: 1.0,
                        stratum: label.to_string(),
                        cluster: format!("{label}-v{v}"),
                    });
                }
            }
        }
    }
    let truth_cells = (0..graph.len())
        .flat_map(|i| (0..6).map(move |t| (i, t)))
        .map(|(i, t)| TruthCell { region: i, period: t, q5: expit(truth.eta[i][t]) })
        .collect();
    Ok(SyntheticDataset { records, graph, grid, registry, truth: truth_cells })
}

/// Adjacency as one `A B` pair per line.
pub fn write_adjacency<W: Write>(mut w: W, graph: &RegionGraph) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    writeln!(w, "# region adjacency, one neighbor pair per line").map_err(io)?;
    for (a, b) in graph.edges() {
        writeln!(w, "{} {}", graph.names()[a], graph.names()[b]).map_err(io)?;
    }
    Ok(())
}

/// Registry in the `survey,kind,regions,periods` format.
pub fn write_registry<W: Write>(w: W, registry: &SurveyRegistry, graph: &RegionGraph) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["survey", "kind", "regions", "periods"])?;
    for e in registry.entries() {
        let kind = match e.kind {
            SurveyKind::Household => "household",
            SurveyKind::Surveillance => "surveillance",
        };
        let regions = e
            .regions
            .as_ref()
            .map(|r| r.iter().map(|&i| graph.names()[i].clone()).collect::<Vec<_>>().join(";"))
            .unwrap_or_else(|| "*".into());
        let periods = e
            .periods
            .as_ref()
            .map(|p| p.iter().map(|t| (t + 1).to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_else(|| "*".into());
        w.write_record([e.label.as_str(), kind, &regions, &periods])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn write_truth<W: Write>(w: W, truth: &[TruthCell], graph: &RegionGraph) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["region", "period", "q5_true"])?;
    for c in truth {
        w.write_record([graph.names()[c.region].clone(), (c.period + 1).to_string(), c.q5.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// File names used by [`write_dataset`].
pub const CHILDREN_FILE: &str = "children.csv";
pub const ADJACENCY_FILE: &str = "adjacency.txt";
pub const REGISTRY_FILE: &str = "registry.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Writes the dataset's children, adjacency, registry and truth tables into
/// `dir`.
pub fn write_dataset(dataset: &SyntheticDataset, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let path = dir.join(name);
        std::fs::File::create(&path).map(std::io::BufWriter::new).map_err(|e| Error::io(&path, e))
    };
    crate::data::write_children(create(CHILDREN_FILE)?, &dataset.records, &dataset.graph, &dataset.registry)?;
    write_adjacency(create(ADJACENCY_FILE)?, &dataset.graph)?;
    write_registry(create(REGISTRY_FILE)?, &dataset.registry, &dataset.graph)?;
    write_truth(create(TRUTH_FILE)?, &dataset.truth, &dataset.graph)?;
    Ok(())
}
