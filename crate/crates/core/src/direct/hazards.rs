use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::bands::ChildMonth;
use crate::error::{Error, Result};
use crate::stats::{expit, logit};

/// Weighted deaths and weighted exposure per age band for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub stratum: String,
    pub cluster: String,
    pub deaths: Vec<f64>,
    pub exposure: Vec<f64>,
    /// Unweighted child-months.
    pub months: usize,
}

impl ClusterStats {
    pub fn new(stratum: &str, cluster: &str, n_bands: usize) -> Self {
        Self {
            stratum: stratum.to_string(),
            cluster: cluster.to_string(),
            deaths: vec![0.0; n_bands],
            exposure: vec![0.0; n_bands],
            months: 0,
        }
    }

    pub fn has_events(&self) -> bool {
        self.deaths.iter().any(|&d| d > 0.0)
    }
}

/// Cluster-level sufficient statistics of a set of child-months. The
/// saturated band model's estimator and its sandwich depend on the data only
/// through these totals.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTable {
    pub n_bands: usize,
    pub clusters: Vec<ClusterStats>,
}

impl ClusterTable {
    pub fn from_months(months: &[ChildMonth], n_bands: usize) -> Self {
        let mut map: BTreeMap<(&str, &str), ClusterStats> = BTreeMap::new();
        for m in months {
            let c = map
                .entry((&m.stratum, &m.cluster))
                .or_insert_with(|| ClusterStats::new(&m.stratum, &m.cluster, n_bands));
            c.exposure[m.band] += m.weight;
            if m.event {
                c.deaths[m.band] += m.weight;
            }
            c.months += 1;
        }
        Self { n_bands, clusters: map.into_values().collect() }
    }

    pub fn n_child_months(&self) -> usize {
        self.clusters.iter().map(|c| c.months).sum()
    }

    pub fn clusters_with_events(&self) -> usize {
        self.clusters.iter().filter(|c| c.has_events()).count()
    }

    /// Clusters grouped by stratum, as index lists into `clusters`.
    pub fn strata(&self) -> Vec<Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (k, c) in self.clusters.iter().enumerate() {
            map.entry(&c.stratum).or_default().push(k);
        }
        map.into_values().collect()
    }

    /// Band hazards from cluster totals, with per-cluster multipliers on the
    /// weights.
    pub(crate) fn hazards_with(&self, multiplier: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut d = vec![0.0; self.n_bands];
        let mut e = vec![0.0; self.n_bands];
        for (k, c) in self.clusters.iter().enumerate() {
            let m = multiplier(k);
            if m == 0.0 {
                continue;
            }
            for j in 0..self.n_bands {
                d[j] += m * c.deaths[j];
                e[j] += m * c.exposure[j];
            }
        }
        d.iter().zip(&e).map(|(&d, &e)| if e > 0.0 { d / e } else { f64::NAN }).collect()
    }
}

/// Pseudo-MLE of the logit monthly hazard per age band and its design-based
/// (sandwich) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEstimates {
    /// `logit(p_hat_j)`; `-inf` for a band without deaths.
    pub b_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// Bands with zero weighted deaths.
    pub zero_death_bands: Vec<usize>,
    /// Strata holding a single cluster; they contribute no variance.
    pub singleton_strata: usize,
}

/// Closed-form weighted hazards with the Binder sandwich covariance
/// `A^-1 V A^-1`. `A` is the weighted information (diagonal for the
/// saturated band model) and `V` the with-replacement between-cluster
/// covariance of cluster score totals, with the `n_h / (n_h - 1)` factor in
/// each stratum.
pub fn fit_weighted_hazards(months: &[ChildMonth], n_bands: usize) -> Result<BandEstimates> {
    fit_cluster_table(&ClusterTable::from_months(months, n_bands))
}

/// Closed-form estimator and sandwich from cluster totals.
pub fn fit_cluster_table(table: &ClusterTable) -> Result<BandEstimates> {
    let j_count = table.n_bands;
    let p_hat = table.hazards_with(|_| 1.0);
    if let Some(j) = p_hat.iter().position(|p| p.is_nan()) {
        return Err(Error::Degenerate(format!("age band {} has no exposure", j + 1)));
    }
    let b_hat: Vec<f64> = p_hat.iter().map(|&p| logit(p)).collect();
    let zero_death_bands: Vec<usize> = (0..j_count).filter(|&j| p_hat[j] == 0.0).collect();

    let mut info = vec![0.0; j_count];
    for c in &table.clusters {
        for j in 0..j_count {
            info[j] += c.exposure[j] * p_hat[j] * (1.0 - p_hat[j]);
        }
    }

    let mut v = DMatrix::<f64>::zeros(j_count, j_count);
    let mut singleton_strata = 0;
    for stratum in table.strata() {
        let n_h = stratum.len();
        if n_h < 2 {
            singleton_strata += 1;
            continue;
        }
        let scores: Vec<DVector<f64>> = stratum
            .iter()
            .map(|&k| {
                let c = &table.clusters[k];
                DVector::from_fn(j_count, |j, _| c.deaths[j] - p_hat[j] * c.exposure[j])
            })
            .collect();
        let mean = scores.iter().fold(DVector::zeros(j_count), |acc, u| acc + u) / n_h as f64;
        let factor = n_h as f64 / (n_h as f64 - 1.0);
        for u in &scores {
            let d = u - &mean;
            v += factor * &d * d.transpose();
        }
    }
    if singleton_strata > 0 {
        log::warn!("{singleton_strata} strata with a single cluster contribute no variance");
    }

    let inv_a: Vec<f64> = info.iter().map(|&a| if a > 0.0 { 1.0 / a } else { 0.0 }).collect();
    let cov = DMatrix::from_fn(j_count, j_count, |r, c| inv_a[r] * v[(r, c)] * inv_a[c]);
    Ok(BandEstimates { b_hat, p_hat, cov, zero_death_bands, singleton_strata })
}

/// Solves the weighted score equations of the band-factor logistic model by
/// Newton-Raphson over the child-months themselves. The saturated design
/// makes the closed form in [`fit_weighted_hazards`] exact; this solver is
/// the general route and serves as a cross-check. Bands with no deaths have
/// no finite solution and are reported as `-inf`.
pub fn fit_weighted_hazards_newton(months: &[ChildMonth], n_bands: usize) -> Result<Vec<f64>> {
    let mut has_death = vec![false; n_bands];
    for m in months {
        has_death[m.band] |= m.event;
    }
    let active: Vec<usize> = (0..n_bands).filter(|&j| has_death[j]).collect();
    let slot: Vec<Option<usize>> = (0..n_bands).map(|j| active.iter().position(|&a| a == j)).collect();
    let k = active.len();
    let mut beta = DVector::<f64>::zeros(k);
    for _ in 0..100 {
        let mut score = DVector::<f64>::zeros(k);
        let mut info = DMatrix::<f64>::zeros(k, k);
        for m in months {
            let Some(s) = slot[m.band] else { continue };
            let p = expit(beta[s]);
            let y = if m.event { 1.0 } else { 0.0 };
            score[s] += m.weight * (y - p);
            info[(s, s)] += m.weight * p * (1.0 - p);
        }
        let step = info
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?
            .solve(&score);
        beta += &step;
        if step.amax() < 1e-12 {
            return Ok((0..n_bands)
                .map(|j| slot[j].map_or(f64::NEG_INFINITY, |s| beta[s]))
                .collect());
        }
    }
    Err(Error::NoConvergence { iterations: 100, best_value: f64::NAN, best_point: beta.iter().copied().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn month(band: usize, event: bool, weight: f64, cluster: &str) -> ChildMonth {
        ChildMonth { band, event, weight, stratum: Arc::from("s"), cluster: Arc::from(cluster) }
    }

    #[test]
    fn two_deaths_in_hundred_months() {
        let months: Vec<ChildMonth> = (0..100)
            .map(|k| month(0, k < 2, 1.0, if k % 2 == 0 { "a" } else { "b" }))
            .collect();
        let est = fit_weighted_hazards(&months, 1).unwrap();
        assert!((est.p_hat[0] - 0.02).abs() < 1e-15);
        assert!((est.b_hat[0] - (-3.891_820_298_110_627)).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_match_unweighted_fit() {
        let mk = |w: f64| -> Vec<ChildMonth> {
            (0..300).map(|k| month(k % 3, k % 17 == 0, w, if k % 5 < 2 { "a" } else { "b" })).collect()
        };
        let a = fit_weighted_hazards(&mk(1.0), 3).unwrap();
        let b = fit_weighted_hazards(&mk(7.3), 3).unwrap();
        for j in 0..3 {
            assert!((a.b_hat[j] - b.b_hat[j]).abs() < 1e-12);
        }
        assert!((a.cov.clone() - b.cov.clone()).amax() < 1e-12);
    }

    #[test]
    fn identical_clusters_have_zero_covariance() {
        let mut months = Vec::new();
        for cl in ["a", "b"] {
            for k in 0..50 {
                months.push(month(k % 2, k == 7 || k == 8, 1.0, cl));
            }
        }
        let est = fit_weighted_hazards(&months, 2).unwrap();
        assert!(est.cov.amax() < 1e-15);
    }

    #[test]
    fn newton_matches_closed_form() {
        let months: Vec<ChildMonth> = (0..600)
            .map(|k| month(k % 3, k % 23 == 0 || k % 31 == 1, 1.0 + (k % 7) as f64 * 0.4, "a"))
            .collect();
        let closed = fit_weighted_hazards(&months, 3).unwrap();
        let newton = fit_weighted_hazards_newton(&months, 3).unwrap();
        for j in 0..3 {
            assert!((closed.b_hat[j] - newton[j]).abs() < 1e-10, "{j}");
        }
    }

    #[test]
    fn zero_death_band_flagged() {
        let months: Vec<ChildMonth> = (0..40).map(|k| month(k % 2, k == 2, 1.0, "a")).collect();
        let est = fit_weighted_hazards(&months, 2).unwrap();
        assert_eq!(est.zero_death_bands, vec![1]);
        assert_eq!(est.b_hat[1], f64::NEG_INFINITY);
        assert_eq!(est.singleton_strata, 1);
        let newton = fit_weighted_hazards_newton(&months, 2).unwrap();
        assert_eq!(newton[1], f64::NEG_INFINITY);
    }

    #[test]
    fn sandwich_matches_hand_computation() {
        // one band, one stratum, three clusters with (deaths, exposure)
        let data = [(1.0, 10.0), (0.0, 20.0), (3.0, 30.0)];
        let mut months = Vec::new();
        for (c, &(d, e)) in data.iter().enumerate() {
            let name = format!("c{c}");
            for k in 0..e as usize {
                months.push(month(0, k < d as usize, 1.0, &name));
            }
        }
        let est = fit_weighted_hazards(&months, 1).unwrap();
        let p = 4.0 / 60.0;
        let u: Vec<f64> = data.iter().map(|&(d, e)| d - p * e).collect();
        let ubar = u.iter().sum::<f64>() / 3.0;
        let v = 1.5 * u.iter().map(|x| (x - ubar).powi(2)).sum::<f64>();
        let a = 60.0 * p * (1.0 - p);
        assert!((est.cov[(0, 0)] - v / (a * a)).abs() < 1e-15);
    }
}
