use super::bands::AgeBands;
use super::delta::u5mr_from_bands;
use super::hazards::ClusterTable;
use crate::error::{Error, Result};
use crate::stats::logit;

#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeResult {
    pub variance: f64,
    /// Delete-one-cluster replicates of `logit(5q0)`, in cluster order.
    pub replicates: Vec<f64>,
    pub singleton_strata: usize,
}

fn logit_q5(table: &ClusterTable, bands: &AgeBands, multiplier: impl Fn(usize) -> f64) -> Result<f64> {
    let p = table.hazards_with(multiplier);
    if p.iter().any(|x| x.is_nan()) {
        return Err(Error::Degenerate("jackknife replicate lost all exposure in a band".into()));
    }
    let b: Vec<f64> = p.iter().map(|&x| logit(x)).collect();
    let q = u5mr_from_bands(&b, bands);
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Degenerate("jackknife replicate has 5q0 on the boundary".into()));
    }
    Ok(logit(q))
}

/// Stratified delete-one-cluster jackknife variance of `logit(5q0)`:
/// `sum_h (n_h - 1)/n_h sum_c (y_(hc) - ybar_(h))^2`, where `y_(hc)` drops
/// cluster `c` and scales the rest of stratum `h` by `n_h / (n_h - 1)`.
pub fn jackknife_var_logit_u5mr(table: &ClusterTable, bands: &AgeBands) -> Result<JackknifeResult> {
    let mut variance = 0.0;
    let mut replicates = vec![f64::NAN; table.clusters.len()];
    let mut singleton_strata = 0;
    for stratum in table.strata() {
        let n_h = stratum.len();
        if n_h < 2 {
            singleton_strata += 1;
            continue;
        }
        let scale = n_h as f64 / (n_h as f64 - 1.0);
        let mut ys = Vec::with_capacity(n_h);
        for &drop in &stratum {
            let y = logit_q5(table, bands, |k| {
                if k == drop {
                    0.0
                } else if stratum.contains(&k) {
                    scale
                } else {
                    1.0
                }
            })?;
            replicates[drop] = y;
            ys.push(y);
        }
        let ybar = ys.iter().sum::<f64>() / n_h as f64;
        variance += (n_h as f64 - 1.0) / n_h as f64 * ys.iter().map(|y| (y - ybar).powi(2)).sum::<f64>();
    }
    if singleton_strata > 0 {
        log::warn!("jackknife: {singleton_strata} single-cluster strata contribute no variance");
    }
    Ok(JackknifeResult { variance, replicates, singleton_strata })
}
