use super::bands::AgeBands;
use super::hazards::BandEstimates;
use crate::error::{Error, Result};
use crate::stats::expit;

/// Survival to 60 months, `prod_j (1 - expit(B_j))^{n_j}`.
fn survival(b_hat: &[f64], bands: &AgeBands) -> f64 {
    b_hat
        .iter()
        .zip(bands.lengths())
        .map(|(&b, &n)| n as f64 * (-expit(b)).ln_1p())
        .sum::<f64>()
        .exp()
}

/// `5q0 = 1 - prod_j (1 - expit(B_j))^{n_j}`.
pub fn u5mr_from_bands(b_hat: &[f64], bands: &AgeBands) -> f64 {
    1.0 - survival(b_hat, bands)
}

/// Gradient of `logit(5q0)` with respect to the band log-odds:
/// `n_j p_j / (1 - S)`.
pub fn delta_gradient(b_hat: &[f64], bands: &AgeBands) -> Vec<f64> {
    let q = u5mr_from_bands(b_hat, bands);
    b_hat
        .iter()
        .zip(bands.lengths())
        .map(|(&b, &n)| n as f64 * expit(b) / q)
        .collect()
}

/// Delta-method variance of `logit(5q0)`: `g' cov(B) g`.
pub fn delta_var_logit_u5mr(est: &BandEstimates, bands: &AgeBands) -> Result<f64> {
    let q = u5mr_from_bands(&est.b_hat, bands);
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Degenerate(format!("5q0 = {q} is on the boundary")));
    }
    let g = delta_gradient(&est.b_hat, bands);
    let j = g.len();
    let mut v = 0.0;
    for r in 0..j {
        for c in 0..j {
            if g[r] != 0.0 && g[c] != 0.0 {
                v += g[r] * est.cov[(r, c)] * g[c];
            }
        }
    }
    Ok(v.max(0.0))
}
