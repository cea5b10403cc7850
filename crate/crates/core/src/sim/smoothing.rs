use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::direct::DirectEstimate;
use crate::error::{Error, Result};
use crate::gmrf::StructureKind;
use crate::lgm::{AssembledModel, BlockPrecision};

/// Draws a latent field from the model's constrained prior with free
/// precisions `tau`. The intercept (any fixed-precision block named `mu`)
/// is set to `mu`; directions an intrinsic prior leaves flat are set to
/// zero, except that `gamma_slope` adds a centered linear trend to a
/// random-walk block.
pub fn draw_prior_field<R: Rng + ?Sized>(
    model: &AssembledModel,
    tau: &[f64],
    mu: f64,
    gamma_slope: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if tau.len() != model.n_hyper() {
        return Err(Error::InvalidArgument(format!("expected {} precisions, got {}", model.n_hyper(), tau.len())));
    }
    let mut x = vec![0.0; model.n_coef];
    for (k, b) in model.blocks.iter().enumerate() {
        let n = b.size();
        if b.name == "mu" {
            x[b.offset] = mu;
            continue;
        }
        let p = match b.precision {
            BlockPrecision::Fixed(p) => p,
            BlockPrecision::Free(_) => model.block_precision(k, tau),
        };
        let mut v = vec![0.0; n];
        if b.structure.kind == StructureKind::Iid {
            for vi in v.iter_mut() {
                *vi = rng.sample::<f64, _>(StandardNormal) / p.sqrt();
            }
            for g in &b.constraints {
                let m = g.iter().map(|&j| v[j]).sum::<f64>() / g.len() as f64;
                for &j in g {
                    v[j] -= m;
                }
            }
        } else {
            let eig = SymmetricEigen::new(b.structure.q.clone());
            let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            for (c, &l) in eig.eigenvalues.iter().enumerate() {
                if l > 1e-10 * lmax {
                    let z: f64 = rng.sample(StandardNormal);
                    let s = z / (p * l).sqrt();
                    for (vi, e) in v.iter_mut().zip(eig.eigenvectors.column(c).iter()) {
                        *vi += s * e;
                    }
                }
            }
            if matches!(b.structure.kind, StructureKind::Rw1 | StructureKind::Rw2) && gamma_slope != 0.0 {
                let mid = (n as f64 - 1.0) / 2.0;
                for (t, vi) in v.iter_mut().enumerate() {
                    *vi += gamma_slope * (t as f64 - mid);
                }
            }
        }
        x[b.range()].copy_from_slice(&v);
    }
    Ok(x)
}

/// New direct estimates for every observation of `model`: `y ~ N(z'x, V)`
/// with the model's variances, plus `shift(survey)` on the logit scale.
pub fn simulate_estimates<R: Rng + ?Sized>(
    model: &AssembledModel,
    x: &[f64],
    shift: impl Fn(usize) -> f64,
    rng: &mut R,
) -> Result<Vec<DirectEstimate>> {
    model
        .observations
        .iter()
        .map(|o| {
            let (Some(i), Some(t), Some(s)) = (o.key.region, o.key.period, o.key.survey) else {
                return Err(Error::InvalidArgument("observation without a region/period/survey key".into()));
            };
            let e: f64 = rng.sample(StandardNormal);
            Ok(DirectEstimate {
                region: i,
                period: t,
                survey: s,
                y: o.predictor(x) + shift(s) + e * o.v.sqrt(),
                v_des: o.v,
                v_jackknife: None,
                n_clusters: 0,
                n_child_months: 0,
            })
        })
        .collect()
}
