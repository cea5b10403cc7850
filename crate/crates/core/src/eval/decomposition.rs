use crate::gmrf::StructureKind;
use crate::lgm::{AssembledModel, LatentFieldPosterior};
use crate::stats::{quantile, variance};

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceShare {
    pub block: String,
    pub variance: f64,
    pub share: f64,
}

/// Share of the total variance carried by each free block. IID blocks
/// contribute the posterior median of `1/tau`; structured blocks the
/// empirical variance of their posterior-mean coefficients.
pub fn variance_decomposition(post: &LatentFieldPosterior, model: &AssembledModel) -> Vec<VarianceShare> {
    let mean = post.latent_mean();
    let mut rows: Vec<VarianceShare> = model
        .free_blocks()
        .iter()
        .enumerate()
        .map(|(h, &k)| {
            let b = &model.blocks[k];
            let variance = if b.structure.kind == StructureKind::Iid {
                let inv: Vec<f64> = if post.tau_samples.is_empty() {
                    post.eb.iter().map(|e| 1.0 / e.tau[h]).collect()
                } else {
                    post.tau_samples.iter().map(|t| 1.0 / t[h]).collect()
                };
                quantile(&inv, 0.5)
            } else {
                variance(&mean[b.range()])
            };
            VarianceShare { block: b.name.clone(), variance, share: 0.0 }
        })
        .collect();
    let total: f64 = rows.iter().map(|r| r.variance).sum();
    if total > 0.0 {
        rows.iter_mut().for_each(|r| r.share = r.variance / total);
    }
    rows
}
