use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::data::ChildRecord;
use crate::direct::AgeBands;
use crate::error::{Error, Result};
use crate::lgm::chain_rng;
use crate::stats::{expit, logit};

/// Number of children in each household.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChildrenPerHousehold {
    Fixed(usize),
    /// One plus a Poisson count with this mean.
    OnePlusPoisson(f64),
}

/// How design weights are attached to sampled clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    /// Clusters sampled at random from the population, unit weights.
    Equal,
    /// High-mortality clusters oversampled: sampled cluster effects follow
    /// the population law tilted by `exp(strength * u)` and carry weights
    /// proportional to `exp(-strength * u)`, which undoes the tilt.
    Informative { strength: f64 },
}

/// Clustered household sample with band-specific monthly hazards and a
/// normal cluster effect on the logit hazard.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub n_strata: usize,
    pub clusters_per_stratum: usize,
    pub households_per_cluster: usize,
    pub children_per_household: ChildrenPerHousehold,
    pub bands: AgeBands,
    /// Monthly hazard per band.
    pub hazards: Vec<f64>,
    /// Standard deviation of the cluster effect on the logit hazard.
    pub cluster_sd: f64,
    pub weights: WeightScheme,
    pub seed: u64,
}

/// Monthly hazards giving `5q0` of about 0.117, front-loaded as in
/// high-mortality settings.
pub const DEFAULT_HAZARDS: [f64; 6] = [0.03, 0.004, 0.002, 0.001, 0.0007, 0.0005];

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            n_strata: 1,
            clusters_per_stratum: 30,
            households_per_cluster: 25,
            children_per_household: ChildrenPerHousehold::Fixed(2),
            bands: AgeBands::standard(),
            hazards: DEFAULT_HAZARDS.to_vec(),
            cluster_sd: 0.3,
            weights: WeightScheme::Equal,
            seed: 1,
        }
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n_strata == 0 || self.clusters_per_stratum == 0 || self.households_per_cluster == 0 {
            return Err(Error::InvalidArgument("design counts must be positive".into()));
        }
        match self.children_per_household {
            ChildrenPerHousehold::Fixed(0) => {
                return Err(Error::InvalidArgument("children per household must be positive".into()))
            }
            ChildrenPerHousehold::OnePlusPoisson(m) if !(m >= 0.0) => {
                return Err(Error::InvalidArgument("Poisson mean must be non-negative".into()))
            }
            _ => {}
        }
        if self.hazards.len() != self.bands.len() {
            return Err(Error::InvalidArgument(format!(
                "{} hazards for {} age bands",
                self.hazards.len(),
                self.bands.len()
            )));
        }
        if self.hazards.iter().any(|&h| !(0.0..1.0).contains(&h)) {
            return Err(Error::InvalidArgument("hazards must lie in [0, 1)".into()));
        }
        if !(self.cluster_sd >= 0.0) {
            return Err(Error::InvalidArgument("cluster sd must be non-negative".into()));
        }
        Ok(())
    }

    /// `5q0` implied by the design hazards.
    pub fn design_u5mr(&self) -> f64 {
        1.0 - self.bands.lengths().iter().zip(&self.hazards).map(|(&n, &h)| (1.0 - h).powi(n as i32)).product::<f64>()
    }

    fn monthly_hazards(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(60);
        for (&n, &h) in self.bands.lengths().iter().zip(&self.hazards) {
            out.extend(std::iter::repeat_n(h, n as usize));
        }
        out
    }

    /// Population value of the estimand: per band, expected deaths over
    /// expected exposure across the cluster-effect distribution, combined
    /// into `5q0`. Equals [`SimDesign::design_u5mr`] when `cluster_sd` is 0.
    pub fn target_u5mr(&self) -> f64 {
        let months = self.monthly_hazards();
        let nb = self.bands.len();
        let band_of: Vec<usize> = (0..months.len() as u32).map(|m| self.bands.band_of(m)).collect();
        let mut deaths = vec![0.0; nb];
        let mut exposure = vec![0.0; nb];
        let (nodes, width) = if self.cluster_sd > 0.0 { (4001, 16.0 * self.cluster_sd / 4000.0) } else { (1, 1.0) };
        for k in 0..nodes {
            let u = if nodes == 1 { 0.0 } else { -8.0 * self.cluster_sd + k as f64 * width };
            let dens = if nodes == 1 {
                1.0
            } else {
                let z = u / self.cluster_sd;
                let w = if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
                w * width * (-0.5 * z * z).exp() / (self.cluster_sd * (2.0 * std::f64::consts::PI).sqrt())
            };
            let mut surv = 1.0;
            for (m, &h) in months.iter().enumerate() {
                let hu = if h > 0.0 { expit(logit(h) + u) } else { 0.0 };
                exposure[band_of[m]] += dens * surv;
                deaths[band_of[m]] += dens * surv * hu;
                surv *= 1.0 - hu;
            }
        }
        1.0 - self
            .bands
            .lengths()
            .iter()
            .enumerate()
            .map(|(j, &n)| (1.0 - deaths[j] / exposure[j]).powi(n as i32))
            .product::<f64>()
    }
}

/// Draws a population sample for `design`, replicate `rep`. Children are
/// born in January 2000 and followed for 60 months or until death.
pub fn simulate_population_rep(design: &SimDesign, rep: u64) -> Result<Vec<ChildRecord>> {
    design.validate()?;
    let mut rng = chain_rng(design.seed, rep);
    let months = design.monthly_hazards();
    let mut out = Vec::new();
    let mut id = 0usize;
    for h in 0..design.n_strata {
        for c in 0..design.clusters_per_stratum {
            let z: f64 = rng.sample(StandardNormal);
            let (u, weight) = match design.weights {
                WeightScheme::Equal => (design.cluster_sd * z, 1.0),
                WeightScheme::Informative { strength } => {
                    let shift = strength * design.cluster_sd * design.cluster_sd;
                    let u = shift + design.cluster_sd * z;
                    // normalized so the population mean weight is one
                    (u, (-strength * u + 0.5 * strength * shift).exp())
                }
            };
            let logit_h: Vec<f64> = months.iter().map(|&p| if p > 0.0 { logit(p) + u } else { f64::NEG_INFINITY }).collect();
            for _ in 0..design.households_per_cluster {
                let kids = match design.children_per_household {
                    ChildrenPerHousehold::Fixed(n) => n,
                    ChildrenPerHousehold::OnePlusPoisson(m) => {
                        1 + if m > 0.0 { Poisson::new(m).expect("positive mean").sample(&mut rng) as usize } else { 0 }
                    }
                };
                for _ in 0..kids {
                    let mut age_end = 60u8;
                    let mut died = false;
                    for (m, &lh) in logit_h.iter().enumerate() {
                        if lh > f64::NEG_INFINITY && rng.random::<f64>() < expit(lh) {
                            age_end = (m + 1) as u8;
                            died = true;
                            break;
                        }
                    }
                    out.push(ChildRecord {
                        child_id: format!("k{id}"),
                        region: 0,
                        survey: 0,
                        birth_year: 2000,
                        birth_month: 1,
                        birth_period: Some(0),
                        age_end,
                        died,
                        weight,
                        stratum: format!("h{h}"),
                        cluster: format!("h{h}c{c}"),
                    });
                    id += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Population sample from `design.seed`.
pub fn simulate_population(design: &SimDesign) -> Result<Vec<ChildRecord>> {
    simulate_population_rep(design, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direct::{expand_child_months, fit_weighted_hazards};

    #[test]
    fn pooled_hazard_converges_without_cluster_effect() {
        let design = SimDesign {
            clusters_per_stratum: 300,
            households_per_cluster: 100,
            children_per_household: ChildrenPerHousehold::Fixed(1),
            hazards: vec![0.02; 6],
            cluster_sd: 0.0,
            ..Default::default()
        };
        let recs = simulate_population(&design).unwrap();
        let months = expand_child_months(&recs, &design.bands);
        assert!(months.len() > 100_000);
        let deaths = months.iter().filter(|m| m.event).count() as f64;
        let rel = (deaths / months.len() as f64 - 0.02).abs() / 0.02;
        assert!(rel < 0.02, "{rel}");
        let est = fit_weighted_hazards(&months, 6).unwrap();
        let q = crate::direct::u5mr_from_bands(&est.b_hat, &design.bands);
        assert!((q - design.design_u5mr()).abs() / design.design_u5mr() < 0.02);
    }

    #[test]
    fn zero_hazards_no_deaths() {
        let design = SimDesign { hazards: vec![0.0; 6], ..Default::default() };
        assert!(simulate_population(&design).unwrap().iter().all(|r| !r.died && r.age_end == 60));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let d = SimDesign::default();
        assert_eq!(simulate_population(&d).unwrap(), simulate_population(&d).unwrap());
        assert_ne!(simulate_population_rep(&d, 1).unwrap(), simulate_population_rep(&d, 2).unwrap());
    }

    #[test]
    fn target_equals_design_without_cluster_effect() {
        let d = SimDesign { cluster_sd: 0.0, ..Default::default() };
        assert!((d.target_u5mr() - d.design_u5mr()).abs() < 1e-14);
        let q = d.design_u5mr();
        let lens = [1.0, 11.0, 12.0, 12.0, 12.0, 12.0];
        let log_s: f64 = lens.iter().zip(DEFAULT_HAZARDS).map(|(n, h)| n * (1.0 - h).ln()).sum();
        assert!((q - (1.0 - log_s.exp())).abs() < 1e-12, "{q}");
        // heterogeneity lowers the population hazard ratio only slightly
        let d2 = SimDesign { cluster_sd: 0.5, ..Default::default() };
        assert!((d2.target_u5mr() - q).abs() < 0.02);
    }

    #[test]
    fn informative_weights_diverge_from_unweighted() {
        let d = SimDesign {
            clusters_per_stratum: 400,
            cluster_sd: 0.6,
            weights: WeightScheme::Informative { strength: 1.5 },
            ..Default::default()
        };
        let recs = simulate_population(&d).unwrap();
        let months = expand_child_months(&recs, &d.bands);
        let weighted = crate::direct::u5mr_from_bands(&fit_weighted_hazards(&months, 6).unwrap().b_hat, &d.bands);
        let mut flat = recs.clone();
        flat.iter_mut().for_each(|r| r.weight = 1.0);
        let months = expand_child_months(&flat, &d.bands);
        let unweighted = crate::direct::u5mr_from_bands(&fit_weighted_hazards(&months, 6).unwrap().b_hat, &d.bands);
        let target = d.target_u5mr();
        assert!(unweighted > weighted);
        assert!((weighted - target).abs() < (unweighted - target).abs());
    }
}
