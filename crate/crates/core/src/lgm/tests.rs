use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::{PeriodGrid, RegionGraph, SurveyRegistry};
use crate::direct::DirectEstimate;
use crate::gmrf::{iid, ScaledHyperprior};
use crate::stats::{expit, logit, LN_2PI};

fn est(i: usize, t: usize, s: usize, y: f64, v: f64) -> DirectEstimate {
    DirectEstimate { region: i, period: t, survey: s, y, v_des: v, v_jackknife: None, n_clusters: 10, n_child_months: 1 }
}

fn tiny(order: usize) -> AssembledModel {
    let mut data = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..3 {
        for t in 0..3 {
            let y = -2.0 + 0.3 * i as f64 - 0.2 * t as f64 + 0.1 * rng.sample::<f64, _>(StandardNormal);
            data.push(est(i, t, 0, y, 0.01 + 0.01 * ((i + t) % 3) as f64));
        }
    }
    let spec = ModelSpec::new(ModelId::I, order).unwrap();
    assemble(&spec, &data, &PeriodGrid::uniform(1990, 5, 3, 1).unwrap(), &RegionGraph::path(3), &SurveyRegistry::households(1))
        .unwrap()
}

fn dense_precision(m: &AssembledModel, tau: &[f64]) -> DMatrix<f64> {
    let n = m.n_coef;
    let mut p = DMatrix::zeros(n, n);
    for (k, b) in m.blocks.iter().enumerate() {
        let prec = m.block_precision(k, tau);
        for r in 0..b.size() {
            for c in 0..b.size() {
                p[(b.offset + r, b.offset + c)] += prec * b.structure.q[(r, c)];
            }
        }
    }
    for o in &m.observations {
        for &(a, za) in &o.entries {
            for &(b, zb) in &o.entries {
                p[(a, b)] += za * zb / o.v;
            }
        }
    }
    p
}

fn dense_constraints(m: &AssembledModel) -> DMatrix<f64> {
    let rows = m.constraint_rows();
    DMatrix::from_fn(rows.len(), m.n_coef, |r, c| if rows[r].contains(&c) { 1.0 } else { 0.0 })
}

/// Orthonormal basis of the null space of `a`.
fn null_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let eig = SymmetricEigen::new(a.transpose() * a);
    let cols: Vec<DVector<f64>> =
        (0..n).filter(|&k| eig.eigenvalues[k].abs() < 1e-9).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
    DMatrix::from_columns(&cols)
}

/// Dense constrained conditional via a null-space basis.
fn dense_conditional(m: &AssembledModel, tau: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let p = dense_precision(m, tau);
    let mut rhs = DVector::zeros(m.n_coef);
    for o in &m.observations {
        for &(a, za) in &o.entries {
            rhs[a] += za * o.y / o.v;
        }
    }
    let b = if m.n_constraints() > 0 { null_basis(&dense_constraints(m)) } else { DMatrix::identity(m.n_coef, m.n_coef) };
    let inner = (b.transpose() * &p * &b).try_inverse().unwrap();
    let cov = &b * inner * b.transpose();
    (&cov * rhs, cov)
}

#[test]
fn conjugate_normal_single_observation() {
    let mut b = ModelBuilder::new();
    let off = b.add_block("theta", None, iid(1), BlockPrecision::Free(ScaledHyperprior::default()), false, vec![]);
    b.add_observation(&[(off, 1.0)], 0.8, 1.0, CellKey::default());
    let m = b.build().unwrap();
    let c = latent_conditional(&m, &[1.0]).unwrap();
    assert!((c.mean[0] - 0.4).abs() < 1e-14);
    assert!((c.marginal_variances()[0] - 0.5).abs() < 1e-14);
}

#[test]
fn sparse_conditional_matches_dense_oracle() {
    for order in [1, 2] {
        let m = tiny(order);
        let tau: Vec<f64> = (0..m.n_hyper()).map(|h| 5.0 + 20.0 * h as f64).collect();
        let c = latent_conditional(&m, &tau).unwrap();
        let (mean, cov) = dense_conditional(&m, &tau);
        let var = c.marginal_variances();
        for j in 0..m.n_coef {
            assert!((c.mean[j] - mean[j]).abs() < 1e-8, "mean {j}: {} vs {}", c.mean[j], mean[j]);
            assert!((var[j] - cov[(j, j)]).abs() < 1e-8, "var {j}: {} vs {}", var[j], cov[(j, j)]);
        }
        assert!(m.constraint_residual(&c.mean) < 1e-10);
        // a linear combination
        let h = m.target_combination(2, 1).unwrap();
        let (lm, lv) = c.linear_combination(&h);
        let hv = DVector::from_fn(m.n_coef, |j, _| h.iter().filter(|e| e.0 == j).map(|e| e.1).sum());
        assert!((lm - hv.dot(&mean)).abs() < 1e-8);
        assert!((lv - (hv.transpose() * &cov * &hv)[(0, 0)]).abs() < 1e-8);
    }
}

#[test]
fn infinite_shrinkage_leaves_intercept() {
    let m = tiny(2);
    let tau = vec![1e12; m.n_hyper()];
    let c = latent_conditional(&m, &tau).unwrap();
    let wsum: f64 = m.observations.iter().map(|o| 1.0 / o.v).sum();
    let wmean: f64 = m.observations.iter().map(|o| o.y / o.v).sum::<f64>() / wsum;
    for b in &m.blocks[1..] {
        for j in b.range() {
            // the RW2 trend direction is not shrunk by tau
            if b.name != "gamma" {
                assert!(c.mean[j].abs() < 1e-6, "{} {}", b.name, c.mean[j]);
            }
        }
    }
    if m.block(Effect::Gamma).unwrap().structure.kind == crate::gmrf::StructureKind::Rw1 {
        assert!((c.mean[0] - wmean).abs() < 1e-6);
    }
    let m1 = tiny(1);
    let c1 = latent_conditional(&m1, &vec![1e12; m1.n_hyper()]).unwrap();
    let fitted = m1.predictors(&c1.mean);
    for f in fitted {
        assert!((f - wmean).abs() < 1e-6);
    }
}

fn log_mvn(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let ch = cov.clone().cholesky().unwrap();
    let ld: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (n * LN_2PI + ld + y.dot(&ch.solve(y)))
}

#[test]
fn loglik_intercept_only_matches_weighted_mean_marginal() {
    let ys = [0.3, -0.1, 0.5, 0.2];
    let vs = [0.1, 0.2, 0.05, 0.4];
    let mut b = ModelBuilder::new();
    let mu = b.add_block("mu", None, iid(1), BlockPrecision::Fixed(INTERCEPT_PRECISION), false, vec![]);
    for (y, v) in ys.iter().zip(vs) {
        b.add_observation(&[(mu, 1.0)], *y, v, CellKey::default());
    }
    let m = b.build().unwrap();
    let ll = loglik_tau(&m, &[]).unwrap();
    // y ~ N(0, D + s0^2 11')
    let s0 = 1.0 / INTERCEPT_PRECISION;
    let cov = DMatrix::from_fn(4, 4, |r, c| s0 + if r == c { vs[r] } else { 0.0 });
    let exact = log_mvn(&DVector::from_row_slice(&ys), &cov);
    assert!((ll - exact).abs() < 1e-6, "{ll} vs {exact}");
    // flat-prior limit: profile likelihood at the weighted mean times the
    // curvature term and the prior density
    let w: Vec<f64> = vs.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let ybar: f64 = ys.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let profile: f64 = ys.iter().zip(vs).map(|(y, v)| -0.5 * (LN_2PI + v.ln() + (y - ybar).powi(2) / v)).sum();
    let flat = profile + 0.5 * LN_2PI - 0.5 * sw.ln() - 0.5 * (LN_2PI + s0.ln());
    assert!((ll - flat).abs() < 1e-5, "{ll} vs {flat}");
}

#[test]
fn loglik_matches_dense_marginal() {
    let m = tiny(1);
    let tau: Vec<f64> = (0..m.n_hyper()).map(|h| 3.0 + 7.0 * h as f64).collect();
    let ll = loglik_tau(&m, &tau).unwrap();
    // prior covariance block by block on the constraint subspace
    let n = m.n_coef;
    let mut prior = DMatrix::zeros(n, n);
    for (k, b) in m.blocks.iter().enumerate() {
        let p = m.block_precision(k, &tau);
        let q = &b.structure.q * p;
        let sz = b.size();
        let basis = if b.constraints.is_empty() {
            DMatrix::identity(sz, sz)
        } else {
            let a = DMatrix::from_fn(b.constraints.len(), sz, |r, c| if b.constraints[r].contains(&c) { 1.0 } else { 0.0 });
            null_basis(&a)
        };
        let cov = &basis * (basis.transpose() * q * &basis).try_inverse().unwrap() * basis.transpose();
        prior.view_mut((b.offset, b.offset), (sz, sz)).copy_from(&cov);
    }
    let z = DMatrix::<f64>::from_fn(m.observations.len(), n, |r, c| {
        m.observations[r].entries.iter().filter(|e| e.0 == c).map(|e| e.1).sum()
    });
    let d = DMatrix::from_diagonal(&DVector::from_iterator(m.observations.len(), m.observations.iter().map(|o| o.v)));
    let cov = &z * prior * z.transpose() + d;
    let y = DVector::from_iterator(m.observations.len(), m.observations.iter().map(|o| o.y));
    let exact = log_mvn(&y, &cov);
    assert!((ll - exact).abs() < 1e-6, "{ll} vs {exact}");
}

#[test]
fn loglik_iid_block_infinite_precision_limit() {
    let build = |with_block: bool| {
        let mut b = ModelBuilder::new();
        let mu = b.add_block("mu", None, iid(1), BlockPrecision::Fixed(INTERCEPT_PRECISION), false, vec![]);
        let off = if with_block {
            Some(b.add_block("theta", None, iid(3), BlockPrecision::Free(ScaledHyperprior::default()), true, vec![]))
        } else {
            None
        };
        for (r, y) in [0.1, 0.4, -0.2, 0.3, 0.0, 0.25].iter().enumerate() {
            let mut e = vec![(mu, 1.0)];
            if let Some(o) = off {
                e.push((o + r % 3, 1.0));
            }
            b.add_observation(&e, *y, 0.05, CellKey::default());
        }
        b.build().unwrap()
    };
    let plain = loglik_tau(&build(false), &[]).unwrap();
    let limit = loglik_tau(&build(true), &[1e10]).unwrap();
    assert!((plain - limit).abs() < 1e-6, "{plain} vs {limit}");
}

#[test]
fn gradient_matches_finite_differences() {
    for order in [1, 2] {
        let m = tiny(order);
        let theta: Vec<f64> = (0..m.n_hyper()).map(|h| 1.0 + 0.7 * h as f64).collect();
        let tau: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let (_, g, _) = loglik_gradient(&m, &tau).unwrap();
        for h in 0..m.n_hyper() {
            let step = 1e-5;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[h] += step;
            tm[h] -= step;
            let fp = loglik_tau(&m, &tp.iter().map(|t| t.exp()).collect::<Vec<_>>()).unwrap();
            let fm = loglik_tau(&m, &tm.iter().map(|t| t.exp()).collect::<Vec<_>>()).unwrap();
            let fd = (fp - fm) / (2.0 * step);
            assert!((g[h] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "order {order} h {h}: {} vs {fd}", g[h]);
        }
    }
}

/// Direct estimates drawn from model II with the given standard deviations.
fn simulate_model_two(seed: u64, sd: f64) -> (Vec<DirectEstimate>, PeriodGrid, RegionGraph, SurveyRegistry) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_i, n_t, n_s) = (8, 5, 3);
    let mut n = || rng.sample::<f64, _>(StandardNormal);
    let alpha: Vec<f64> = (0..n_t).map(|_| sd * n()).collect();
    let theta: Vec<f64> = (0..n_i).map(|_| 2.0 * sd * n()).collect();
    let nu: Vec<f64> = (0..n_s).map(|_| sd * n()).collect();
    let mut data = Vec::new();
    for i in 0..n_i {
        for t in 0..n_t {
            for s in 0..n_s {
                let eta = -2.5 - 0.1 * t as f64 + alpha[t] + theta[i] + nu[s];
                data.push(est(i, t, s, eta + 0.05 * n(), 0.0025));
            }
        }
    }
    (data, PeriodGrid::uniform(1990, 5, n_t, 1).unwrap(), RegionGraph::lattice(2, 4), SurveyRegistry::households(n_s))
}

#[test]
fn eb_multistart_agrees() {
    let (data, grid, graph, reg) = simulate_model_two(11, 0.3);
    let m = assemble(&ModelSpec::new(ModelId::II, 2).unwrap(), &data, &grid, &graph, &reg).unwrap();
    let d = m.n_hyper();
    let fits: Vec<EbFit> = [0.0, 4.0, 9.0]
        .iter()
        .map(|&s| fit_eb(&m, &EbOptions { init: Some(vec![s; d]), ..Default::default() }).unwrap().eb.unwrap())
        .collect();
    for f in &fits[1..] {
        for h in 0..d {
            assert!((f.theta[h] - fits[0].theta[h]).abs() < 1e-4, "{:?} vs {:?}", f.theta, fits[0].theta);
        }
    }
    assert!(laplace_evidence(&fits[0]).unwrap().is_finite());
}

#[test]
fn eb_recovers_strong_signal_precision() {
    let (data, grid, graph, reg) = simulate_model_two(5, 0.5);
    let m = assemble(&ModelSpec::new(ModelId::II, 1).unwrap(), &data, &grid, &graph, &reg).unwrap();
    let fit = fit_eb(&m, &EbOptions::default()).unwrap().eb.unwrap();
    // theta had sd 1.0, so log tau = 0; its curvature standard error
    let h = m.hyper_index(Effect::Theta).unwrap();
    let cov = fit.hessian.clone().try_inverse().unwrap();
    let se = cov[(h, h)].sqrt();
    assert!((fit.theta[h] - 0.0).abs() < 3.0 * se, "theta {} se {se}", fit.theta[h]);
}

#[test]
fn constant_data_drives_interactions_to_prior() {
    let (mut data, grid, graph, reg) = simulate_model_two(2, 0.3);
    for e in &mut data {
        e.y = -3.0;
    }
    let m = assemble(&ModelSpec::new(ModelId::II, 2).unwrap(), &data, &grid, &graph, &reg).unwrap();
    let fit = fit_eb(&m, &EbOptions::default()).unwrap().eb.unwrap();
    let h = m.hyper_index(Effect::Delta).unwrap();
    // no signal: the mode sits where the prior puts it, far above any
    // data-supported precision
    assert!(fit.tau[h] > 100.0, "{:?}", fit.tau);
}

#[test]
fn gibbs_fixed_tau_matches_conditional() {
    let m = tiny(2);
    let tau: Vec<f64> = (0..m.n_hyper()).map(|h| 10.0 + 5.0 * h as f64).collect();
    let opts = GibbsOptions { n_iter: 4000, n_burn: 0, seed: 9, fixed_tau: Some(tau.clone()), ..Default::default() };
    let post = gibbs(&m, &opts).unwrap();
    let c = latent_conditional(&m, &tau).unwrap();
    let mean = post.latent_mean();
    for j in 0..m.n_coef {
        assert!((mean[j] - c.mean[j]).abs() < 3.0 * post.mcse(j) + 1e-12, "coef {j}");
    }
    for x in &post.samples {
        assert!(m.constraint_residual(x) < 1e-10);
    }
}

#[test]
fn gibbs_is_deterministic_and_constrained() {
    let (data, grid, graph, reg) = simulate_model_two(4, 0.3);
    let m = assemble(&ModelSpec::new(ModelId::II, 1).unwrap(), &data, &grid, &graph, &reg).unwrap();
    let opts = GibbsOptions { n_iter: 300, n_burn: 100, seed: 17, chains: 2, ..Default::default() };
    let a = gibbs(&m, &opts).unwrap();
    let b = gibbs(&m, &opts).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.tau_samples, b.tau_samples);
    assert_eq!(a.n_draws(), 400);
    let alpha = m.block(Effect::Alpha).unwrap().range();
    for x in &a.samples {
        assert!(x[alpha.clone()].iter().sum::<f64>().abs() < 1e-10);
        assert!(m.constraint_residual(x) < 1e-10);
    }
    assert!(a.diagnostics.as_ref().unwrap().ess_tau.iter().all(|e| *e > 0.0));
}

#[test]
fn u5mr_of_intercept_only_draws() {
    let m = tiny(2);
    let mut x = vec![0.0; m.n_coef];
    x[0] = logit(0.1);
    let post = LatentFieldPosterior {
        samples: vec![x; 5],
        tau_samples: vec![vec![1.0; m.n_hyper()]; 5],
        chain_lengths: vec![5],
        hyper_names: m.hyper_names(),
        eb: None,
        diagnostics: None,
    };
    let u = u5mr_posterior(&post, &m).unwrap();
    assert_eq!(u.cells.len(), 9);
    for c in &u.cells {
        assert!((c.q5.median - 0.1).abs() < 1e-15);
        assert!((c.q5.lower - expit(logit(0.1))).abs() < 1e-15);
    }
}

#[test]
fn u5mr_interval_is_empirical_percentile() {
    let m = tiny(1);
    let mut post = fit_eb(&m, &EbOptions::default()).unwrap();
    sample_eb(&m, &mut post, 801, 3).unwrap();
    let u = u5mr_posterior(&post, &m).unwrap();
    let k = 4;
    let mut q = u.q5_draws(k);
    q.sort_by(f64::total_cmp);
    // type-7 percentile: 800 * 0.025 = 20 exactly
    assert_eq!(u.cells[k].q5.lower, q[20]);
    assert_eq!(u.cells[k].q5.upper, q[780]);
    assert!(u.cells.iter().all(|c| c.q5.lower <= c.q5.median && c.q5.median <= c.q5.upper));
    assert!(u.cells.iter().all(|c| c.q5.lower > 0.0 && c.q5.upper < 1.0));
}

#[test]
fn projection_limits() {
    for order in [1, 2] {
        let m = tiny(order);
        let mut post = fit_eb(&m, &EbOptions::default()).unwrap();
        sample_eb(&m, &mut post, 200, 5).unwrap();
        let hg = m.hyper_index(Effect::Gamma).unwrap();
        let ha = m.hyper_index(Effect::Alpha).unwrap();
        let hd = m.hyper_index(Effect::Delta).unwrap();
        for t in &mut post.tau_samples {
            t[hg] = f64::INFINITY;
            t[ha] = f64::INFINITY;
            t[hd] = f64::INFINITY;
        }
        let p = project(&post, &m, 2, 1).unwrap();
        let g = m.block(Effect::Gamma).unwrap().range();
        for (d, x) in post.samples.iter().enumerate() {
            let gam = &x[g.clone()];
            let next = if order == 1 { gam[2] } else { 2.0 * gam[2] - gam[1] };
            for i in 0..3 {
                let base: f64 = m.target_combination(i, 2).unwrap().iter().map(|&(j, v)| v * x[j]).sum::<f64>()
                    - gam[2]
                    - x[m.block(Effect::Alpha).unwrap().offset + 2]
                    - x[m.block(Effect::Delta).unwrap().offset + i * 3 + 2];
                let k = p.cells.iter().position(|c| c.region == i && c.period == 3).unwrap();
                assert!((p.logit_draws[k][d] - (base + next)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn projection_width_grows_with_horizon() {
    let m = tiny(2);
    let mut post = fit_eb(&m, &EbOptions::default()).unwrap();
    sample_eb(&m, &mut post, 1000, 8).unwrap();
    let p = project(&post, &m, 4, 2).unwrap();
    for i in 0..3 {
        let widths: Vec<f64> = (3..7)
            .map(|t| {
                let c = p.cell(i, t).unwrap();
                c.logit.upper - c.logit.lower
            })
            .collect();
        assert!(widths.windows(2).all(|w| w[1] >= w[0]), "{widths:?}");
    }
    assert!(project(&post, &m, 0, 1).is_err());
}
