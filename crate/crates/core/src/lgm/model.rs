use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use nalgebra::SymmetricEigen;

use super::spec::{Effect, ModelSpec};
use crate::data::{PeriodGrid, RegionGraph, SurveyRegistry};
use crate::direct::DirectEstimate;
use crate::error::{Error, Result};
use crate::gmrf::{iid, random_walk, icar, ScaledHyperprior, StructureKind, StructureMatrix};
use crate::sparse::CholeskyAnalysis;

/// Prior precision of the intercept: N(0, 1000^2) on the logit scale.
pub const INTERCEPT_PRECISION: f64 = 1e-6;

/// Weight of the `A'A` term added to intrinsic blocks so the factored
/// matrix is positive definite. It vanishes on the constraint subspace.
const AUGMENT: f64 = 1.0;

/// Region, period and survey a coefficient or observation refers to
/// (0-based; `None` where the index does not apply).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CellKey {
    pub region: Option<usize>,
    pub period: Option<usize>,
    pub survey: Option<usize>,
}

impl CellKey {
    pub fn its(i: usize, t: usize, s: usize) -> Self {
        Self { region: Some(i), period: Some(t), survey: Some(s) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockPrecision {
    /// Precision with a Gamma hyperprior.
    Free(ScaledHyperprior),
    Fixed(f64),
}

/// One Gaussian block `x_k ~ N(0, (tau_k Q_k)^-)` restricted by sum-to-zero
/// constraints.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub effect: Option<Effect>,
    pub offset: usize,
    pub structure: StructureMatrix,
    pub precision: BlockPrecision,
    /// Sum-to-zero groups, as local indices.
    pub constraints: Vec<Vec<usize>>,
    pub keys: Vec<CellKey>,
    /// Dimension of the proper part of the constrained prior.
    pub effective_rank: usize,
    /// Log product of the nonzero eigenvalues of `Q_k` on the constraint
    /// subspace.
    pub log_pdet: f64,
}

impl Block {
    pub fn size(&self) -> usize {
        self.structure.size()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.size()
    }

    pub fn is_free(&self) -> bool {
        matches!(self.precision, BlockPrecision::Free(_))
    }
}

/// A Gaussian observation `y ~ N(z'x, v)`.
#[derive(Debug, Clone)]
pub struct Observation {
    pub entries: Vec<(usize, f64)>,
    pub y: f64,
    pub v: f64,
    pub key: CellKey,
}

impl Observation {
    pub fn predictor(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, z)| z * x[j]).sum()
    }
}

/// Grid dimensions of a model assembled from direct estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_regions: usize,
    pub n_periods: usize,
    pub n_surveys: usize,
}

/// Precision `P(tau) = base + sum_h tau_h Q_h + augmentation`, stored in
/// the slot layout of a fixed symbolic factorization.
#[derive(Debug, Clone)]
pub(crate) struct PrecisionLayout {
    pub analysis: CholeskyAnalysis,
    pub base: Vec<f64>,
    pub per_hyper: Vec<Vec<(usize, f64)>>,
    pub augment: Vec<(usize, f64)>,
    /// Original lower-triangle coordinates of each slot.
    pub slots: Vec<(usize, usize)>,
}

/// Latent Gaussian model: blocks, observations, constraints and the
/// symbolic factorization shared by every evaluation.
#[derive(Debug, Clone)]
pub struct AssembledModel {
    pub blocks: Vec<Block>,
    pub observations: Vec<Observation>,
    pub n_coef: usize,
    pub dims: Option<Dims>,
    pub spec: Option<ModelSpec>,
    free: Vec<usize>,
    pub(crate) layout: PrecisionLayout,
    rhs: Vec<f64>,
    constraint_rows: Vec<Vec<usize>>,
    log_det_aat: f64,
}

/// Incremental construction of an [`AssembledModel`].
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    blocks: Vec<Block>,
    observations: Vec<Observation>,
    n_coef: usize,
}

fn block_rank(structure: &StructureMatrix, constraints: &[Vec<usize>]) -> (usize, f64) {
    if structure.kind == StructureKind::Iid {
        return (structure.size() - constraints.len(), 0.0);
    }
    let eig = SymmetricEigen::new(structure.q.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let nonzero: Vec<f64> = eig.eigenvalues.iter().cloned().filter(|&l| l > 1e-10 * lmax).collect();
    (nonzero.len(), nonzero.iter().map(|l| l.ln()).sum())
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a block with the default sum-to-zero groups (all coefficients
    /// for IID, the constant null-space groups for intrinsic structures)
    /// when `constrain` is set. Returns the block's offset.
    pub fn add_block(
        &mut self,
        name: &str,
        effect: Option<Effect>,
        structure: StructureMatrix,
        precision: BlockPrecision,
        constrain: bool,
        keys: Vec<CellKey>,
    ) -> usize {
        let groups = if !constrain {
            Vec::new()
        } else if structure.kind == StructureKind::Iid {
            vec![(0..structure.size()).collect()]
        } else {
            structure.constant_groups.clone()
        };
        self.add_block_with_constraints(name, effect, structure, precision, groups, keys)
    }

    pub fn add_block_with_constraints(
        &mut self,
        name: &str,
        effect: Option<Effect>,
        structure: StructureMatrix,
        precision: BlockPrecision,
        constraints: Vec<Vec<usize>>,
        keys: Vec<CellKey>,
    ) -> usize {
        let offset = self.n_coef;
        let n = structure.size();
        let keys = if keys.len() == n { keys } else { vec![CellKey::default(); n] };
        let (effective_rank, log_pdet) = block_rank(&structure, &constraints);
        self.n_coef += n;
        self.blocks.push(Block {
            name: name.to_string(),
            effect,
            offset,
            structure,
            precision,
            constraints,
            keys,
            effective_rank,
            log_pdet,
        });
        offset
    }

    /// Adds an observation; repeated coefficient indices are merged.
    pub fn add_observation(&mut self, entries: &[(usize, f64)], y: f64, v: f64, key: CellKey) {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(j, z) in entries {
            *merged.entry(j).or_insert(0.0) += z;
        }
        self.observations.push(Observation { entries: merged.into_iter().collect(), y, v, key });
    }

    pub fn build(self) -> Result<AssembledModel> {
        AssembledModel::from_parts(self.blocks, self.observations, self.n_coef, None, None)
    }
}

impl AssembledModel {
    fn from_parts(
        blocks: Vec<Block>,
        observations: Vec<Observation>,
        n_coef: usize,
        dims: Option<Dims>,
        spec: Option<ModelSpec>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidArgument("model has no observations".into()));
        }
        if n_coef == 0 {
            return Err(Error::InvalidArgument("model has no latent coefficients".into()));
        }
        for (r, o) in observations.iter().enumerate() {
            if !(o.v > 0.0) || !o.v.is_finite() || !o.y.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "observation {r}: need finite y and positive finite variance (y={}, v={})",
                    o.y, o.v
                )));
            }
            if let Some(&(j, _)) = o.entries.iter().find(|&&(j, _)| j >= n_coef) {
                return Err(Error::InvalidArgument(format!("observation {r} references coefficient {j}")));
            }
        }
        let mut free = Vec::new();
        let mut constraint_rows = Vec::new();
        let mut base: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut hyper: Vec<BTreeMap<(usize, usize), f64>> = Vec::new();
        let mut augment: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (k, b) in blocks.iter().enumerate() {
            for g in &b.constraints {
                if g.is_empty() || g.iter().any(|&j| j >= b.size()) {
                    return Err(Error::InvalidArgument(format!("block {}: bad constraint group", b.name)));
                }
                let rows: Vec<usize> = g.iter().map(|&j| b.offset + j).collect();
                if b.structure.kind.is_intrinsic() {
                    for &r in &rows {
                        for &c in &rows {
                            if r >= c {
                                *augment.entry((r, c)).or_insert(0.0) += AUGMENT;
                            }
                        }
                    }
                }
                constraint_rows.push(rows);
            }
            let triplets = b.structure.lower_triplets();
            match b.precision {
                BlockPrecision::Free(h) => {
                    if !(h.a > 0.0 && h.b > 0.0) {
                        return Err(Error::Spec(format!("block {}: Gamma({}, {}) prior is improper", b.name, h.a, h.b)));
                    }
                    free.push(k);
                    let mut m = BTreeMap::new();
                    for (r, c, v) in triplets {
                        m.insert((b.offset + r, b.offset + c), v);
                    }
                    hyper.push(m);
                }
                BlockPrecision::Fixed(p) => {
                    if !(p > 0.0) || !p.is_finite() {
                        return Err(Error::Spec(format!("block {}: fixed precision must be positive", b.name)));
                    }
                    for (r, c, v) in triplets {
                        *base.entry((b.offset + r, b.offset + c)).or_insert(0.0) += p * v;
                    }
                }
            }
        }
        let mut rhs = vec![0.0; n_coef];
        for o in &observations {
            for (a, &(ja, za)) in o.entries.iter().enumerate() {
                rhs[ja] += za * o.y / o.v;
                for &(jb, zb) in &o.entries[..=a] {
                    let key = (ja.max(jb), ja.min(jb));
                    *base.entry(key).or_insert(0.0) += za * zb / o.v;
                }
            }
        }
        let mut all: BTreeSet<(usize, usize)> = base.keys().copied().collect();
        all.extend(augment.keys().copied());
        for m in &hyper {
            all.extend(m.keys().copied());
        }
        let analysis = CholeskyAnalysis::new(n_coef, all.iter().copied());
        let mut slots = vec![(0, 0); analysis.nnz()];
        for i in 0..n_coef {
            slots[analysis.position(i, i).expect("diagonal")] = (i, i);
        }
        let slot = |r: usize, c: usize| analysis.position(r, c).expect("entry in pattern");
        let mut base_values = vec![0.0; analysis.nnz()];
        for (&(r, c), &v) in &base {
            base_values[slot(r, c)] += v;
            slots[slot(r, c)] = (r, c);
        }
        let per_hyper: Vec<Vec<(usize, f64)>> = hyper
            .iter()
            .map(|m| {
                m.iter()
                    .map(|(&(r, c), &v)| {
                        slots[slot(r, c)] = (r, c);
                        (slot(r, c), v)
                    })
                    .collect()
            })
            .collect();
        let augment: Vec<(usize, f64)> = augment
            .iter()
            .map(|(&(r, c), &v)| {
                slots[slot(r, c)] = (r, c);
                (slot(r, c), v)
            })
            .collect();
        let log_det_aat = constraint_rows.iter().map(|g| (g.len() as f64).ln()).sum();
        Ok(Self {
            blocks,
            observations,
            n_coef,
            dims,
            spec,
            free,
            layout: PrecisionLayout { analysis, base: base_values, per_hyper, augment, slots },
            rhs,
            constraint_rows,
            log_det_aat,
        })
    }

    /// Number of free precision parameters.
    pub fn n_hyper(&self) -> usize {
        self.free.len()
    }

    /// Block index of each free precision.
    pub fn free_blocks(&self) -> &[usize] {
        &self.free
    }

    pub fn hyper_names(&self) -> Vec<String> {
        self.free.iter().map(|&k| self.blocks[k].name.clone()).collect()
    }

    pub fn hyperpriors(&self) -> Vec<ScaledHyperprior> {
        self.free
            .iter()
            .map(|&k| match self.blocks[k].precision {
                BlockPrecision::Free(h) => h,
                BlockPrecision::Fixed(_) => unreachable!("free list holds free blocks"),
            })
            .collect()
    }

    /// Precision of block `k` under the free precisions `tau`.
    pub fn block_precision(&self, k: usize, tau: &[f64]) -> f64 {
        match self.blocks[k].precision {
            BlockPrecision::Fixed(p) => p,
            BlockPrecision::Free(_) => tau[self.free.iter().position(|&f| f == k).expect("free block")],
        }
    }

    pub fn block(&self, effect: Effect) -> Option<&Block> {
        self.blocks.iter().find(|b| b.effect == Some(effect))
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    /// Hyperparameter index of the block for `effect`, if its precision is
    /// free.
    pub fn hyper_index(&self, effect: Effect) -> Option<usize> {
        self.free.iter().position(|&k| self.blocks[k].effect == Some(effect))
    }

    pub fn constraint_rows(&self) -> &[Vec<usize>] {
        &self.constraint_rows
    }

    pub fn n_constraints(&self) -> usize {
        self.constraint_rows.len()
    }

    pub(crate) fn log_det_aat(&self) -> f64 {
        self.log_det_aat
    }

    /// `Z' D^-1 y`.
    pub(crate) fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub(crate) fn precision_values(&self, tau: &[f64]) -> Vec<f64> {
        let mut v = self.layout.base.clone();
        for (h, list) in self.layout.per_hyper.iter().enumerate() {
            for &(p, q) in list {
                v[p] += tau[h] * q;
            }
        }
        for &(p, a) in &self.layout.augment {
            v[p] += a;
        }
        v
    }

    /// Lower-triangle entries of the latent posterior precision
    /// `Z'D^-1Z + sum_k tau_k Q_k`.
    pub fn precision_triplets(&self, tau: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut v = self.precision_values(tau);
        for &(p, a) in &self.layout.augment {
            v[p] -= a;
        }
        self.layout
            .slots
            .iter()
            .zip(v)
            .filter(|&(_, x)| x != 0.0)
            .map(|(&(r, c), x)| (r, c, x))
            .collect()
    }

    /// Linear predictor of every observation.
    pub fn predictors(&self, x: &[f64]) -> Vec<f64> {
        self.observations.iter().map(|o| o.predictor(x)).collect()
    }

    /// Largest absolute constraint residual of `x`.
    pub fn constraint_residual(&self, x: &[f64]) -> f64 {
        self.constraint_rows
            .iter()
            .map(|g| g.iter().map(|&j| x[j]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// `x_k' Q_k x_k` for block `k`.
    pub fn block_quadratic(&self, k: usize, x: &[f64]) -> f64 {
        let b = &self.blocks[k];
        let xs = &x[b.range()];
        let mut s = 0.0;
        for (r, c, v) in b.structure.lower_triplets() {
            let term = v * xs[r] * xs[c];
            s += if r == c { term } else { 2.0 * term };
        }
        s
    }

    /// Coefficients of `logit 5q0` for region `i`, period `t`:
    /// `mu + alpha_t + gamma_t + theta_i + phi_i + delta_it`, survey blocks
    /// excluded.
    pub fn target_combination(&self, i: usize, t: usize) -> Result<Vec<(usize, f64)>> {
        let dims = self.dims.ok_or_else(|| Error::InvalidArgument("model has no region-period grid".into()))?;
        if i >= dims.n_regions || t >= dims.n_periods {
            return Err(Error::InvalidArgument(format!("cell ({i}, {t}) outside the grid")));
        }
        let mut out = Vec::new();
        for b in &self.blocks {
            let local = match b.effect {
                None if b.name == "mu" => 0,
                Some(Effect::Alpha) | Some(Effect::Gamma) => t,
                Some(Effect::Theta) | Some(Effect::Phi) => i,
                Some(Effect::Delta) => i * dims.n_periods + t,
                _ => continue,
            };
            out.push((b.offset + local, 1.0));
        }
        Ok(out)
    }

    /// Observation rows for region `i` and period `t`.
    pub fn rows_for_cell(&self, i: usize, t: usize) -> Vec<usize> {
        (0..self.observations.len())
            .filter(|&r| {
                let k = self.observations[r].key;
                k.region == Some(i) && k.period == Some(t)
            })
            .collect()
    }

    /// The same model with observation rows `drop` removed.
    pub fn without_observations(&self, drop: &[usize]) -> Result<AssembledModel> {
        let observations = self
            .observations
            .iter()
            .enumerate()
            .filter(|(r, _)| !drop.contains(r))
            .map(|(_, o)| o.clone())
            .collect();
        Self::from_parts(self.blocks.clone(), observations, self.n_coef, self.dims, self.spec.clone())
    }
}

/// Builds the linear predictor of `spec` over the direct estimates. Survey
/// interaction blocks are indexed by the combinations present in `data`.
pub fn assemble(
    spec: &ModelSpec,
    data: &[DirectEstimate],
    grid: &PeriodGrid,
    graph: &RegionGraph,
    registry: &SurveyRegistry,
) -> Result<AssembledModel> {
    let (n_i, n_t, n_s) = (graph.len(), grid.n_periods(), registry.len());
    if data.is_empty() {
        return Err(Error::InvalidArgument("no direct estimates to smooth".into()));
    }
    let effects = spec.effects();
    if n_s == 1 && effects.iter().any(|e| e.is_survey()) {
        return Err(Error::Spec(format!(
            "model {} includes survey effects but only one survey is registered",
            spec.label()
        )));
    }
    let mut seen = BTreeSet::new();
    for e in data {
        if e.region >= n_i || e.period >= n_t || e.survey >= n_s {
            return Err(Error::InvalidArgument(format!(
                "estimate (region {}, period {}, survey {}) outside the {n_i}x{n_t}x{n_s} grid",
                e.region + 1,
                e.period + 1,
                e.survey + 1
            )));
        }
        if !seen.insert((e.region, e.period, e.survey)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate estimate for region {}, period {}, survey {}",
                e.region + 1,
                e.period + 1,
                e.survey + 1
            )));
        }
    }
    let ts: Vec<(usize, usize)> = data.iter().map(|e| (e.period, e.survey)).collect::<BTreeSet<_>>().into_iter().collect();
    let is: Vec<(usize, usize)> = data.iter().map(|e| (e.region, e.survey)).collect::<BTreeSet<_>>().into_iter().collect();
    let its: Vec<(usize, usize, usize)> = seen.iter().copied().collect();
    let index_of = |list: &[(usize, usize)], key: (usize, usize)| list.binary_search(&key).expect("observed");

    let mut b = ModelBuilder::new();
    let mu = b.add_block("mu", None, iid(1), BlockPrecision::Fixed(INTERCEPT_PRECISION), false, vec![]);
    let mut offsets: BTreeMap<Effect, usize> = BTreeMap::new();
    for &effect in &effects {
        let (structure, keys): (StructureMatrix, Vec<CellKey>) = match effect {
            Effect::Alpha => (iid(n_t), (0..n_t).map(|t| CellKey { period: Some(t), ..Default::default() }).collect()),
            Effect::Gamma => (
                random_walk(n_t, spec.rw_order)?,
                (0..n_t).map(|t| CellKey { period: Some(t), ..Default::default() }).collect(),
            ),
            Effect::Theta => (iid(n_i), (0..n_i).map(|i| CellKey { region: Some(i), ..Default::default() }).collect()),
            Effect::Phi => (icar(graph), (0..n_i).map(|i| CellKey { region: Some(i), ..Default::default() }).collect()),
            Effect::Delta => (
                iid(n_i * n_t),
                (0..n_i * n_t)
                    .map(|k| CellKey { region: Some(k / n_t), period: Some(k % n_t), survey: None })
                    .collect(),
            ),
            Effect::NuS => (iid(n_s), (0..n_s).map(|s| CellKey { survey: Some(s), ..Default::default() }).collect()),
            Effect::NuTs => (
                iid(ts.len()),
                ts.iter().map(|&(t, s)| CellKey { period: Some(t), survey: Some(s), region: None }).collect(),
            ),
            Effect::NuIs => (
                iid(is.len()),
                is.iter().map(|&(i, s)| CellKey { region: Some(i), survey: Some(s), period: None }).collect(),
            ),
            Effect::NuIts => (iid(its.len()), its.iter().map(|&(i, t, s)| CellKey::its(i, t, s)).collect()),
        };
        let prior = spec.hyperprior(effect, &structure);
        let off = b.add_block(
            effect.name(),
            Some(effect),
            structure,
            BlockPrecision::Free(prior),
            spec.constrained(effect),
            keys,
        );
        offsets.insert(effect, off);
    }
    for e in data {
        let (i, t, s) = (e.region, e.period, e.survey);
        let mut entries = vec![(mu, 1.0)];
        for (&effect, &off) in &offsets {
            let local = match effect {
                Effect::Alpha | Effect::Gamma => t,
                Effect::Theta | Effect::Phi => i,
                Effect::Delta => i * n_t + t,
                Effect::NuS => s,
                Effect::NuTs => index_of(&ts, (t, s)),
                Effect::NuIs => index_of(&is, (i, s)),
                Effect::NuIts => its.binary_search(&(i, t, s)).expect("observed"),
            };
            entries.push((off + local, 1.0));
        }
        b.add_observation(&entries, e.y, e.v_des, CellKey::its(i, t, s));
    }
    let dims = Dims { n_regions: n_i, n_periods: n_t, n_surveys: n_s };
    AssembledModel::from_parts(b.blocks, b.observations, b.n_coef, Some(dims), Some(spec.clone()))
}
