//! Structure matrices for IID, random-walk and ICAR blocks, their
//! generalized inverses, and hyperpriors scaled to a common marginal
//! variance.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::RegionGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureKind {
    Iid,
    Rw1,
    Rw2,
    Icar,
}

impl StructureKind {
    pub fn is_intrinsic(self) -> bool {
        !matches!(self, StructureKind::Iid)
    }
}

/// Structure (unit-precision) matrix `Q` of a Gaussian block together with
/// a basis of its null space.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrix {
    pub kind: StructureKind,
    pub q: DMatrix<f64>,
    pub rank_deficiency: usize,
    /// Columns span the null space of `q`.
    pub null_basis: DMatrix<f64>,
    /// Groups of indices that each carry a sum-to-zero constraint matching
    /// the constant part of the null space (one group for RW and connected
    /// ICAR, one per component otherwise). Empty for IID.
    pub constant_groups: Vec<Vec<usize>>,
}

impl StructureMatrix {
    pub fn size(&self) -> usize {
        self.q.nrows()
    }

    pub fn rank(&self) -> usize {
        self.size() - self.rank_deficiency
    }

    /// Lower-triangle nonzeros `(row, col, value)` with `row >= col`.
    pub fn lower_triplets(&self) -> Vec<(usize, usize, f64)> {
        let n = self.size();
        let mut out = Vec::new();
        for c in 0..n {
            for r in c..n {
                let v = self.q[(r, c)];
                if v != 0.0 {
                    out.push((r, c, v));
                }
            }
        }
        out
    }
}

pub fn iid(n: usize) -> StructureMatrix {
    StructureMatrix {
        kind: StructureKind::Iid,
        q: DMatrix::identity(n, n),
        rank_deficiency: 0,
        null_basis: DMatrix::zeros(n, 0),
        constant_groups: Vec::new(),
    }
}

fn difference_matrix(n: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(n, n);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, n, |r, c| d[(r + 1, c)] - d[(r, c)]);
    }
    d
}

/// Random walk of order 1 or 2 on `n` equally spaced points: `Q = D'D` with
/// `D` the first- or second-difference operator.
pub fn random_walk(n: usize, order: usize) -> Result<StructureMatrix> {
    let (kind, min_n) = match order {
        1 => (StructureKind::Rw1, 2),
        2 => (StructureKind::Rw2, 3),
        _ => return Err(Error::InvalidArgument(format!("random walk order {order} not supported"))),
    };
    if n < min_n {
        return Err(Error::InvalidArgument(format!("RW{order} needs at least {min_n} points, got {n}")));
    }
    let d = difference_matrix(n, order);
    let q = d.transpose() * d;
    let null_basis = DMatrix::from_fn(n, order, |r, c| if c == 0 { 1.0 } else { (r + 1) as f64 });
    Ok(StructureMatrix { kind, q, rank_deficiency: order, null_basis, constant_groups: vec![(0..n).collect()] })
}

/// Intrinsic CAR structure: the graph Laplacian, degrees on the diagonal and
/// `-1` for each neighbor pair. Each connected component adds one dimension
/// to the null space.
pub fn icar(graph: &RegionGraph) -> StructureMatrix {
    let n = graph.len();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for (a, b) in graph.edges() {
        q[(a, b)] -= 1.0;
        q[(b, a)] -= 1.0;
        q[(a, a)] += 1.0;
        q[(b, b)] += 1.0;
    }
    let comps = graph.components().to_vec();
    let null_basis = DMatrix::from_fn(n, comps.len(), |r, c| if comps[c].contains(&r) { 1.0 } else { 0.0 });
    StructureMatrix { kind: StructureKind::Icar, q, rank_deficiency: comps.len(), null_basis, constant_groups: comps }
}

/// Builds the structure for `kind` on `n` points (IID, RW) or on `graph`
/// (ICAR).
pub fn structure_matrix(kind: StructureKind, n: usize, graph: Option<&RegionGraph>) -> Result<StructureMatrix> {
    match kind {
        StructureKind::Iid => Ok(iid(n)),
        StructureKind::Rw1 => random_walk(n, 1),
        StructureKind::Rw2 => random_walk(n, 2),
        StructureKind::Icar => graph
            .map(icar)
            .ok_or_else(|| Error::InvalidArgument("ICAR structure needs a region graph".into())),
    }
}

/// Moore-Penrose inverse of a symmetric PSD matrix by eigendecomposition,
/// treating eigenvalues below `1e-10 * lambda_max` as zero.
pub fn generalized_inverse(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    if n == 0 {
        return q.clone();
    }
    let eig = SymmetricEigen::new(q.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-10 * lmax;
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > tol {
            let v = eig.eigenvectors.column(k);
            out += (1.0 / l) * v * v.transpose();
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Gamma(a, b) prior on a precision, with `b` rescaled by `c`, the average
/// marginal variance of the unit-precision field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledHyperprior {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub const A_MARG: f64 = 0.5;
pub const B_MARG: f64 = 0.001488;

impl ScaledHyperprior {
    pub fn unscaled(a: f64, b: f64) -> Self {
        Self { a, b, c: 1.0 }
    }
}

impl Default for ScaledHyperprior {
    fn default() -> Self {
        Self::unscaled(A_MARG, B_MARG)
    }
}

/// Mean of the diagonal of the generalized inverse (1 for IID).
pub fn average_marginal_variance(s: &StructureMatrix) -> f64 {
    if s.kind == StructureKind::Iid {
        return 1.0;
    }
    let g = generalized_inverse(&s.q);
    g.diagonal().mean()
}

/// Returns `(a_marg, b_marg / c, c)`.
pub fn scaled_hyperprior(s: &StructureMatrix, a_marg: f64, b_marg: f64) -> ScaledHyperprior {
    let c = average_marginal_variance(s);
    ScaledHyperprior { a: a_marg, b: b_marg / c, c }
}

/// Upper 97.5% point of the residual odds ratio implied by a Gamma(a, b)
/// precision: the marginal of the random effect is a scaled Student-t with
/// `2a` degrees of freedom, giving `exp(t_{2a,0.975} sqrt(b/a))`.
pub fn marginal_interval_check(a: f64, b: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, 2.0 * a).expect("positive degrees of freedom").inverse_cdf(0.975);
    (t * (b / a).sqrt()).exp()
}

/// Writes a dense matrix as comma-separated rows at full precision.
pub fn write_dense_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    #[test]
    fn rw1_three_points() {
        let s = random_walk(3, 1).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(s.q, expect);
        assert_eq!(s.rank_deficiency, 1);
    }

    #[test]
    fn rw2_null_space_exact() {
        let s = random_walk(5, 2).unwrap();
        let ones = DVector::from_element(5, 1.0);
        let ramp = DVector::from_fn(5, |i, _| (i + 1) as f64);
        assert_eq!(&s.q * ones, DVector::zeros(5));
        assert_eq!(&s.q * ramp, DVector::zeros(5));
        assert_eq!(s.q[(2, 2)], 6.0);
        assert_eq!(s.q[(0, 2)], 1.0);
    }

    #[test]
    fn too_small_random_walks() {
        assert!(random_walk(1, 1).is_err());
        assert!(random_walk(2, 2).is_err());
        assert!(structure_matrix(StructureKind::Icar, 3, None).is_err());
    }

    #[test]
    fn icar_on_path() {
        let s = icar(&RegionGraph::path(4));
        for r in 0..4 {
            assert_eq!(s.q.row(r).sum(), 0.0);
        }
        assert_eq!(s.q.diagonal().as_slice(), &[1.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn icar_disconnected_deficiency() {
        let g = crate::data::parse_adjacency("a b\nb c\nd e\nf\n", None).unwrap();
        let s = icar(&g);
        assert_eq!(s.rank_deficiency, 3);
        assert!((&s.q * &s.null_basis).amax() == 0.0);
        let eig = SymmetricEigen::new(s.q.clone());
        assert_eq!(eig.eigenvalues.iter().filter(|l| l.abs() < 1e-10).count(), 3);
    }

    #[test]
    fn pseudoinverse_contract() {
        for s in [random_walk(6, 1).unwrap(), random_walk(7, 2).unwrap(), icar(&RegionGraph::lattice(3, 4)), iid(4)] {
            let g = generalized_inverse(&s.q);
            assert!((&s.q * &g * &s.q - &s.q).amax() < 1e-10);
            assert!((&g - g.transpose()).amax() < 1e-14);
            assert!((&g * &s.null_basis).amax() < 1e-10);
        }
        assert_eq!(generalized_inverse(&DMatrix::identity(3, 3)), DMatrix::identity(3, 3));
    }

    #[test]
    fn rw1_trace_identity() {
        // path Laplacian eigenvalues are 2 - 2 cos(pi k / n), k = 1..n-1
        for n in 3..=12usize {
            let oracle: f64 = (1..n).map(|k| 1.0 / (2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos())).sum();
            let closed = (n * n - 1) as f64 / 6.0 / n as f64;
            assert!((oracle / n as f64 - closed).abs() < 1e-12);
            let c = average_marginal_variance(&random_walk(n, 1).unwrap());
            assert!((c - closed).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn scaled_priors_at_six_periods() {
        let iid_prior = scaled_hyperprior(&iid(6), A_MARG, B_MARG);
        assert_eq!(iid_prior.b, 0.001488);
        let rw1 = scaled_hyperprior(&random_walk(6, 1).unwrap(), A_MARG, B_MARG);
        assert!((rw1.c - 35.0 / 36.0).abs() < 1e-12);
        assert!((rw1.b - 0.0015305).abs() < 1e-7);
        let rw2 = scaled_hyperprior(&random_walk(6, 2).unwrap(), A_MARG, B_MARG);
        assert!((rw2.c - 0.520).abs() < 1e-3);
        assert!((rw2.b - 0.00286).abs() < 2e-5);
    }

    #[test]
    fn interval_rule() {
        assert!((marginal_interval_check(0.5, 0.001488) - 2.0).abs() < 1e-3);
        assert!((marginal_interval_check(0.5, 0.001488 / 4.0) - 2f64.sqrt()).abs() < 1e-3);
        assert!((marginal_interval_check(0.5, 1e-14) - 1.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn larger_c_gives_smaller_b(n in 3usize..15, m in 3usize..15) {
            let a = scaled_hyperprior(&random_walk(n, 1).unwrap(), A_MARG, B_MARG);
            let b = scaled_hyperprior(&random_walk(m, 1).unwrap(), A_MARG, B_MARG);
            if a.c > b.c { prop_assert!(a.b < b.b); }
            if a.c < b.c { prop_assert!(a.b > b.b); }
        }
    }
}
