//! Sparse symmetric positive-definite factorization for the latent field
//! precision: a minimum-degree ordering, an up-looking Cholesky over a fixed
//! symbolic pattern, triangular solves, and the Takahashi recursion for
//! entries of the inverse on the factor's pattern.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Symbolic analysis of a symmetric sparsity pattern: fill-reducing
/// permutation, elimination tree and column layout of the factor. Numeric
/// factorizations with any values on the same pattern reuse it.
#[derive(Debug, Clone)]
pub struct CholeskyAnalysis {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    iperm: Vec<usize>,
    /// Upper triangle of the permuted matrix, CSC: column `k` lists rows `<= k`.
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    parent: Vec<Option<usize>>,
    /// Column pointers of `L`.
    lp: Vec<usize>,
}

impl CholeskyAnalysis {
    /// `entries` are structural nonzeros `(row, col)` in original indices;
    /// either triangle may be given and the diagonal is always included.
    pub fn new(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut set: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for (r, c) in entries {
            set.insert((r.max(c), r.min(c)));
        }
        let perm = minimum_degree(n, &set);
        Self::with_permutation(n, &set, perm)
    }

    fn with_permutation(n: usize, set: &BTreeSet<(usize, usize)>, perm: Vec<usize>) -> Self {
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(r, c) in set {
            let (a, b) = (iperm[r], iperm[c]);
            cols[a.max(b)].push(a.min(b));
        }
        let mut colptr = vec![0; n + 1];
        let mut rowidx = Vec::with_capacity(set.len());
        for (k, col) in cols.iter_mut().enumerate() {
            col.sort_unstable();
            rowidx.extend_from_slice(col);
            colptr[k + 1] = rowidx.len();
        }
        let parent = etree(n, &colptr, &rowidx);
        // column counts from the row patterns of L
        let mut counts = vec![1usize; n];
        let mut stack = vec![0; n];
        let mut mark = vec![usize::MAX; n];
        for k in 0..n {
            let top = ereach(k, &colptr, &rowidx, &parent, &mut stack, &mut mark);
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut lp = vec![0; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + counts[k];
        }
        Self { n, perm, iperm, colptr, rowidx, parent, lp }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries (upper triangle of the permuted matrix).
    pub fn nnz(&self) -> usize {
        self.rowidx.len()
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Slot of original entry `(r, c)` in the value array passed to
    /// [`CholeskyAnalysis::factor`].
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (a, b) = (self.iperm[r], self.iperm[c]);
        let (row, col) = (a.min(b), a.max(b));
        let slice = &self.rowidx[self.colptr[col]..self.colptr[col + 1]];
        slice.binary_search(&row).ok().map(|p| self.colptr[col] + p)
    }

    /// Numeric factorization `P A P' = L L'` with `values` laid out by
    /// [`CholeskyAnalysis::position`].
    pub fn factor(&self, values: &[f64]) -> Result<Factor> {
        let n = self.n;
        let lnz = self.lp[n];
        let mut li = vec![0usize; lnz];
        let mut lx = vec![0.0f64; lnz];
        let mut next: Vec<usize> = self.lp[..n].to_vec();
        let mut x = vec![0.0f64; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![usize::MAX; n];
        for k in 0..n {
            let top = ereach(k, &self.colptr, &self.rowidx, &self.parent, &mut stack, &mut mark);
            for p in self.colptr[k]..self.colptr[k + 1] {
                x[self.rowidx[p]] = values[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..n] {
                let lki = x[i] / lx[self.lp[i]];
                x[i] = 0.0;
                for p in self.lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: self.perm[k], value: d });
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(Factor { analysis: self.clone_light(), li, lx })
    }

    fn clone_light(&self) -> FactorLayout {
        FactorLayout { n: self.n, perm: self.perm.clone(), iperm: self.iperm.clone(), lp: self.lp.clone() }
    }
}

#[derive(Debug, Clone)]
struct FactorLayout {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    lp: Vec<usize>,
}

/// Numeric Cholesky factor. Solves take and return vectors in the original
/// ordering.
#[derive(Debug, Clone)]
pub struct Factor {
    analysis: FactorLayout,
    li: Vec<usize>,
    lx: Vec<f64>,
}

impl Factor {
    pub fn n(&self) -> usize {
        self.analysis.n
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        let lp = &self.analysis.lp;
        2.0 * (0..self.n()).map(|j| self.lx[lp[j]].ln()).sum::<f64>()
    }

    fn lsolve(&self, x: &mut [f64]) {
        let lp = &self.analysis.lp;
        for j in 0..self.n() {
            x[j] /= self.lx[lp[j]];
            let xj = x[j];
            for p in lp[j] + 1..lp[j + 1] {
                x[self.li[p]] -= self.lx[p] * xj;
            }
        }
    }

    fn ltsolve(&self, x: &mut [f64]) {
        let lp = &self.analysis.lp;
        for j in (0..self.n()).rev() {
            let mut s = x[j];
            for p in lp[j] + 1..lp[j + 1] {
                s -= self.lx[p] * x[self.li[p]];
            }
            x[j] = s / self.lx[lp[j]];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.analysis;
        let mut y: Vec<f64> = a.perm.iter().map(|&o| b[o]).collect();
        self.lsolve(&mut y);
        self.ltsolve(&mut y);
        let mut x = vec![0.0; a.n];
        for (new, &old) in a.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Maps standard normal `z` to a draw with covariance `A^{-1}`.
    pub fn sample_from_standard(&self, z: &[f64]) -> Vec<f64> {
        let a = &self.analysis;
        let mut w = z.to_vec();
        self.ltsolve(&mut w);
        let mut x = vec![0.0; a.n];
        for (new, &old) in a.perm.iter().enumerate() {
            x[old] = w[new];
        }
        x
    }

    /// Entries of `A^{-1}` on the pattern of `L` by the Takahashi recursion.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let n = self.n();
        let lp = &self.analysis.lp;
        let li = &self.li;
        let lx = &self.lx;
        let mut s = vec![0.0f64; lx.len()];
        let lookup = |s: &[f64], r: usize, c: usize| -> f64 {
            let (r, c) = (r.max(c), r.min(c));
            let slice = &li[lp[c]..lp[c + 1]];
            match slice.binary_search(&r) {
                Ok(p) => s[lp[c] + p],
                Err(_) => 0.0,
            }
        };
        for j in (0..n).rev() {
            let ljj = lx[lp[j]];
            let below = lp[j] + 1..lp[j + 1];
            // off-diagonal entries, from the bottom up
            for q in below.clone().rev() {
                let i = li[q];
                let mut acc = 0.0;
                for p in below.clone() {
                    acc += lx[p] * lookup(&s, li[p], i);
                }
                s[q] = -acc / ljj;
            }
            let mut acc = 0.0;
            for p in below {
                acc += lx[p] * s[p];
            }
            s[lp[j]] = 1.0 / (ljj * ljj) - acc / ljj;
        }
        SelectedInverse { layout: self.analysis.clone(), li: self.li.clone(), values: s }
    }
}

/// Entries of `A^{-1}` on the filled pattern; other entries are not stored.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    layout: FactorLayout,
    li: Vec<usize>,
    values: Vec<f64>,
}

impl SelectedInverse {
    /// Entry `(r, c)` of the inverse in original indices, if on the pattern.
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let (a, b) = (self.layout.iperm[r], self.layout.iperm[c]);
        let (row, col) = (a.max(b), a.min(b));
        let lp = &self.layout.lp;
        let slice = &self.li[lp[col]..lp[col + 1]];
        slice.binary_search(&row).ok().map(|p| self.values[lp[col] + p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.layout.n];
        for (new, &old) in self.layout.perm.iter().enumerate() {
            d[old] = self.values[self.layout.lp[new]];
        }
        d
    }
}

fn etree(n: usize, colptr: &[usize], rowidx: &[usize]) -> Vec<Option<usize>> {
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        for p in colptr[k]..colptr[k + 1] {
            let mut i = rowidx[p];
            while i < k {
                let next = ancestor[i];
                ancestor[i] = Some(k);
                match next {
                    None => {
                        parent[i] = Some(k);
                        break;
                    }
                    Some(nx) => {
                        if nx == k {
                            break;
                        }
                        i = nx;
                    }
                }
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal) in
/// `stack[top..n]`, topologically ordered.
fn ereach(
    k: usize,
    colptr: &[usize],
    rowidx: &[usize],
    parent: &[Option<usize>],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = parent.len();
    let mut top = n;
    mark[k] = k;
    for p in colptr[k]..colptr[k + 1] {
        let mut i = rowidx[p];
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            match parent[i] {
                Some(pi) => i = pi,
                None => break,
            }
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Greedy minimum-degree ordering on the elimination graph, with bitset
/// adjacency. Ties go to the lowest index.
fn minimum_degree(n: usize, lower: &BTreeSet<(usize, usize)>) -> Vec<usize> {
    let words = n.div_ceil(64).max(1);
    let mut adj = vec![0u64; n * words];
    for &(r, c) in lower {
        if r != c {
            adj[r * words + c / 64] |= 1 << (c % 64);
            adj[c * words + r / 64] |= 1 << (r % 64);
        }
    }
    let degree = |adj: &[u64], v: usize| -> usize {
        adj[v * words..(v + 1) * words].iter().map(|w| w.count_ones() as usize).sum()
    };
    let mut deg: Vec<usize> = (0..n).map(|v| degree(&adj, v)).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut nbrs = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n).filter(|&v| !done[v]).min_by_key(|&v| (deg[v], v)).unwrap();
        done[v] = true;
        order.push(v);
        nbrs.clear();
        for w in 0..words {
            let mut bits = adj[v * words + w];
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                nbrs.push(w * 64 + b);
                bits &= bits - 1;
            }
        }
        let row_v: Vec<u64> = adj[v * words..(v + 1) * words].to_vec();
        for &u in &nbrs {
            let row_u = &mut adj[u * words..(u + 1) * words];
            for w in 0..words {
                row_u[w] |= row_v[w];
            }
            row_u[u / 64] &= !(1 << (u % 64));
            row_u[v / 64] &= !(1 << (v % 64));
        }
        for &u in &nbrs {
            deg[u] = degree(&adj, u);
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, density: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::<f64>::zeros(n, n);
        for r in 0..n {
            for c in 0..r {
                if rng.random::<f64>() < density {
                    let v = rng.random_range(-1.0..1.0);
                    a[(r, c)] = v;
                    a[(c, r)] = v;
                }
            }
        }
        for r in 0..n {
            let s: f64 = a.row(r).iter().map(|x| x.abs()).sum();
            a[(r, r)] = s + 0.5 + rng.random::<f64>();
        }
        a
    }

    fn factor_dense(a: &DMatrix<f64>) -> (CholeskyAnalysis, Factor) {
        let n = a.nrows();
        let entries: Vec<(usize, usize)> =
            (0..n).flat_map(|r| (0..=r).map(move |c| (r, c))).filter(|&(r, c)| a[(r, c)] != 0.0).collect();
        let an = CholeskyAnalysis::new(n, entries.iter().copied());
        let mut vals = vec![0.0; an.nnz()];
        for &(r, c) in &entries {
            vals[an.position(r, c).unwrap()] = a[(r, c)];
        }
        let f = an.factor(&vals).unwrap();
        (an, f)
    }

    #[test]
    fn matches_dense_linear_algebra() {
        for (seed, n, density) in [(1, 30, 0.1), (2, 60, 0.05), (3, 12, 0.6), (4, 1, 0.0)] {
            let a = random_spd(n, density, seed);
            let (_, f) = factor_dense(&a);
            let dense = a.clone().cholesky().unwrap();
            let b = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
            let x = f.solve(b.as_slice());
            let xd = dense.solve(&b);
            for i in 0..n {
                assert!((x[i] - xd[i]).abs() < 1e-12);
            }
            let ld: f64 = 2.0 * dense.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            assert!((f.log_det() - ld).abs() < 1e-10);
            let inv = dense.inverse();
            let sel = f.selected_inverse();
            let diag = sel.diagonal();
            for r in 0..n {
                assert!((diag[r] - inv[(r, r)]).abs() < 1e-12);
                for c in 0..=r {
                    if a[(r, c)] != 0.0 {
                        let v = sel.get(r, c).expect("original pattern is inside the filled pattern");
                        assert!((v - inv[(r, c)]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sample_transform_has_inverse_covariance() {
        // A^{-1} = M M' where M maps z to x; check column by column
        let n = 15;
        let a = random_spd(n, 0.2, 9);
        let (_, f) = factor_dense(&a);
        let mut m = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            m.set_column(k, &DVector::from_vec(f.sample_from_standard(&e)));
        }
        let inv = a.clone().cholesky().unwrap().inverse();
        assert!((&m * m.transpose() - inv).amax() < 1e-12);
    }

    #[test]
    fn indefinite_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let an = CholeskyAnalysis::new(2, [(1, 0)]);
        let mut v = vec![0.0; an.nnz()];
        for (r, c) in [(0, 0), (1, 0), (1, 1)] {
            v[an.position(r, c).unwrap()] = a[(r, c)];
        }
        assert!(matches!(an.factor(&v), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn arrow_matrix_ordering_avoids_fill() {
        // hub connected to everything: eliminating the hub first fills in
        // completely, minimum degree puts it last
        let n = 50;
        let an = CholeskyAnalysis::new(n, (1..n).map(|i| (i, 0)));
        assert_eq!(an.factor_nnz(), n + (n - 1));
    }
}
