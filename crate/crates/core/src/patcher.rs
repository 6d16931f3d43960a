//! Patch selection: top-p columns of a relevance matrix, personalized
//! PageRank rank vectors (closed form and truncated Neumann series), and the
//! graph induced by a patch set.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{canonicalize_edges, Graph, NormalizedAdjacency};
use crate::linalg::{Cholesky, Matrix};
use crate::math::{abs, round};
use crate::par::map_range;
use crate::spectral::{relevance_matrix, PolyFilter, SpectralDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchMode {
    Spectral,
    Fast,
}

/// Per-node ranked selection of `p` node ids with their relevance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    n: usize,
    p: usize,
    indices: Vec<usize>,
    scores: Vec<f64>,
    pub mode: PatchMode,
}

impl PatchSet {
    /// Builds from flat row-major `n × p` buffers, checking the row
    /// invariants (distinct in-range ids, non-increasing scores, ascending
    /// ids among equal scores).
    pub fn from_parts(
        n: usize,
        p: usize,
        indices: Vec<usize>,
        scores: Vec<f64>,
        mode: PatchMode,
    ) -> Result<Self> {
        if indices.len() != n * p || scores.len() != n * p {
            return Err(shape_err!("patch buffers must hold {}x{} entries", n, p));
        }
        if p == 0 {
            return Err(Error::Param("patch size must be at least 1".to_string()));
        }
        let ps = Self {
            n,
            p,
            indices,
            scores,
            mode,
        };
        for v in 0..n {
            let idx = ps.row_indices(v);
            let sc = ps.row_scores(v);
            for (j, &u) in idx.iter().enumerate() {
                if u >= n {
                    return Err(Error::Index {
                        what: format!("patch entry of node {v}"),
                        index: u,
                        bound: n,
                    });
                }
                if idx[..j].contains(&u) {
                    return Err(Error::Format(format!("node {v} selects {u} twice")));
                }
            }
            for j in 1..p {
                let ordered = sc[j - 1] > sc[j] || (sc[j - 1] == sc[j] && idx[j - 1] < idx[j]);
                if !ordered {
                    return Err(Error::Format(format!(
                        "row {v} is not in ranked order at slot {j}"
                    )));
                }
            }
        }
        Ok(ps)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn patch_size(&self) -> usize {
        self.p
    }

    pub fn row_indices(&self, v: usize) -> &[usize] {
        &self.indices[v * self.p..(v + 1) * self.p]
    }

    pub fn row_scores(&self, v: usize) -> &[f64] {
        &self.scores[v * self.p..(v + 1) * self.p]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Same selection with every row's order permuted by `perm(v)`. The
    /// result no longer satisfies the ranking invariant, which is the point.
    pub fn permuted_rows<F>(&self, mut perm: F) -> PermutedPatches
    where
        F: FnMut(usize) -> Vec<usize>,
    {
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut scores = Vec::with_capacity(self.scores.len());
        for v in 0..self.n {
            let order = perm(v);
            for &j in &order {
                indices.push(self.row_indices(v)[j]);
                scores.push(self.row_scores(v)[j]);
            }
        }
        PermutedPatches {
            n: self.n,
            p: self.p,
            indices,
            scores,
        }
    }
}

/// A patch selection whose rows are in arbitrary order.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedPatches {
    pub n: usize,
    pub p: usize,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Row-major view of node ids shared by [`PatchSet`] and [`PermutedPatches`].
pub trait PatchIndex {
    fn num_nodes(&self) -> usize;
    fn patch_size(&self) -> usize;
    fn flat_indices(&self) -> &[usize];
    fn flat_scores(&self) -> &[f64];
}

impl PatchIndex for PatchSet {
    fn num_nodes(&self) -> usize {
        self.n
    }
    fn patch_size(&self) -> usize {
        self.p
    }
    fn flat_indices(&self) -> &[usize] {
        &self.indices
    }
    fn flat_scores(&self) -> &[f64] {
        &self.scores
    }
}

impl PatchIndex for PermutedPatches {
    fn num_nodes(&self) -> usize {
        self.n
    }
    fn patch_size(&self) -> usize {
        self.p
    }
    fn flat_indices(&self) -> &[usize] {
        &self.indices
    }
    fn flat_scores(&self) -> &[f64] {
        &self.scores
    }
}

#[inline]
fn rank_cmp(row: &[f64], a: usize, b: usize) -> Ordering {
    if row[a] == row[b] {
        a.cmp(&b)
    } else {
        row[b].total_cmp(&row[a])
    }
}

/// The `p` best entries of one row: descending score, ascending index on ties.
pub fn top_p_row(row: &[f64], p: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if p == 0 {
        return Err(Error::Param("patch size must be at least 1".to_string()));
    }
    if p > row.len() {
        return Err(Error::Size { p, n: row.len() });
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    if p < row.len() {
        order.select_nth_unstable_by(p - 1, |&a, &b| rank_cmp(row, a, b));
        order.truncate(p);
    }
    order.sort_unstable_by(|&a, &b| rank_cmp(row, a, b));
    let scores = order.iter().map(|&j| row[j]).collect();
    Ok((order, scores))
}

pub fn top_p_columns(r: &Matrix, p: usize) -> Result<PatchSet> {
    top_p_with_mode(r, p, PatchMode::Spectral)
}

/// Relative grid on which computed relevance scores are compared, so that
/// scores equal in exact arithmetic tie instead of being ordered by rounding
/// noise.
pub const SCORE_RESOLUTION: f64 = 1e-12;

fn snap_scores(row: &[f64]) -> Vec<f64> {
    let scale = row.iter().fold(0.0f64, |m, x| m.max(abs(*x)));
    if scale == 0.0 || !scale.is_finite() {
        return row.to_vec();
    }
    let step = SCORE_RESOLUTION * scale;
    row.iter().map(|&x| round(x / step) * step).collect()
}

pub(crate) fn top_p_computed(row: &[f64], p: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    top_p_row(&snap_scores(row), p)
}

fn top_p_with_mode(r: &Matrix, p: usize, mode: PatchMode) -> Result<PatchSet> {
    let n = r.rows();
    if p > r.cols() {
        return Err(Error::Size { p, n: r.cols() });
    }
    let rows = map_range(n, |v| top_p_computed(r.row(v), p));
    assemble(rows, n, p, mode)
}

fn assemble(
    rows: Vec<Result<(Vec<usize>, Vec<f64>)>>,
    n: usize,
    p: usize,
    mode: PatchMode,
) -> Result<PatchSet> {
    let mut indices = Vec::with_capacity(n * p);
    let mut scores = Vec::with_capacity(n * p);
    for row in rows {
        let (i, s) = row?;
        indices.extend(i);
        scores.extend(s);
    }
    Ok(PatchSet {
        n,
        p,
        indices,
        scores,
        mode,
    })
}

/// Dense `n × p × d` patch tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl PatchTensor {
    pub fn zeros(n: usize, p: usize, d: usize) -> Self {
        Self {
            n,
            p,
            d,
            data: vec![0.0; n * p * d],
        }
    }

    /// The `p × d` block of node `v`.
    pub fn patch(&self, v: usize) -> &[f64] {
        let s = self.p * self.d;
        &self.data[v * s..(v + 1) * s]
    }

    pub fn get(&self, v: usize, j: usize, k: usize) -> f64 {
        self.data[(v * self.p + j) * self.d + k]
    }
}

/// `P[v][j] = X[indices[v][j]]`.
pub fn extract_patches<P: PatchIndex + ?Sized>(g: &Graph, ps: &P) -> Result<PatchTensor> {
    extract_scaled(g, ps, None)
}

/// `P[v][j] = s_{v,j} · X[indices[v][j]]` with `s` the patch scores.
pub fn extract_score_weighted_patches<P: PatchIndex + ?Sized>(
    g: &Graph,
    ps: &P,
) -> Result<PatchTensor> {
    extract_scaled(g, ps, Some(ps.flat_scores()))
}

fn extract_scaled<P: PatchIndex + ?Sized>(
    g: &Graph,
    ps: &P,
    weights: Option<&[f64]>,
) -> Result<PatchTensor> {
    if ps.num_nodes() != g.num_nodes() {
        return Err(shape_err!(
            "patch set covers {} nodes but graph has {}",
            ps.num_nodes(),
            g.num_nodes()
        ));
    }
    let (n, p, d) = (g.num_nodes(), ps.patch_size(), g.feature_dim());
    let x = g.features();
    let mut out = PatchTensor::zeros(n, p, d);
    for (slot, &u) in ps.flat_indices().iter().enumerate() {
        if u >= n {
            return Err(Error::Index {
                what: "patch entry".to_string(),
                index: u,
                bound: n,
            });
        }
        let w = weights.map_or(1.0, |s| s[slot]);
        for (o, &xv) in out.data[slot * d..(slot + 1) * d].iter_mut().zip(x.row(u)) {
            *o = w * xv;
        }
    }
    Ok(out)
}

/// Top-p selection on the relevance matrix of `f`.
pub fn spectral_patch(
    g: &Graph,
    dec: &SpectralDecomposition,
    f: &PolyFilter,
    p: usize,
) -> Result<PatchSet> {
    if dec.len() != g.num_nodes() {
        return Err(shape_err!(
            "spectrum has {} entries for {} nodes",
            dec.len(),
            g.num_nodes()
        ));
    }
    top_p_columns(&relevance_matrix(dec, f)?, p)
}

/// Personalized PageRank rank vector of node `owner`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub owner: usize,
    pub r: Vec<f64>,
    pub c: f64,
    /// Neumann truncation order; `None` for the exact solve.
    pub k_used: Option<usize>,
}

fn check_c(c: f64) -> Result<()> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::Param(format!(
            "dangling scalar c must lie in [0, 1), got {c}"
        )));
    }
    Ok(())
}

fn check_owner(v: usize, n: usize) -> Result<()> {
    if v >= n {
        return Err(Error::Index {
            what: "rank vector owner".to_string(),
            index: v,
            bound: n,
        });
    }
    Ok(())
}

/// `c rᵀ(I − Ã)r + (1 − c)‖r − e_v‖²`.
pub fn ppr_objective(r: &[f64], v: usize, a: &NormalizedAdjacency, c: f64) -> Result<f64> {
    let n = a.num_nodes();
    if r.len() != n {
        return Err(shape_err!(
            "rank vector has length {}, expected {}",
            r.len(),
            n
        ));
    }
    check_owner(v, n)?;
    check_c(c)?;
    let ar = a.apply(r);
    let smooth: f64 = r.iter().zip(&ar).map(|(ri, ari)| ri * (ri - ari)).sum();
    let personal: f64 = r
        .iter()
        .enumerate()
        .map(|(i, &ri)| {
            let d = ri - if i == v { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(c * smooth + (1.0 - c) * personal)
}

/// `2c(I − Ã)r + 2(1 − c)(r − e_v)`.
pub fn ppr_objective_grad(
    r: &[f64],
    v: usize,
    a: &NormalizedAdjacency,
    c: f64,
) -> Result<Vec<f64>> {
    let n = a.num_nodes();
    if r.len() != n {
        return Err(shape_err!(
            "rank vector has length {}, expected {}",
            r.len(),
            n
        ));
    }
    check_owner(v, n)?;
    let ar = a.apply(r);
    Ok((0..n)
        .map(|i| {
            let e = if i == v { 1.0 } else { 0.0 };
            2.0 * c * (r[i] - ar[i]) + 2.0 * (1.0 - c) * (r[i] - e)
        })
        .collect())
}

/// Factorization of `I − cÃ`, reusable across owners.
#[derive(Debug, Clone)]
pub struct PprSolver {
    chol: Cholesky,
    c: f64,
    n: usize,
}

impl PprSolver {
    pub fn new(a: &NormalizedAdjacency, c: f64) -> Result<Self> {
        check_c(c)?;
        let n = a.num_nodes();
        let mut m = Matrix::identity(n);
        for i in 0..n {
            for &(j, w) in a.sparse_row(i) {
                m[(i, j)] -= c * w;
            }
        }
        Ok(Self {
            chol: Cholesky::factor(&m)?,
            c,
            n,
        })
    }

    pub fn solve(&self, v: usize) -> Result<RankVector> {
        check_owner(v, self.n)?;
        let mut rhs = vec![0.0; self.n];
        rhs[v] = 1.0 - self.c;
        Ok(RankVector {
            owner: v,
            r: self.chol.solve(&rhs)?,
            c: self.c,
            k_used: None,
        })
    }
}

/// `r_v = (1 − c)(I − cÃ)⁻¹ e_v`.
pub fn ppr_closed_form(v: usize, a: &NormalizedAdjacency, c: f64) -> Result<RankVector> {
    PprSolver::new(a, c)?.solve(v)
}

/// `(1 − c) Σ_{k=0}^{K} c^k Ã^k e_v`, evaluated in Horner form with
/// `K` sparse matrix-vector products.
pub fn ppr_neumann(v: usize, a: &NormalizedAdjacency, c: f64, k: usize) -> Result<RankVector> {
    let n = a.num_nodes();
    check_owner(v, n)?;
    check_c(c)?;
    let base = 1.0 - c;
    let mut r = vec![0.0; n];
    r[v] = base;
    for _ in 0..k {
        let mut next = a.apply(&r);
        for x in &mut next {
            *x *= c;
        }
        next[v] += base;
        r = next;
    }
    Ok(RankVector {
        owner: v,
        r,
        c,
        k_used: Some(k),
    })
}

/// Top-p selection on truncated-Neumann rank vectors, one per node.
pub fn fast_patch(
    g: &Graph,
    a: &NormalizedAdjacency,
    c: f64,
    k: usize,
    p: usize,
) -> Result<PatchSet> {
    let n = g.num_nodes();
    if a.num_nodes() != n {
        return Err(shape_err!(
            "adjacency has {} nodes, graph has {}",
            a.num_nodes(),
            n
        ));
    }
    check_c(c)?;
    if p > n {
        return Err(Error::Size { p, n });
    }
    let rows = map_range(n, |v| {
        ppr_neumann(v, a, c, k).and_then(|rv| top_p_computed(&rv.r, p))
    });
    assemble(rows, n, p, PatchMode::Fast)
}

/// Top-p selection on exact rank vectors.
pub fn fast_patch_exact(g: &Graph, a: &NormalizedAdjacency, c: f64, p: usize) -> Result<PatchSet> {
    let n = g.num_nodes();
    if p > n {
        return Err(Error::Size { p, n });
    }
    let solver = PprSolver::new(a, c)?;
    let rows = map_range(n, |v| {
        solver.solve(v).and_then(|rv| top_p_computed(&rv.r, p))
    });
    assemble(rows, n, p, PatchMode::Fast)
}

/// Undirected edges `{v, u}` for every selected `u ≠ v`, canonicalized.
pub fn patch_induced_graph<P: PatchIndex + ?Sized>(ps: &P) -> Vec<(usize, usize)> {
    let p = ps.patch_size();
    let pairs: Vec<(usize, usize)> = ps
        .flat_indices()
        .iter()
        .enumerate()
        .map(|(slot, &u)| (slot / p, u))
        .filter(|(v, u)| v != u)
        .collect();
    canonicalize_edges(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, NormMode, Splits};
    use crate::spectral::{eigendecompose, Activation};

    fn graph(n: usize, edges: &[(usize, usize)], d: usize) -> Graph {
        let x = Matrix::from_vec(n, d, (0..n * d).map(|i| i as f64).collect()).unwrap();
        Graph::new(n, 1, edges, x, vec![0; n], Splits::default()).unwrap()
    }

    #[test]
    fn identity_p1_selects_self() {
        let ps = top_p_columns(&Matrix::identity(4), 1).unwrap();
        for v in 0..4 {
            assert_eq!(ps.row_indices(v), &[v]);
            assert_eq!(ps.row_scores(v), &[1.0]);
        }
    }

    #[test]
    fn ties_break_by_ascending_index() {
        let r = Matrix::from_rows(&[vec![0.2, 0.9, 0.9]]).unwrap();
        let (idx, sc) = top_p_row(r.row(0), 2).unwrap();
        assert_eq!(idx, vec![1, 2]);
        assert_eq!(sc, vec![0.9, 0.9]);
    }

    #[test]
    fn signed_zeros_tie() {
        let (idx, _) = top_p_row(&[-0.0, -1.0, 0.0], 2).unwrap();
        assert_eq!(idx, vec![0, 2]);
        let ps = top_p_columns(
            &Matrix::from_rows(&[vec![-0.0, 0.0], vec![0.0, -0.0]]).unwrap(),
            2,
        )
        .unwrap();
        let back = PatchSet::from_parts(2, 2, ps.indices().to_vec(), ps.scores().to_vec(), ps.mode);
        assert_eq!(back.unwrap(), ps);
    }

    #[test]
    fn full_selection_is_permutation() {
        let r = Matrix::from_rows(&[
            vec![0.5, -1.0, 2.0],
            vec![0.0, 0.0, 0.0],
            vec![3.0, 1.0, 2.0],
        ])
        .unwrap();
        let ps = top_p_columns(&r, 3).unwrap();
        for v in 0..3 {
            let mut row = ps.row_indices(v).to_vec();
            row.sort_unstable();
            assert_eq!(row, vec![0, 1, 2]);
        }
        assert_eq!(ps.row_indices(1), &[0, 1, 2]);
        assert!(matches!(
            top_p_columns(&r, 4),
            Err(Error::Size { p: 4, n: 3 })
        ));
    }

    #[test]
    fn extract_examples() {
        let g = graph(2, &[(0, 1)], 2);
        let ps = PatchSet::from_parts(
            2,
            2,
            vec![0, 1, 1, 0],
            vec![1.0, 0.5, 1.0, 0.5],
            PatchMode::Spectral,
        )
        .unwrap();
        let p = extract_patches(&g, &ps).unwrap();
        assert_eq!(p.data, vec![0.0, 1.0, 2.0, 3.0, 2.0, 3.0, 0.0, 1.0]);

        let g3 = graph(3, &[], 2);
        let ps = top_p_columns(&Matrix::identity(3), 1).unwrap();
        let p = extract_patches(&g3, &ps).unwrap();
        for v in 0..3 {
            assert_eq!(p.patch(v), g3.features().row(v));
        }
        assert!(extract_patches(&g, &ps).is_err());
    }

    #[test]
    fn spectral_patch_zero_filter_uses_tie_rule() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)], 1);
        let dec = eigendecompose(&normalize_adjacency(&g, NormMode::Sym)).unwrap();
        let f = PolyFilter::constant(2, 4, 0.0, Activation::Tanh).unwrap();
        let ps = spectral_patch(&g, &dec, &f, 3).unwrap();
        for v in 0..4 {
            assert_eq!(ps.row_indices(v), &[0, 1, 2]);
        }
    }

    #[test]
    fn spectral_patch_path3_center_picks_neighbors() {
        let g = graph(3, &[(0, 1), (1, 2)], 1);
        let dec = eigendecompose(&normalize_adjacency(&g, NormMode::Sym)).unwrap();
        let f = PolyFilter::constant(1, 3, 1.0, Activation::Identity).unwrap();
        let ps = spectral_patch(&g, &dec, &f, 2).unwrap();
        assert_eq!(ps.row_indices(1), &[0, 2]);
        let h = core::f64::consts::FRAC_1_SQRT_2;
        for s in ps.row_scores(1) {
            assert!((s - h).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_examples() {
        let edgeless = normalize_adjacency(&graph(3, &[], 1), NormMode::Sym);
        let e1 = [0.0, 1.0, 0.0];
        assert!((ppr_objective(&e1, 1, &edgeless, 0.3).unwrap() - 0.3).abs() < 1e-15);
        assert!((ppr_objective(&[0.0; 3], 1, &edgeless, 0.3).unwrap() - 0.7).abs() < 1e-15);
        assert!(ppr_objective(&e1, 1, &edgeless, 1.0).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let a = normalize_adjacency(&graph(2, &[(0, 1)], 1), NormMode::Sym);
        let r = ppr_closed_form(0, &a, 0.5).unwrap();
        assert!((r.r[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((r.r[1] - 1.0 / 3.0).abs() < 1e-14);
        let r0 = ppr_closed_form(1, &a, 0.0).unwrap();
        assert_eq!(r0.r, vec![0.0, 1.0]);
        assert_eq!(r0.k_used, None);
    }

    #[test]
    fn neumann_examples() {
        let a = normalize_adjacency(&graph(4, &[(0, 1), (1, 2), (2, 3)], 1), NormMode::Sym);
        let r = ppr_neumann(2, &a, 0.4, 0).unwrap();
        assert_eq!(r.r, vec![0.0, 0.0, 0.6, 0.0]);
        let r = ppr_neumann(2, &a, 0.0, 7).unwrap();
        assert_eq!(r.r, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(r.k_used, Some(7));
    }

    #[test]
    fn fast_patch_c0_selects_self_first() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], 1);
        let a = normalize_adjacency(&g, NormMode::Sym);
        let ps = fast_patch(&g, &a, 0.0, 10, 3).unwrap();
        assert_eq!(ps.mode, PatchMode::Fast);
        for v in 0..5 {
            let row = ps.row_indices(v);
            assert_eq!(row[0], v);
            let rest: Vec<usize> = (0..5).filter(|&u| u != v).take(2).collect();
            assert_eq!(&row[1..], rest.as_slice());
        }
    }

    #[test]
    fn induced_graph_examples() {
        let ps = top_p_columns(&Matrix::identity(3), 1).unwrap();
        assert!(patch_induced_graph(&ps).is_empty());
        let ps = PatchSet::from_parts(
            2,
            2,
            vec![0, 1, 1, 0],
            vec![1.0, 0.5, 1.0, 0.5],
            PatchMode::Fast,
        )
        .unwrap();
        assert_eq!(patch_induced_graph(&ps), vec![(0, 1)]);
    }

    #[test]
    fn from_parts_validates_rows() {
        assert!(PatchSet::from_parts(2, 1, vec![0, 2], vec![1.0, 1.0], PatchMode::Fast).is_err());
        assert!(PatchSet::from_parts(1, 2, vec![0, 0], vec![1.0, 1.0], PatchMode::Fast).is_err());
        assert!(PatchSet::from_parts(
            2,
            2,
            vec![0, 1, 1, 0],
            vec![0.5, 1.0, 1.0, 0.5],
            PatchMode::Fast
        )
        .is_err());
    }
}
