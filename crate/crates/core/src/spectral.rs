//! Eigendecomposition of the normalized adjacency and spectral filters.
//!
//! Eigenvalues here are those of `Ã`; the normalized Laplacian spectrum is
//! `1 - λ`. Filters that are naturally specified on the Laplacian spectrum
//! ([`low_pass_reference`], [`band_filter`]) take adjacency eigenvalues and
//! do the conversion themselves.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::Matrix;
use crate::math::{powi, sqrt, tanh};

/// Off-diagonal Frobenius norm target relative to `‖A‖_F`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix: eigenvalues ascending, column `i` of
/// `eigenvectors` pairs with `eigenvalues[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Normalized Laplacian eigenvalues `1 - λ`, in the same index order.
    pub fn laplacian_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| 1.0 - l).collect()
    }

    /// `U diag(q) Uᵀ`.
    pub fn synthesize(&self, q: &[f64]) -> Result<Matrix> {
        let n = self.len();
        if q.len() != n {
            return Err(shape_err!(
                "diagonal of length {} for {} eigenpairs",
                q.len(),
                n
            ));
        }
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for i in 0..n {
            for (x, &qk) in scaled.row_mut(i).iter_mut().zip(q) {
                *x *= qk;
            }
        }
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let si = scaled.row(i);
            for j in i..n {
                let v: f64 = si.iter().zip(u.row(j)).map(|(a, b)| a * b).sum();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// `‖U diag(λ) Uᵀ − a‖_F`.
    pub fn reconstruction_error(&self, a: &Matrix) -> Result<f64> {
        Ok(self.synthesize(&self.eigenvalues)?.sub(a)?.frobenius_norm())
    }

    /// `max |UᵀU − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.len();
        let ut = self.eigenvectors.transpose();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d: f64 = ut.row(i).iter().zip(ut.row(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

pub fn eigendecompose(a: &NormalizedAdjacency) -> Result<SpectralDecomposition> {
    eigendecompose_symmetric(a.matrix())
}

/// Cyclic Jacobi rotations on a dense symmetric matrix.
///
/// Pairs are visited in round-robin order: each round rotates `n / 2`
/// disjoint index pairs at once, applied as one pass over the affected rows
/// and one pass over every row for the affected columns. Stops once the
/// off-diagonal Frobenius norm is at most `JACOBI_TOL * ‖A‖_F`. Each
/// eigenvector is signed so that its largest-magnitude entry (lowest index on
/// ties) is positive.
pub fn eigendecompose_symmetric(a: &Matrix) -> Result<SpectralDecomposition> {
    if !a.is_square() {
        return Err(shape_err!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        ));
    }
    let n = a.rows();
    let mut w = a.clone();
    // Row r of `vt` is eigenvector r (V stored transposed so rotations touch
    // contiguous memory).
    let mut vt = Matrix::identity(n);
    let total = a.frobenius_norm();
    let target = JACOBI_TOL * total;
    let skip = 1e-3 * target / (n.max(1) as f64);

    let m = n + n % 2;
    let mut ring: Vec<usize> = (0..m).collect();
    let mut rotations: Vec<Rotation> = Vec::with_capacity(m / 2);
    let mut converged = off_diagonal_norm(&w) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps (off-diagonal norm {:e})",
                off_diagonal_norm(&w)
            )));
        }
        sweeps += 1;
        for _ in 0..m.saturating_sub(1) {
            rotations.clear();
            for i in 0..m / 2 {
                let (x, y) = (ring[i], ring[m - 1 - i]);
                let (p, q) = if x < y { (x, y) } else { (y, x) };
                if q < n && w[(p, q)].abs() > skip {
                    rotations.push(Rotation::new(&w, p, q));
                }
            }
            ring[1..].rotate_right(1);
            if rotations.is_empty() {
                continue;
            }
            apply_round(&mut w, &mut vt, &rotations);
        }
        converged = off_diagonal_norm(&w) <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].total_cmp(&w[(j, j)]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| w[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = vt.row(src);
        let mut pivot = 0;
        for (k, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = k;
            }
        }
        let sign = if v.get(pivot).copied().unwrap_or(1.0) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for (r, &x) in v.iter().enumerate() {
            eigenvectors[(r, col)] = sign * x;
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for (j, x) in a.row(i).iter().enumerate() {
            if i != j {
                s += x * x;
            }
        }
    }
    sqrt(s)
}

struct Rotation {
    p: usize,
    q: usize,
    c: f64,
    s: f64,
    app: f64,
    aqq: f64,
    shift: f64,
}

impl Rotation {
    fn new(w: &Matrix, p: usize, q: usize) -> Self {
        let apq = w[(p, q)];
        let app = w[(p, p)];
        let aqq = w[(q, q)];
        let theta = (aqq - app) / (2.0 * apq);
        let mag = 1.0 / (theta.abs() + sqrt(theta * theta + 1.0));
        let t = if theta >= 0.0 { mag } else { -mag };
        let c = 1.0 / sqrt(t * t + 1.0);
        Self {
            p,
            q,
            c,
            s: t * c,
            app,
            aqq,
            shift: t * apq,
        }
    }
}

/// `W ← Jᵀ W J` and `Vᵀ ← Jᵀ Vᵀ` for a product `J` of disjoint rotations.
fn apply_round(w: &mut Matrix, vt: &mut Matrix, rotations: &[Rotation]) {
    let n = w.rows();
    for r in rotations {
        rotate_rows(w.as_mut_slice(), n, r.p, r.q, r.c, r.s);
        rotate_rows(vt.as_mut_slice(), n, r.p, r.q, r.c, r.s);
    }
    for row in w.as_mut_slice().chunks_exact_mut(n) {
        for r in rotations {
            let (a, b) = (row[r.p], row[r.q]);
            row[r.p] = r.c * a - r.s * b;
            row[r.q] = r.s * a + r.c * b;
        }
    }
    for r in rotations {
        w[(r.p, r.p)] = r.app - r.shift;
        w[(r.q, r.q)] = r.aqq + r.shift;
        w[(r.p, r.q)] = 0.0;
        w[(r.q, r.p)] = 0.0;
    }
}

#[inline]
fn rotate_rows(data: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = data.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// `x̂ = Uᵀ x`.
pub fn graph_fourier(u: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    u.matvec_transposed(x)
}

/// `x = U x̂`.
pub fn inverse_graph_fourier(u: &Matrix, x_hat: &[f64]) -> Result<Vec<f64>> {
    u.matvec(x_hat)
}

/// Pointwise nonlinearity used inside the polynomial filter. All variants
/// map 0 to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = tanh(x);
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `g(λ)_i = Σ_k σ(w_{k,i} λ_i^k)` with per-eigenvalue weights, `k = 1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFilter {
    /// `weights[k-1][i]` multiplies `λ_i^k`.
    pub weights: Vec<Vec<f64>>,
    pub activation: Activation,
    /// When false the relevance matrix uses the raw polynomial `Σ w_k λ^k`.
    pub apply_activation_in_relevance: bool,
}

impl PolyFilter {
    pub fn new(weights: Vec<Vec<f64>>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Param("filter order must be at least 1".to_string()));
        }
        let n = weights[0].len();
        if weights.iter().any(|w| w.len() != n) {
            return Err(shape_err!("filter weight vectors have differing lengths"));
        }
        Ok(Self {
            weights,
            activation,
            apply_activation_in_relevance: true,
        })
    }

    /// Every weight equal to `value`.
    pub fn constant(order: usize, n: usize, value: f64, activation: Activation) -> Result<Self> {
        Self::new(vec![vec![value; n]; order], activation)
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    pub fn len(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_len(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.len() {
            return Err(shape_err!(
                "filter has {} weights per order but spectrum has {} eigenvalues",
                self.len(),
                lambda.len()
            ));
        }
        Ok(())
    }

    /// Activation-free polynomial `Σ_k w_k ⊙ λ^k`.
    pub fn polynomial(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.check_len(lambda)?;
        Ok(lambda
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                self.weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w[i] * powi(l, k as u32 + 1))
                    .sum()
            })
            .collect())
    }

    /// The diagonal used by the relevance matrix.
    pub fn relevance_diagonal(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        if self.apply_activation_in_relevance {
            filter_response(self, lambda)
        } else {
            self.polynomial(lambda)
        }
    }

    /// `∂ q_i / ∂ w_{k,i}` for the relevance diagonal, indexed `[k-1][i]`.
    pub fn relevance_diagonal_grad(&self, lambda: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(lambda)?;
        Ok(self
            .weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                lambda
                    .iter()
                    .zip(w)
                    .map(|(&l, &wi)| {
                        let lk = powi(l, k as u32 + 1);
                        if self.apply_activation_in_relevance {
                            self.activation.derivative(wi * lk) * lk
                        } else {
                            lk
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

pub fn filter_response(f: &PolyFilter, lambda: &[f64]) -> Result<Vec<f64>> {
    f.check_len(lambda)?;
    Ok(lambda
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            f.weights
                .iter()
                .enumerate()
                .map(|(k, w)| f.activation.apply(w[i] * powi(l, k as u32 + 1)))
                .sum()
        })
        .collect())
}

/// `1 / (1 + (1 - λ))`: the GCN-style low-pass response on the Laplacian
/// spectrum.
pub fn low_pass_reference(lambda: &[f64]) -> Vec<f64> {
    lambda.iter().map(|l| 1.0 / (1.0 + (1.0 - l))).collect()
}

/// Indicator of Laplacian eigenvalues `1 - λ` in `[lo, hi)`.
///
/// A band starting at or below 0 is open below and one ending at or above 2
/// is closed (open) above, so round-off at the spectrum ends never drops an
/// eigenvalue.
pub fn band_filter(lambda: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo < hi) {
        return Err(Error::Param(format!(
            "band needs lo < hi, got [{lo}, {hi})"
        )));
    }
    Ok(lambda
        .iter()
        .map(|l| {
            let mu = 1.0 - l;
            let above = lo <= 0.0 || mu >= lo;
            let below = hi >= 2.0 || mu < hi;
            if above && below {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// `R = U diag(q) Uᵀ` with `q` the filter's relevance diagonal.
pub fn relevance_matrix(dec: &SpectralDecomposition, f: &PolyFilter) -> Result<Matrix> {
    let q = f.relevance_diagonal(&dec.eigenvalues)?;
    dec.synthesize(&q)
}
