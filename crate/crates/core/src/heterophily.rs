//! Spatial and spectral heterophily, plus numerical checks of the filter
//! response bound, the label-aligning filter construction and the
//! generalization error bound.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;
use crate::math::{atanh, cosine, exp, ln, powi, sigmoid_neg};
use crate::spectral::{
    filter_response, graph_fourier, Activation, PolyFilter, SpectralDecomposition,
};

/// Default threshold below which `|ĥ_i|`, `|δ_i|` and friends count as zero.
pub const DEFAULT_EPS: f64 = 1e-9;

/// Slack allowed when checking the weighted AM-GM step, and on the `[0, 1]`
/// range of the filter response.
pub const AMGM_SLACK: f64 = 1e-12;

/// Fraction of each node's neighbors carrying a different label. Isolated
/// nodes get 0.
pub fn node_heterophily(g: &Graph) -> Vec<f64> {
    let labels = g.labels();
    let n = g.num_nodes();
    let mut cross = alloc::vec![0usize; n];
    let mut deg = alloc::vec![0usize; n];
    for &(u, v) in g.edges() {
        deg[u] += 1;
        deg[v] += 1;
        if labels[u] != labels[v] {
            cross[u] += 1;
            cross[v] += 1;
        }
    }
    cross
        .iter()
        .zip(&deg)
        .map(|(&c, &d)| if d == 0 { 0.0 } else { c as f64 / d as f64 })
        .collect()
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// `ĥ = Uᵀ h`.
pub fn spectral_heterophily(dec: &SpectralDecomposition, h: &[f64]) -> Result<Vec<f64>> {
    graph_fourier(&dec.eigenvectors, h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterophilyProfile {
    pub h: Vec<f64>,
    pub h_hat: Vec<f64>,
    pub mean_h: f64,
}

pub fn heterophily_profile(g: &Graph, dec: &SpectralDecomposition) -> Result<HeterophilyProfile> {
    let h = node_heterophily(g);
    let h_hat = spectral_heterophily(dec, &h)?;
    let mean_h = mean(&h);
    Ok(HeterophilyProfile { h, h_hat, mean_h })
}

/// Outcome of checking one inequality numerically. `holds` means
/// `lhs >= rhs`; when `rhs` is `None` the inequality was not evaluated and
/// `holds` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: Option<f64>,
    pub holds: bool,
    pub excluded_indices: Vec<usize>,
    pub notes: Vec<String>,
}

/// Average-response lower bound plus the weighted AM-GM step behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageResponseReport {
    pub bound: BoundReport,
    /// `Σ (g_i / Σg) |ĥ_i|`
    pub amgm_arithmetic: f64,
    /// `Π |ĥ_i|^(g_i / Σg)`
    pub amgm_geometric: f64,
    pub amgm_holds: bool,
    /// `log Σ g|ĥ| − log Σ g`
    pub log_denominator: f64,
    /// Whether `Σ g_i log|ĥ_i| >= Σ log|ĥ_i|`, the step that turns the
    /// weighted AM-GM into the stated bound.
    pub unweighting_step_holds: bool,
}

pub fn check_average_response(g: &[f64], h_hat: &[f64], eps: f64) -> Result<AverageResponseReport> {
    if g.len() != h_hat.len() {
        return Err(shape_err!(
            "{} filter responses but {} spectral coefficients",
            g.len(),
            h_hat.len()
        ));
    }
    let range = -AMGM_SLACK..=1.0 + AMGM_SLACK;
    if let Some((i, &gi)) = g.iter().enumerate().find(|(_, x)| !range.contains(x)) {
        return Err(Error::Precondition(format!(
            "filter response must lie in [0, 1]; g[{i}] = {gi}"
        )));
    }
    let n = g.len();
    let (included, excluded): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| h_hat[i].abs() >= eps);
    if included.is_empty() {
        return Err(Error::Degenerate(
            "every |ĥ_i| is below the exclusion threshold".to_string(),
        ));
    }
    let g_sum: f64 = included.iter().map(|&i| g[i]).sum();
    if g_sum <= 0.0 {
        return Err(Error::Degenerate(
            "filter response sums to zero".to_string(),
        ));
    }
    let weighted_sum: f64 = included.iter().map(|&i| g[i] * h_hat[i].abs()).sum();
    let amgm_arithmetic = weighted_sum / g_sum;
    let log_geo: f64 = included
        .iter()
        .map(|&i| g[i] / g_sum * ln(h_hat[i].abs()))
        .sum();
    let amgm_geometric = exp(log_geo);
    let amgm_holds = amgm_arithmetic - amgm_geometric >= -AMGM_SLACK * amgm_arithmetic.max(1.0);

    let log_sum: f64 = included.iter().map(|&i| ln(h_hat[i].abs())).sum();
    let weighted_log_sum: f64 = included.iter().map(|&i| g[i] * ln(h_hat[i].abs())).sum();
    let unweighting_step_holds = weighted_log_sum >= log_sum;
    let log_denominator = ln(weighted_sum) - ln(g_sum);

    let lhs = g.iter().sum::<f64>() / n as f64;
    let mut notes = Vec::new();
    notes.push(format!(
        "weighted AM-GM: arithmetic {amgm_arithmetic:.17e} vs geometric {amgm_geometric:.17e} ({})",
        if amgm_holds { "holds" } else { "VIOLATED" }
    ));
    if !unweighting_step_holds {
        notes.push(
            "unweighting step fails (needs Σ g log|ĥ| >= Σ log|ĥ|); stated bound is not implied"
                .to_string(),
        );
    }
    let (rhs, holds) = if log_denominator > eps {
        let rhs = log_sum / (n as f64 * log_denominator);
        (Some(rhs), lhs >= rhs)
    } else {
        notes.push(format!(
            "log-denominator {log_denominator:e} <= {eps:e}; stated bound not evaluated"
        ));
        (None, false)
    };
    if !excluded.is_empty() {
        notes.push(format!(
            "{} indices with |ĥ_i| < {eps:e} excluded",
            excluded.len()
        ));
    }
    Ok(AverageResponseReport {
        bound: BoundReport {
            lhs,
            rhs,
            holds,
            excluded_indices: excluded,
            notes,
        },
        amgm_arithmetic,
        amgm_geometric,
        amgm_holds,
        log_denominator,
        unweighting_step_holds,
    })
}

/// Smallest `|λ|` still treated as nonzero by [`construct_aligning_weights`].
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-12;

/// Builds tanh filter weights whose response is exactly proportional to the
/// label vector: each of the `order` terms contributes `c·y_i/K` with
/// `c = K / (2(C−1))`. Returns the filter and its cosine alignment with the
/// labels.
pub fn construct_aligning_weights(
    labels: &[usize],
    lambda: &[f64],
    order: usize,
) -> Result<(PolyFilter, f64)> {
    if labels.len() != lambda.len() {
        return Err(shape_err!(
            "{} labels but {} eigenvalues",
            labels.len(),
            lambda.len()
        ));
    }
    if order == 0 {
        return Err(Error::Param("filter order must be at least 1".to_string()));
    }
    if let Some(i) = lambda.iter().position(|l| l.abs() <= ZERO_EIGENVALUE_TOL) {
        return Err(Error::SingularSpectrum(i));
    }
    let max_label = labels.iter().copied().max().unwrap_or(0);
    if max_label == 0 {
        return Err(Error::Degenerate(
            "label vector is all zero; alignment undefined".to_string(),
        ));
    }
    let classes_minus_one = max_label as f64;
    let scale = order as f64 / (2.0 * classes_minus_one);
    let weights: Vec<Vec<f64>> = (1..=order as u32)
        .map(|k| {
            labels
                .iter()
                .zip(lambda)
                .map(|(&y, &l)| atanh(scale * y as f64 / order as f64) / powi(l, k))
                .collect()
        })
        .collect();
    let filter = PolyFilter::new(weights, Activation::Tanh)?;
    let response = filter_response(&filter, lambda)?;
    let y: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let alignment = cosine(&response, &y)
        .ok_or_else(|| Error::Degenerate("constructed response is zero".to_string()))?;
    Ok((filter, alignment))
}

/// `ψ_a(x) = min(max(x, −a), a)`.
#[inline]
pub fn clamp_psi(x: f64, a: f64) -> f64 {
    x.max(-a).min(a)
}

/// `1/4 + 217/2304 + 1/(1+e)²`.
pub fn error_bound_constant() -> f64 {
    let e = core::f64::consts::E;
    0.25 + 217.0 / 2304.0 + 1.0 / ((1.0 + e) * (1.0 + e))
}

/// Sigmoid squared error of a one-feature binary instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidError {
    /// `Σ_l (1/(1+e^{z_l}) − y0_l)²`
    pub total: f64,
    /// `(2/n) · total`
    pub normalized: f64,
}

fn check_lengths(n: usize, named: &[(&str, usize)]) -> Result<()> {
    for (name, len) in named {
        if *len != n {
            return Err(shape_err!("{name} has length {len}, expected {n}"));
        }
    }
    Ok(())
}

/// Filtered feature difference `z = U diag(g) Uᵀ (x1 − x0)`.
pub fn filtered_difference(
    gdiag_lap: &[f64],
    u: &Matrix,
    x0: &[f64],
    x1: &[f64],
) -> Result<Vec<f64>> {
    let diff: Vec<f64> = x1.iter().zip(x0).map(|(a, b)| a - b).collect();
    let mut spec = u.matvec_transposed(&diff)?;
    for (s, g) in spec.iter_mut().zip(gdiag_lap) {
        *s *= g;
    }
    u.matvec(&spec)
}

pub fn sigmoid_error_oracle(
    gdiag_lap: &[f64],
    dec: &SpectralDecomposition,
    x0: &[f64],
    x1: &[f64],
    y0: &[f64],
    y1: &[f64],
) -> Result<SigmoidError> {
    let n = dec.len();
    check_lengths(
        n,
        &[
            ("filter response", gdiag_lap.len()),
            ("class-0 features", x0.len()),
            ("class-1 features", x1.len()),
            ("class-0 indicator", y0.len()),
            ("class-1 indicator", y1.len()),
        ],
    )?;
    let z = filtered_difference(gdiag_lap, &dec.eigenvectors, x0, x1)?;
    let total: f64 = z
        .iter()
        .zip(y0)
        .map(|(&zl, &yl)| {
            let r = sigmoid_neg(zl) - yl;
            r * r
        })
        .sum();
    Ok(SigmoidError {
        total,
        normalized: 2.0 * total / n as f64,
    })
}

/// Right-hand side of the error bound and the pieces it is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub c1: f64,
    /// `min ψ(η_i)·δ_i` over indices with nonzero `g`, `δ`, `η`.
    pub m_g: f64,
    /// `log Σ g|ĥ| − log Σ g` over the log index set.
    pub log_denominator: f64,
    /// `None` when the log-denominator does not exceed `eps`.
    pub bound: Option<f64>,
    /// Same right-hand side with `2·c1`: the constant obtained when the
    /// per-node bound `c1·n` is carried through the `2/n` normalization.
    pub proof_chain_bound: Option<f64>,
    pub included: Vec<usize>,
    pub excluded: Vec<usize>,
    pub notes: Vec<String>,
}

pub fn error_bound(
    gdiag_lap: &[f64],
    delta: &[f64],
    eta: &[f64],
    h_hat: &[f64],
    eps: f64,
) -> Result<ErrorBound> {
    let n = gdiag_lap.len();
    check_lengths(
        n,
        &[("δ", delta.len()), ("η", eta.len()), ("ĥ", h_hat.len())],
    )?;
    let c1 = error_bound_constant();
    let mut notes = Vec::new();

    let active: Vec<usize> = (0..n)
        .filter(|&i| gdiag_lap[i].abs() > eps && delta[i].abs() > eps && eta[i].abs() > eps)
        .collect();
    if active.is_empty() {
        return Err(Error::Degenerate(
            "no index has nonzero g, δ and η".to_string(),
        ));
    }
    let eta_clamped: Vec<f64> = (0..n)
        .map(|i| {
            let a = (gdiag_lap[i] * delta[i]).abs();
            if a > 0.0 {
                clamp_psi(eta[i], 1.0 / a)
            } else {
                eta[i]
            }
        })
        .collect();
    let m_g = active
        .iter()
        .map(|&i| eta_clamped[i] * delta[i])
        .fold(f64::INFINITY, f64::min);

    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for i in 0..n {
        if delta[i].abs() <= eps || eta_clamped[i].abs() <= eps {
            continue;
        }
        if h_hat[i].abs() < eps {
            excluded.push(i);
        } else {
            included.push(i);
        }
    }
    if included.is_empty() {
        return Err(Error::Degenerate("log index set is empty".to_string()));
    }
    if !excluded.is_empty() {
        notes.push(format!(
            "{} indices with |ĥ_i| < {eps:e} excluded from log terms",
            excluded.len()
        ));
    }
    let g_sum: f64 = included.iter().map(|&i| gdiag_lap[i]).sum();
    let weighted: f64 = included
        .iter()
        .map(|&i| gdiag_lap[i] * h_hat[i].abs())
        .sum();
    let log_sum: f64 = included.iter().map(|&i| ln(h_hat[i].abs())).sum();
    let log_denominator = if g_sum > 0.0 && weighted > 0.0 {
        ln(weighted) - ln(g_sum)
    } else {
        f64::NAN
    };
    let spectral_term = m_g * log_sum / (2.0 * n as f64 * log_denominator);
    let bound = if log_denominator > eps {
        Some(c1 - spectral_term)
    } else {
        notes.push(format!(
            "log-denominator {log_denominator:e} does not exceed {eps:e}; bound not evaluated"
        ));
        None
    };
    if m_g < 0.0 {
        notes.push("m_g < 0: the proof's scaling step reverses direction".to_string());
    }
    Ok(ErrorBound {
        c1,
        m_g,
        log_denominator,
        bound,
        proof_chain_bound: bound.map(|_| 2.0 * c1 - spectral_term),
        included,
        excluded,
        notes,
    })
}

/// Class indicator and masked feature vectors of a binary graph with one
/// feature column: `x0 = x ⊙ y0`, `x1 = x ⊙ y1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryInstance {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

/// Requires two classes of equal size and a single feature column.
pub fn binary_instance(g: &Graph) -> Result<BinaryInstance> {
    if g.num_classes() != 2 || g.feature_dim() != 1 {
        return Err(Error::Precondition(format!(
            "the error bound needs 2 classes and 1 feature column, got {} and {}",
            g.num_classes(),
            g.feature_dim()
        )));
    }
    let ones = g.labels().iter().filter(|&&y| y == 1).count();
    if 2 * ones != g.num_nodes() {
        return Err(Error::Precondition(format!(
            "the error bound pairs nodes across classes; class sizes are {} and {ones}",
            g.num_nodes() - ones
        )));
    }
    let y1: Vec<f64> = g.labels().iter().map(|&y| y as f64).collect();
    let y0: Vec<f64> = y1.iter().map(|y| 1.0 - y).collect();
    let x = g.features().as_slice();
    Ok(BinaryInstance {
        x0: x.iter().zip(&y0).map(|(a, b)| a * b).collect(),
        x1: x.iter().zip(&y1).map(|(a, b)| a * b).collect(),
        y0,
        y1,
    })
}

/// Error and bound evaluated together on a one-feature binary instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub error: f64,
    pub bound: Option<f64>,
    /// `error <= bound`; false when the bound was not evaluated.
    pub holds: bool,
    pub proof_chain_bound: Option<f64>,
    pub proof_chain_holds: bool,
    pub c1: f64,
    pub excluded: Vec<usize>,
    pub notes: Vec<String>,
}

/// Computes `δ = Uᵀ(y1 − y0)` and `η = Uᵀ(x1 − x0)`, then the error oracle
/// and the bound.
#[allow(clippy::too_many_arguments)]
pub fn check_error_bound(
    gdiag_lap: &[f64],
    dec: &SpectralDecomposition,
    x0: &[f64],
    x1: &[f64],
    y0: &[f64],
    y1: &[f64],
    h_hat: &[f64],
    eps: f64,
) -> Result<ErrorBoundReport> {
    let err = sigmoid_error_oracle(gdiag_lap, dec, x0, x1, y0, y1)?;
    let u = &dec.eigenvectors;
    let dy: Vec<f64> = y1.iter().zip(y0).map(|(a, b)| a - b).collect();
    let dx: Vec<f64> = x1.iter().zip(x0).map(|(a, b)| a - b).collect();
    let delta = u.matvec_transposed(&dy)?;
    let eta = u.matvec_transposed(&dx)?;
    let b = error_bound(gdiag_lap, &delta, &eta, h_hat, eps)?;
    let holds = b.bound.is_some_and(|rhs| err.normalized <= rhs);
    Ok(ErrorBoundReport {
        error: err.normalized,
        bound: b.bound,
        holds,
        proof_chain_bound: b.proof_chain_bound,
        proof_chain_holds: b.proof_chain_bound.is_some_and(|rhs| err.normalized <= rhs),
        c1: b.c1,
        excluded: b.excluded,
        notes: b.notes,
    })
}
