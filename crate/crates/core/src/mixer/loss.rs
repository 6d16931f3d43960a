use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::math::{exp, ln};

fn check(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::Degenerate("metric mask is empty".to_string()));
    }
    if labels.len() != logits.rows() {
        return Err(shape_err!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        ));
    }
    for &i in mask {
        if i >= logits.rows() {
            return Err(Error::Index {
                what: "mask entry".to_string(),
                index: i,
                bound: logits.rows(),
            });
        }
        if labels[i] >= logits.cols() {
            return Err(Error::Index {
                what: "label".to_string(),
                index: labels[i],
                bound: logits.cols(),
            });
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over the rows in `mask`, with its gradient
/// with respect to every logit (zero outside the mask).
pub fn cross_entropy(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<(f64, Matrix)> {
    check(logits, labels, mask)?;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let scale = 1.0 / mask.len() as f64;
    let mut loss = 0.0;
    for &i in mask {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| exp(z - max)).collect();
        let total: f64 = exps.iter().sum();
        loss += ln(total) + max - row[labels[i]];
        let g = grad.row_mut(i);
        for (c, e) in exps.iter().enumerate() {
            g[c] += scale * e / total;
        }
        g[labels[i]] -= scale;
    }
    Ok((loss * scale, grad))
}

/// Fraction of masked rows whose argmax (lowest class on ties) matches.
pub fn accuracy(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    check(logits, labels, mask)?;
    let hits = mask
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = c;
                }
            }
            best == labels[i]
        })
        .count();
    Ok(hits as f64 / mask.len() as f64)
}
