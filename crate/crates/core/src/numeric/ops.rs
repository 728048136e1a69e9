//! Pure forward kernels. The tape calls these same functions, so the pure
//! and recorded paths produce bit-identical values.

use crate::error::{Error, Result};
use crate::numeric::param::Parameter;

/// Floor applied to a probability before taking its log, keeping losses
/// finite when a head assigns (numerically) zero mass to the true class.
pub const PROB_FLOOR: f64 = 1e-12;

/// y = W x + b for a (rows x cols) matrix, len(x) = cols, len(b) = rows.
pub fn affine_apply(w: &Parameter, b: &Parameter, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() || b.len() != w.rows || b.cols != 1 {
        return Err(Error::Config(format!(
            "affine: W is {}x{}, b has {}, x has {}",
            w.rows,
            w.cols,
            b.len(),
            x.len()
        )));
    }
    let mut out = b.values.clone();
    for r in 0..w.rows {
        let row = &w.values[r * w.cols..(r + 1) * w.cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[r] += acc;
    }
    Ok(out)
}

/// y = W x (no bias).
pub fn matvec_apply(w: &Parameter, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(Error::Config(format!(
            "matvec: W is {}x{}, x has {}",
            w.rows,
            w.cols,
            x.len()
        )));
    }
    let mut out = vec![0.0; w.rows];
    for r in 0..w.rows {
        let row = &w.values[r * w.cols..(r + 1) * w.cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[r] = acc;
    }
    Ok(out)
}

/// Elementwise max(0, x).
pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Max-subtracted softmax. Requires at least two entries and finite input.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.len() < 2 {
        return Err(Error::Usage(format!("softmax needs >= 2 logits, got {}", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax: non-finite logit".to_string()));
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// H(y, P) = -log P[label], with P[label] floored at [`PROB_FLOOR`].
pub fn cross_entropy(label: usize, probs: &[f64]) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Usage(format!(
            "cross_entropy: label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let p = probs[label];
    if !p.is_finite() {
        return Err(Error::Numeric("cross_entropy: non-finite probability".to_string()));
    }
    Ok(-(p.max(PROB_FLOOR)).ln())
}

/// Shannon entropy -sum p ln p in nats, with 0 ln 0 = 0.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}
