//! Sorted-ℓ1 norm, its proximal operator, and related helpers.
//!
//! The prox sorts |v| in decreasing order, subtracts the penalty, pools
//! increasing runs with a stack-based pool-adjacent-violators pass, clamps at
//! zero and restores the original order and signs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, domain};

/// Nonincreasing, nonnegative penalty sequence with a positive entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyVector(Vec<f64>);

impl PenaltyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return domain("penalty entries must be finite and nonnegative");
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return domain("penalty must be nonincreasing");
        }
        if !values.iter().any(|&v| v > 0.0) {
            return domain("penalty must have a positive entry");
        }
        Ok(PenaltyVector(values))
    }

    /// Constant penalty of length `p`.
    pub fn constant(value: f64, p: usize) -> Result<Self> {
        Self::new(vec![value; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Multiplies every entry by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return domain("scale factor must be positive");
        }
        Ok(PenaltyVector(self.0.iter().map(|v| v * c).collect()))
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        domain("input vector has non-finite entries")
    }
}

fn check_len(v: &[f64], theta: &PenaltyVector) -> Result<()> {
    if v.len() != theta.len() {
        return Err(Error::Dimension {
            expected: theta.len(),
            found: v.len(),
        });
    }
    Ok(())
}

/// Indices of `v` ordered by decreasing magnitude, ties kept in index order.
fn magnitude_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()));
    idx
}

/// J_θ(b) = Σ θ_i |b|_(i).
pub fn sorted_l1_norm(b: &[f64], theta: &PenaltyVector) -> Result<f64> {
    check_len(b, theta)?;
    check_finite(b)?;
    let mut mags: Vec<f64> = b.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(mags.iter().zip(theta.as_slice()).map(|(m, t)| m * t).sum())
}

/// Proximal operator argmin_b ½‖v − b‖² + J_θ(b).
pub fn prox(v: &[f64], theta: &PenaltyVector) -> Result<Vec<f64>> {
    check_len(v, theta)?;
    check_finite(v)?;
    Ok(prox_unchecked(v, theta.as_slice()))
}

/// Prox without validation; `theta` must be a valid penalty of matching length.
pub(crate) fn prox_unchecked(v: &[f64], theta: &[f64]) -> Vec<f64> {
    let order = magnitude_order(v);
    let diffs: Vec<f64> = order
        .iter()
        .zip(theta)
        .map(|(&i, &t)| v[i].abs() - t)
        .collect();
    let pooled = pool_nonincreasing(&diffs);
    let mut out = vec![0.0; v.len()];
    for (k, &i) in order.iter().enumerate() {
        let m = pooled[k].max(0.0);
        out[i] = if m > 0.0 { m.copysign(v[i]) } else { 0.0 };
    }
    out
}

/// Least-squares nonincreasing fit of `s` by pooling increasing runs.
pub(crate) fn pool_nonincreasing(s: &[f64]) -> Vec<f64> {
    // Each block: (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(s.len());
    for &x in s {
        blocks.push((x, 1));
        while blocks.len() >= 2 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 >= s1 / n1 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = (s0 + s1, n0 + n1);
        }
    }
    let mut out = Vec::with_capacity(s.len());
    for (sum, n) in blocks {
        let mean = sum / n as f64;
        out.extend(std::iter::repeat_n(mean, n));
    }
    out
}

/// Elementwise soft-thresholding sign(v_i)·max(|v_i| − θ, 0).
pub fn soft_threshold(v: &[f64], theta: f64) -> Result<Vec<f64>> {
    if !(theta >= 0.0) {
        return domain("threshold must be nonnegative");
    }
    check_finite(v)?;
    Ok(v.iter().map(|&x| soft(x, theta)).collect())
}

/// Soft-thresholding with a separate threshold per entry.
pub fn soft_threshold_each(v: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if v.len() != thresholds.len() {
        return Err(Error::Dimension {
            expected: v.len(),
            found: thresholds.len(),
        });
    }
    if thresholds.iter().any(|t| !(*t >= 0.0)) {
        return domain("thresholds must be nonnegative");
    }
    Ok(v.iter().zip(thresholds).map(|(&x, &t)| soft(x, t)).collect())
}

#[inline]
fn soft(x: f64, t: f64) -> f64 {
    let m = x.abs() - t;
    if m > 0.0 { m.copysign(x) } else { 0.0 }
}

/// Number of distinct nonzero magnitudes, ‖b‖₀*.
pub fn unique_nonzero_magnitudes(b: &[f64]) -> usize {
    let mut mags: Vec<f64> = b.iter().map(|x| x.abs()).filter(|&m| m > 0.0).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    mags.len()
}

/// Distinct nonzero magnitudes where values closer than `rel_tol·(1 + max|b|)`
/// count as one and magnitudes at or below `zero_tol` count as zero.
pub fn unique_nonzero_magnitudes_tol(b: &[f64], rel_tol: f64, zero_tol: f64) -> usize {
    let mut mags: Vec<f64> = b
        .iter()
        .map(|x| x.abs())
        .filter(|&m| m > zero_tol)
        .collect();
    if mags.is_empty() {
        return 0;
    }
    mags.sort_by(f64::total_cmp);
    let tol = rel_tol * (1.0 + mags[mags.len() - 1]);
    let mut count = 1;
    let mut anchor = mags[0];
    for &m in &mags[1..] {
        if m - anchor >= tol {
            count += 1;
            anchor = m;
        }
    }
    count
}

/// Effective penalty α̂ = |v| − |prox(v, θ)|, so that soft-thresholding `v`
/// entrywise at α̂ reproduces the prox.
pub fn effective_penalty(v: &[f64], theta: &PenaltyVector) -> Result<Vec<f64>> {
    let out = prox(v, theta)?;
    Ok(v.iter().zip(&out).map(|(x, b)| x.abs() - b.abs()).collect())
}
