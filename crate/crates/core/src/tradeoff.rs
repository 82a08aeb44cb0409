//! Closed-form and root-finding layer for the trade-off curves: the phase
//! transition ε⋆(δ), the power limit u⋆_DT, the Lasso threshold t⋆(u), the
//! piecewise upper curve and its two-level construction, and region labels.

use serde::{Deserialize, Serialize};

use crate::dists::ProblemShape;
use crate::error::{Error, Result, domain};
use crate::normal::{cdf, pdf, quantile, sf};

/// A (TPP, FDP) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub u: f64,
    pub q: f64,
}

/// Two-level penalty shape (r, w) reaching the upper curve above u⋆_DT, with
/// the top threshold t⋆(u⋆_DT).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelConstruction {
    pub r: f64,
    pub w: f64,
    pub alpha_top: f64,
}

/// Region of the (TPP, FDP) plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Unachievable,
    LassoAndSlope,
    SlopeOnly,
    BetweenBounds,
}

const S_LO: f64 = 1e-6;
const S_HI: f64 = 20.0;

fn delta_of_s(s: f64) -> f64 {
    2.0 * pdf(s) / (2.0 * pdf(s) + s * (2.0 * cdf(s) - 1.0))
}

fn eps_of_s(s: f64) -> f64 {
    (2.0 * pdf(s) - 2.0 * s * sf(s)) / (2.0 * pdf(s) + s * (2.0 * cdf(s) - 1.0))
}

/// Parameter s > 0 of the parametric phase-transition curve with δ(s) = δ.
fn s_of_delta(delta: f64) -> f64 {
    // δ(s) decreases from 1 to 0 on (0, ∞).
    let (mut lo, mut hi) = (S_LO, S_HI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if delta_of_s(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Phase-transition sparsity ε⋆(δ). For δ ≥ 1 every ε is subcritical and the
/// sentinel 1 is returned.
pub fn epsilon_star(delta: f64) -> Result<f64> {
    if !(delta > 0.0) || delta.is_nan() {
        return domain(format!("delta must be positive, got {delta}"));
    }
    if delta >= 1.0 {
        return Ok(1.0);
    }
    Ok(eps_of_s(s_of_delta(delta)))
}

/// True when δ < 1 and ε > ε⋆(δ).
pub fn is_supercritical(shape: &ProblemShape) -> Result<bool> {
    shape.validate()?;
    Ok(shape.delta < 1.0 && shape.epsilon > epsilon_star(shape.delta)?)
}

/// Largest asymptotic Lasso TPP; 1 in the subcritical regime.
pub fn u_star_dt(shape: &ProblemShape) -> Result<f64> {
    shape.validate()?;
    let es = epsilon_star(shape.delta)?;
    let (d, e) = (shape.delta, shape.epsilon);
    if d >= 1.0 || e <= es {
        return Ok(1.0);
    }
    Ok(1.0 - (1.0 - d) * (e - es) / (e * (1.0 - es)))
}

/// Numerator and bracketed denominator term of the threshold equation.
fn threshold_terms(x: f64, shape: &ProblemShape) -> (f64, f64) {
    let (d, e) = (shape.delta, shape.epsilon);
    let x2 = 1.0 + x * x;
    let num = 2.0 * (1.0 - e) * (x2 * sf(x) - x * pdf(x)) + e * x2 - d;
    let den = x2 * (1.0 - 2.0 * sf(x)) + 2.0 * x * pdf(x);
    (num, den)
}

/// TPP u for which `x` solves the threshold equation.
pub(crate) fn lasso_tpp_at_threshold(x: f64, shape: &ProblemShape) -> f64 {
    let (num, den) = threshold_terms(x, shape);
    1.0 - num * (1.0 - 2.0 * sf(x)) / (shape.epsilon * den)
}

/// Left side minus right side of the threshold equation.
pub fn t_star_residual(x: f64, u: f64, shape: &ProblemShape) -> f64 {
    let (num, den) = threshold_terms(x, shape);
    num / (shape.epsilon * den) - (1.0 - u) / (1.0 - 2.0 * sf(x))
}

const X_MIN: f64 = 1e-6;
const X_SCAN_MAX: f64 = 40.0;

/// Location and value of the maximum of x ↦ u(x); the larger root of the
/// threshold equation lives to the right of it.
fn tpp_peak(shape: &ProblemShape) -> (f64, f64) {
    let n = 800;
    let ratio = (X_SCAN_MAX / X_MIN).ln();
    let grid: Vec<f64> = (0..=n)
        .map(|k| X_MIN * (ratio * k as f64 / n as f64).exp())
        .collect();
    let mut best = 0;
    for k in 1..grid.len() {
        if lasso_tpp_at_threshold(grid[k], shape) > lasso_tpp_at_threshold(grid[best], shape) {
            best = k;
        }
    }
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(n)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (
        lasso_tpp_at_threshold(c, shape),
        lasso_tpp_at_threshold(d, shape),
    );
    for _ in 0..200 {
        if b - a < 1e-13 * (1.0 + b) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = lasso_tpp_at_threshold(c, shape);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = lasso_tpp_at_threshold(d, shape);
        }
    }
    let x = 0.5 * (a + b);
    (x, lasso_tpp_at_threshold(x, shape))
}

/// Largest positive root t⋆(u) of the Lasso threshold equation. Returns +∞ at
/// u = 0 and a domain error when u exceeds the largest attainable Lasso TPP.
pub fn t_star(u: f64, shape: &ProblemShape) -> Result<f64> {
    shape.validate()?;
    if !(0.0..=1.0).contains(&u) {
        return domain(format!("u must lie in [0,1], got {u}"));
    }
    if u == 0.0 {
        return Ok(f64::INFINITY);
    }
    let ustar = u_star_dt(shape)?;
    if u > ustar + 1e-9 {
        return domain(format!("u = {u} exceeds the power limit {ustar:.6}"));
    }
    // Roots exist slightly past u⋆_DT but are not attained by any Lasso.
    let (x_peak, u_peak) = tpp_peak(shape);
    if u > u_peak {
        if u - u_peak < 1e-9 {
            return Ok(x_peak);
        }
        return domain(format!(
            "u = {u} exceeds the largest Lasso TPP {u_peak:.6}"
        ));
    }
    // u(x) decreases to 0 to the right of the peak.
    let mut hi = x_peak.max(1.0);
    while lasso_tpp_at_threshold(hi, shape) > u {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::Numerical(format!("cannot bracket t*({u})")));
        }
    }
    let mut lo = x_peak;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lasso_tpp_at_threshold(mid, shape) > u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + hi) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// FDP of a zero-threshold α at TPP u: 2(1−ε)Φ(−α) / (2(1−ε)Φ(−α) + εu).
pub fn fdp_from_threshold(alpha: f64, u: f64, epsilon: f64) -> f64 {
    let null = 2.0 * (1.0 - epsilon) * sf(alpha);
    let total = null + epsilon * u;
    if total <= 0.0 { 0.0 } else { null / total }
}

/// Lasso trade-off curve, defined for u ≤ u⋆_DT; `None` above it.
pub fn q_lasso(u: f64, shape: &ProblemShape) -> Result<Option<f64>> {
    let ustar = u_star_dt(shape)?;
    if !(0.0..=1.0).contains(&u) {
        return domain(format!("u must lie in [0,1], got {u}"));
    }
    if u > ustar {
        return Ok(None);
    }
    if u == 0.0 {
        return Ok(Some(0.0));
    }
    if u == 1.0 {
        return Ok(Some(1.0 - shape.epsilon));
    }
    let t = t_star(u, shape)?;
    Ok(Some(fdp_from_threshold(t, u, shape.epsilon)))
}

/// Möbius piece of the upper curve.
pub fn q_mobius(u: f64, shape: &ProblemShape) -> Result<f64> {
    shape.validate()?;
    let es = epsilon_star(shape.delta)?;
    let e = shape.epsilon;
    Ok((e * (1.0 - e) * u - es * (1.0 - e)) / (e * (1.0 - es) * u - es * (1.0 - e)))
}

/// Upper trade-off curve: the Lasso curve up to u⋆_DT, the Möbius curve above.
pub fn q_upper(u: f64, shape: &ProblemShape) -> Result<f64> {
    let ustar = u_star_dt(shape)?;
    if !(0.0..=1.0).contains(&u) {
        return domain(format!("u must lie in [0,1], got {u}"));
    }
    if u <= ustar {
        return Ok(q_lasso(u, shape)?.unwrap_or(1.0 - shape.epsilon));
    }
    q_mobius(u, shape)
}

/// Two-level (r, w) reaching q_upper(u) for u ≥ u⋆_DT.
pub fn mobius_construction(u: f64, shape: &ProblemShape) -> Result<TwoLevelConstruction> {
    if !is_supercritical(shape)? {
        return domain("the two-level construction needs a supercritical regime");
    }
    let ustar = u_star_dt(shape)?;
    if !(u >= ustar - 1e-12 && u <= 1.0) {
        return domain(format!("u must lie in [{ustar:.6}, 1], got {u}"));
    }
    let es = epsilon_star(shape.delta)?;
    let e = shape.epsilon;
    let t = t_star(ustar, shape)?;
    let level = ((2.0 * e - es - e * u) / (2.0 * (e - es))).clamp(0.5, 1.0);
    let r = (quantile(level) / t).min(1.0);
    let w = if 1.0 - r < 1e-7 {
        // The bracket behaves like Φ(−t)(1 − r) as r → 1.
        es + 2.0 * (1.0 - es) * sf(t)
    } else {
        es + 2.0 * (1.0 - es) / (1.0 - r)
            * (sf(t) - r * sf(r * t) - (pdf(t) - pdf(r * t)) / t)
    };
    Ok(TwoLevelConstruction {
        r,
        w,
        alpha_top: t,
    })
}

/// Labels a point given the lower curve value at its TPP.
pub fn classify_region(point: TradeoffPoint, shape: &ProblemShape, q_lower: f64) -> Result<Region> {
    let TradeoffPoint { u, q } = point;
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&q) {
        return domain("point coordinates must lie in [0,1]");
    }
    if q < q_lower {
        return Ok(Region::Unachievable);
    }
    let upper = q_upper(u, shape)?;
    if q < upper {
        return Ok(Region::BetweenBounds);
    }
    let ustar = u_star_dt(shape)?;
    if u <= ustar {
        let qs = q_upper(ustar, shape)?;
        // Segment from (0, 1) to (u⋆_DT, q⋆(u⋆_DT)).
        let line = 1.0 + (qs - 1.0) * u / ustar;
        if q <= line || q > 1.0 - shape.epsilon {
            return Ok(Region::LassoAndSlope);
        }
    }
    Ok(Region::SlopeOnly)
}
