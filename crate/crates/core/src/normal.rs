//! Standard normal density, distribution and quantile functions, plus
//! Gauss-Hermite expectations over a standard normal variable.

use std::sync::OnceLock;

use gauss_quad::GaussHermite;
use statrs::distribution::{ContinuousCDF, Normal};
use libm::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Density φ(x).
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Distribution function Φ(x).
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Survival function Φ(−x), accurate in the upper tail.
#[inline]
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// Mills ratio R(s) = Φ(−s)/φ(s).
pub fn mills_ratio(s: f64) -> f64 {
    if s < 8.0 {
        return sf(s) / pdf(s);
    }
    // Continued fraction R(s) = 1/(s + 1/(s + 2/(s + 3/(s + ...)))).
    let mut acc = s;
    for k in (1..=40).rev() {
        acc = s + k as f64 / acc;
    }
    1.0 / acc
}

/// Quantile function Φ⁻¹(p), polished by Newton steps on [`cdf`].
pub fn quantile(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -quantile(1.0 - p);
    }
    let std = Normal::standard();
    let mut x = std.inverse_cdf(p);
    if !x.is_finite() {
        x = -(-2.0 * p.ln()).sqrt();
    }
    for _ in 0..3 {
        let d = pdf(x);
        if d <= 0.0 {
            break;
        }
        let step = (cdf(x) - p) / d;
        x -= step;
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Gauss-Hermite rule rescaled to a standard normal: nodes x_k and weights w_k
/// with Σ w_k f(x_k) ≈ E f(Z).
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn new(degree: usize) -> Self {
        let deg = std::num::NonZeroUsize::new(degree.max(1)).expect("positive degree");
        let rule = GaussHermite::new(deg);
        let scale = std::f64::consts::PI.sqrt();
        let (nodes, weights) = rule
            .iter()
            .map(|(x, w)| (x * std::f64::consts::SQRT_2, w / scale))
            .unzip();
        NormalRule { nodes, weights }
    }

    /// E f(Z) for Z standard normal.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Shared 96-point rule.
pub fn normal_rule() -> &'static NormalRule {
    static RULE: OnceLock<NormalRule> = OnceLock::new();
    RULE.get_or_init(|| NormalRule::new(96))
}

/// E f(Z) by adaptive composite Gauss-Legendre on [−12, 12], for integrands
/// with kinks where Gauss-Hermite converges slowly. `breaks` are kink locations.
pub fn expect_piecewise(f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    let mut pts: Vec<f64> = vec![-12.0, 12.0];
    pts.extend(breaks.iter().copied().filter(|b| b.abs() < 12.0));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let rule = legendre_rule();
    let mut total = 0.0;
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let pieces = 16;
        let h = (b - a) / pieces as f64;
        for k in 0..pieces {
            let lo = a + k as f64 * h;
            let mid = lo + 0.5 * h;
            total += rule
                .iter()
                .map(|&(x, w)| {
                    let z = mid + 0.5 * h * x;
                    w * f(z) * pdf(z)
                })
                .sum::<f64>()
                * 0.5
                * h;
        }
    }
    total
}

pub(crate) fn legendre_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let deg = std::num::NonZeroUsize::new(20).expect("positive degree");
        gauss_quad::GaussLegendre::new(deg)
            .iter()
            .map(|(x, w)| (*x, *w))
            .collect()
    })
}
