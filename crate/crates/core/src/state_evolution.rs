//! AMP state evolution by the quantile approximation: the fixed point τ, the
//! calibration from the normalized penalty A to the original penalty Λ, the
//! zero-threshold, and the asymptotic TPP, FDP, sparsity and MSE.
//!
//! The SE term E⟨[prox(Π + τZ; τA) − Π]²⟩ is evaluated on the p − 1 quantiles
//! of Π + τZ, with the posterior mean and variance of Π given each quantile.

use serde::{Deserialize, Serialize};

use crate::dists::{PenaltySpec, PriorSpec, ProblemShape};
use crate::error::{Error, Result};
use crate::normal::{cdf, pdf, sf};
use crate::sorted_l1::{PenaltyVector, prox_unchecked, unique_nonzero_magnitudes_tol};
use crate::tradeoff::fdp_from_threshold;

/// Quantile resolution and fixed-point stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeConfig {
    pub p: usize,
    pub rtol: f64,
    pub max_iter: usize,
    /// Starting τ; defaults to τ₀ = √(σ² + EΠ²/δ).
    #[serde(default)]
    pub tau_init: Option<f64>,
}

impl Default for SeConfig {
    fn default() -> Self {
        SeConfig {
            p: 200_000,
            rtol: 1e-9,
            max_iter: 500,
            tau_init: None,
        }
    }
}

impl SeConfig {
    pub fn with_p(p: usize) -> Self {
        SeConfig {
            p,
            ..Self::default()
        }
    }
}

/// Fixed point of the state evolution and its derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeSolution {
    pub tau: f64,
    pub normalized_penalty_quantiles: PenaltyVector,
    /// Zero-threshold α of the limiting scalar function, in normalized units.
    pub zero_threshold: f64,
    /// κ = P(estimator entry ≠ 0).
    pub sparsity: f64,
    /// Normalized SE value E(π, A) = E[(prox − Π)²]/τ².
    pub se_value: f64,
    /// Fraction of distinct nonzero magnitudes, the ‖·‖₀*/p estimate.
    pub unique_fraction: f64,
    pub iterations: usize,
    /// τ iterates starting from τ₀.
    pub trace: Vec<f64>,
}

/// Absolute tolerance deciding that a prox output is zero.
pub const ZERO_TOL: f64 = 1e-12;
/// Relative tolerance merging magnitudes into one.
pub const UNIQUE_RTOL: f64 = 1e-9;

struct SePass {
    value: f64,
    output: Vec<f64>,
}

fn check_p(p: usize) -> Result<()> {
    if p < 100 {
        return Err(Error::Resolution(format!(
            "state evolution needs p >= 100, got {p}"
        )));
    }
    Ok(())
}

fn se_pass(prior: &PriorSpec, qa: &[f64], tau: f64, p: usize) -> Result<SePass> {
    if qa.len() != p - 1 {
        return Err(Error::Dimension {
            expected: p - 1,
            found: qa.len(),
        });
    }
    let qv = prior.convolved_quantiles(p, tau)?;
    let theta: Vec<f64> = qa.iter().map(|a| a * tau).collect();
    let output = prox_unchecked(&qv, &theta);
    // E[(G(V) − Π)²] = E[(G − E[Π|V])² + Var(Π|V)].
    let mut total = 0.0;
    for (&v, &g) in qv.iter().zip(&output) {
        let h = prior.conditional_expectation(tau, v).value;
        total += (g - h).powi(2) + prior.conditional_variance(tau, v);
    }
    let value = total / (p - 1) as f64;
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite SE term at tau = {tau}"
        )));
    }
    Ok(SePass { value, output })
}

/// Quantile approximation of E⟨[prox(Π + τZ; τA) − Π]²⟩ for the normalized
/// penalty quantiles `penalty_quantiles` (length p − 1, descending).
pub fn se_expectation(
    prior: &PriorSpec,
    penalty_quantiles: &PenaltyVector,
    tau: f64,
    p: usize,
) -> Result<f64> {
    check_p(p)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    Ok(se_pass(prior, penalty_quantiles.as_slice(), tau, p)?.value)
}

/// Iterates τ²_{t+1} = σ² + E(τ_t)/δ from τ₀² = σ² + EΠ²/δ.
pub fn solve_state_evolution(
    shape: &ProblemShape,
    prior: &PriorSpec,
    normalized_penalty: &PenaltySpec,
    cfg: &SeConfig,
) -> Result<SeSolution> {
    shape.validate()?;
    prior.validate()?;
    check_p(cfg.p)?;
    let qa = PenaltyVector::new(normalized_penalty.quantiles(cfg.p)?)?;
    let mut tau = (shape.sigma2 + prior.second_moment() / shape.delta).sqrt();
    if tau > 0.0
        && let Some(t) = cfg.tau_init.filter(|t| *t > 0.0 && t.is_finite())
    {
        tau = t;
    }
    if tau == 0.0 {
        return Ok(SeSolution {
            tau: 0.0,
            normalized_penalty_quantiles: qa,
            zero_threshold: f64::INFINITY,
            sparsity: 0.0,
            se_value: 0.0,
            unique_fraction: 0.0,
            iterations: 0,
            trace: vec![0.0],
        });
    }
    let tau0 = tau;
    let mut trace = vec![tau];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let e = se_pass(prior, qa.as_slice(), tau, cfg.p)?.value;
        let next = (shape.sigma2 + e / shape.delta).sqrt();
        trace.push(next);
        let step = (next - tau).abs();
        tau = next;
        if step < cfg.rtol * tau || tau < 1e-12 * tau0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations: cfg.max_iter,
            last: tau,
            trace,
        });
    }
    if tau < 1e-12 * tau0 {
        return Err(Error::Numerical(
            "state evolution collapsed to tau = 0 (exact recovery)".into(),
        ));
    }
    let pass = se_pass(prior, qa.as_slice(), tau, cfg.p)?;
    let m = (cfg.p - 1) as f64;
    let nonzero = pass.output.iter().filter(|v| v.abs() > ZERO_TOL).count();
    let sparsity = nonzero as f64 / m;
    let unique =
        unique_nonzero_magnitudes_tol(&pass.output, UNIQUE_RTOL, ZERO_TOL) as f64 / m;
    Ok(SeSolution {
        tau,
        zero_threshold: zero_threshold(prior, tau, sparsity),
        normalized_penalty_quantiles: qa,
        sparsity,
        se_value: pass.value / (tau * tau),
        unique_fraction: unique,
        iterations: trace.len() - 1,
        trace,
    })
}

/// P(|Π/τ + Z| > x).
pub fn abs_tail(prior: &PriorSpec, tau: f64, x: f64) -> f64 {
    prior.expect(|b| sf(x - b / tau) + sf(x + b / tau))
}

/// Zero-threshold α with P(|Π/τ + Z| > α) = κ; +∞ when κ = 0.
pub fn zero_threshold(prior: &PriorSpec, tau: f64, kappa: f64) -> f64 {
    if kappa <= 0.0 {
        return f64::INFINITY;
    }
    if kappa >= 1.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while abs_tail(prior, tau, hi) > kappa {
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if abs_tail(prior, tau, mid) > kappa {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + hi) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Asymptotic (TPP, FDP) of a zero-threshold α at effective noise τ.
pub fn tpp_fdp_at(prior: &PriorSpec, tau: f64, alpha: f64) -> (f64, f64) {
    if alpha.is_infinite() {
        return (0.0, 0.0);
    }
    let eps = prior.nonzero_mass();
    if eps == 0.0 {
        return (0.0, fdp_from_threshold(alpha, 0.0, 0.0));
    }
    let tpp = prior.expect_nonzero(|b| sf(alpha - b / tau) + sf(alpha + b / tau));
    (tpp, fdp_from_threshold(alpha, tpp, eps))
}

/// Asymptotic (TPP, FDP) at a state-evolution fixed point.
pub fn tpp_fdp_infinity(prior: &PriorSpec, se: &SeSolution) -> (f64, f64) {
    tpp_fdp_at(prior, se.tau, se.zero_threshold)
}

/// Sparsity κ and MSE = δ(τ² − σ²).
pub fn sparsity_and_mse(shape: &ProblemShape, se: &SeSolution) -> (f64, f64) {
    (se.sparsity, shape.delta * (se.tau * se.tau - shape.sigma2))
}

/// Original-scale penalty quantiles λ = τ·A·(1 − ‖·‖₀*/(δp)), descending.
pub fn calibrate(shape: &ProblemShape, se: &SeSolution) -> Result<PenaltySpec> {
    let factor = 1.0 - se.unique_fraction / shape.delta;
    if factor < 0.0 {
        return Err(Error::Infeasible(format!(
            "calibration factor {factor:.6} is negative; the normalized penalty is below its minimum"
        )));
    }
    Ok(PenaltySpec::QuantileTable {
        values: se
            .normalized_penalty_quantiles
            .as_slice()
            .iter()
            .map(|a| a * se.tau * factor)
            .collect(),
    })
}

/// Risk E[(η_soft(μ + Z; α) − μ)²] of soft-thresholding at unit noise.
pub fn soft_threshold_risk(mu: f64, alpha: f64) -> f64 {
    let inside = cdf(alpha - mu) - cdf(-alpha - mu);
    1.0 + alpha * alpha + (mu * mu - alpha * alpha - 1.0) * inside
        - (alpha - mu) * pdf(alpha + mu)
        - (alpha + mu) * pdf(alpha - mu)
}

/// Lasso fixed point and derived quantities, evaluated in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub alpha: f64,
    pub tau: f64,
    pub sparsity: f64,
    /// Original-scale penalty λ = ατ(1 − κ/δ).
    pub lambda: f64,
    pub tpp: f64,
    pub fdp: f64,
    pub mse: f64,
    pub iterations: usize,
}

/// Threshold below which the Lasso state evolution diverges: the root of
/// r(0, α) = δ, or 0 when δ ≥ 1.
pub fn lasso_alpha_divergence(delta: f64) -> f64 {
    if soft_threshold_risk(0.0, 0.0) <= delta {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if soft_threshold_risk(0.0, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Solves the Lasso state evolution at normalized threshold α using the
/// separable soft-threshold risk. The largest root of
/// σ²/τ² + E r(Π/τ, α)/δ − 1 is located by bracketing and bisection in log τ.
pub fn lasso_state_evolution(
    shape: &ProblemShape,
    prior: &PriorSpec,
    alpha: f64,
) -> Result<LassoSolution> {
    shape.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if soft_threshold_risk(0.0, alpha) >= shape.delta {
        return Err(Error::Instability(format!(
            "alpha = {alpha} is below the divergence threshold {:.6}",
            lasso_alpha_divergence(shape.delta)
        )));
    }
    let gap = |tau: f64| {
        shape.sigma2 / (tau * tau) + prior.expect(|b| soft_threshold_risk(b / tau, alpha)) / shape.delta
            - 1.0
    };
    let tau0 = (shape.sigma2 + prior.second_moment() / shape.delta).sqrt().max(1e-300);
    let mut hi = tau0;
    let mut iterations = 0;
    while gap(hi) > 0.0 {
        hi *= 2.0;
        iterations += 1;
        if !hi.is_finite() {
            return Err(Error::Numerical("cannot bracket the Lasso fixed point".into()));
        }
    }
    let mut lo = hi;
    while gap(lo) <= 0.0 {
        lo *= 0.5;
        iterations += 1;
        if lo < 1e-12 * tau0 {
            return Err(Error::Numerical(
                "Lasso state evolution collapsed to tau = 0".into(),
            ));
        }
    }
    while hi / lo - 1.0 > 1e-14 {
        let mid = (lo * hi).sqrt();
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let tau = (lo * hi).sqrt();
    let sparsity = abs_tail(prior, tau, alpha);
    let (tpp, fdp) = tpp_fdp_at(prior, tau, alpha);
    Ok(LassoSolution {
        alpha,
        tau,
        sparsity,
        lambda: alpha * tau * (1.0 - sparsity / shape.delta),
        tpp,
        fdp,
        mse: shape.delta * (tau * tau - shape.sigma2),
        iterations,
    })
}

/// Smallest normalized threshold α₀ with κ(α₀) = δ; below it calibration
/// gives a negative λ. Returns the divergence threshold when κ < δ throughout.
pub fn lasso_alpha_min(shape: &ProblemShape, prior: &PriorSpec) -> Result<f64> {
    let gap = |a: f64| -> Result<f64> {
        let s = lasso_state_evolution(shape, prior, a)?;
        Ok(s.sparsity - shape.delta)
    };
    let a_div = lasso_alpha_divergence(shape.delta);
    let mut lo = a_div + 1e-9 * (1.0 + a_div);
    if gap(lo)? <= 0.0 {
        return Ok(lo);
    }
    let mut hi = lo + 1.0;
    while gap(hi)? > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 64.0 {
            return Err(Error::Numerical("cannot bracket alpha_0".into()));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if gap(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(hi)
}

/// Inverts the Lasso calibration: the α > α₀ whose λ(α) equals `lambda`.
pub fn lasso_alpha_for_lambda(
    shape: &ProblemShape,
    prior: &PriorSpec,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let a0 = lasso_alpha_min(shape, prior)?;
    let lam = |a: f64| -> Result<f64> { Ok(lasso_state_evolution(shape, prior, a)?.lambda) };
    let mut lo = a0.max(1e-3);
    let mut hi = lo + 1.0;
    while lam(hi)? < lambda {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical("cannot bracket the calibration inverse".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lam(mid)? < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + hi) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
