//! Signal priors, penalty distributions and the problem regime.
//!
//! Priors expose quantiles of Π and of the convolution Π + τZ, the closed-form
//! posterior mean E[Π | Π + τZ = q], and seeded sampling.

use std::sync::OnceLock;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, domain};
use crate::normal::{self, cdf, pdf};
use crate::sorted_l1::PenaltyVector;

/// Asymptotic regime: δ = lim n/p, sparsity ε and noise level σ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub delta: f64,
    pub epsilon: f64,
    pub sigma2: f64,
}

impl ProblemShape {
    pub fn new(delta: f64, epsilon: f64, sigma2: f64) -> Result<Self> {
        let shape = ProblemShape {
            delta,
            epsilon,
            sigma2,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return domain(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return domain(format!("epsilon must lie in (0,1), got {}", self.epsilon));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return domain(format!("sigma2 must be nonnegative, got {}", self.sigma2));
        }
        Ok(())
    }
}

/// A point mass of a discrete prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// Signal prior Π.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    PointMixture { atoms: Vec<Atom> },
    Gaussian { mu: f64, var: f64 },
    Exponential { rate: f64 },
    /// M w.p. ε·ε′, 1/M w.p. ε − ε·ε′, 0 w.p. 1 − ε.
    ThreePoint { m: f64, eps: f64, eps_prime: f64 },
}

/// Default value of M standing in for an infinitely strong signal.
pub const DEFAULT_M: f64 = 1e4;

enum Repr {
    Atoms(Vec<Atom>),
    Gaussian { mu: f64, sd: f64 },
    Exponential { rate: f64 },
}

/// Posterior mean E[Π | Π + τZ = q] and whether a tail asymptotic was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondExpectation {
    pub value: f64,
    pub tail_asymptotic: bool,
}

impl PriorSpec {
    /// Bernoulli-type prior: `value` w.p. ε, 0 otherwise.
    pub fn bernoulli(epsilon: f64, value: f64) -> Self {
        PriorSpec::PointMixture {
            atoms: vec![
                Atom {
                    value: 0.0,
                    prob: 1.0 - epsilon,
                },
                Atom {
                    value,
                    prob: epsilon,
                },
            ],
        }
    }

    /// Π ≡ 0.
    pub fn zero() -> Self {
        PriorSpec::PointMixture {
            atoms: vec![Atom {
                value: 0.0,
                prob: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::PointMixture { atoms } => {
                if atoms.is_empty() {
                    return domain("point mixture needs at least one atom");
                }
                if atoms
                    .iter()
                    .any(|a| !a.value.is_finite() || !(0.0..=1.0).contains(&a.prob))
                {
                    return domain("atoms need finite values and probabilities in [0,1]");
                }
                let total: f64 = atoms.iter().map(|a| a.prob).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return domain(format!("atom probabilities sum to {total}, not 1"));
                }
            }
            PriorSpec::Gaussian { mu, var } => {
                if !mu.is_finite() || !(*var >= 0.0 && var.is_finite()) {
                    return domain("gaussian prior needs finite mean and nonnegative variance");
                }
            }
            PriorSpec::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return domain("exponential rate must be positive");
                }
            }
            PriorSpec::ThreePoint { m, eps, eps_prime } => {
                if !(*m > 0.0 && m.is_finite()) {
                    return domain("three-point M must be positive");
                }
                if !(*eps > 0.0 && *eps < 1.0) || !(0.0..=1.0).contains(eps_prime) {
                    return domain("three-point prior needs eps in (0,1) and eps' in [0,1]");
                }
            }
        }
        Ok(())
    }

    fn repr(&self) -> Repr {
        match self {
            PriorSpec::PointMixture { atoms } => Repr::Atoms(atoms.clone()),
            PriorSpec::Gaussian { mu, var } if *var == 0.0 => Repr::Atoms(vec![Atom {
                value: *mu,
                prob: 1.0,
            }]),
            PriorSpec::Gaussian { mu, var } => Repr::Gaussian {
                mu: *mu,
                sd: var.sqrt(),
            },
            PriorSpec::Exponential { rate } => Repr::Exponential { rate: *rate },
            PriorSpec::ThreePoint { .. } => Repr::Atoms(self.atoms().expect("discrete")),
        }
    }

    /// Atoms of a discrete prior, with zero-probability atoms removed.
    pub fn atoms(&self) -> Option<Vec<Atom>> {
        let raw = match self {
            PriorSpec::PointMixture { atoms } => atoms.clone(),
            PriorSpec::Gaussian { mu, var } if *var == 0.0 => vec![Atom {
                value: *mu,
                prob: 1.0,
            }],
            PriorSpec::ThreePoint { m, eps, eps_prime } => vec![
                Atom {
                    value: *m,
                    prob: eps * eps_prime,
                },
                Atom {
                    value: 1.0 / m,
                    prob: eps - eps * eps_prime,
                },
                Atom {
                    value: 0.0,
                    prob: 1.0 - eps,
                },
            ],
            _ => return None,
        };
        Some(raw.into_iter().filter(|a| a.prob > 0.0).collect())
    }

    /// P(Π ≠ 0).
    pub fn nonzero_mass(&self) -> f64 {
        match self.repr() {
            Repr::Atoms(atoms) => atoms
                .iter()
                .filter(|a| a.value != 0.0)
                .map(|a| a.prob)
                .sum(),
            _ => 1.0,
        }
    }

    /// E Π².
    pub fn second_moment(&self) -> f64 {
        match self.repr() {
            Repr::Atoms(atoms) => atoms.iter().map(|a| a.prob * a.value * a.value).sum(),
            Repr::Gaussian { mu, sd } => mu * mu + sd * sd,
            Repr::Exponential { rate } => 2.0 / (rate * rate),
        }
    }

    /// E Π.
    pub fn mean(&self) -> f64 {
        match self.repr() {
            Repr::Atoms(atoms) => atoms.iter().map(|a| a.prob * a.value).sum(),
            Repr::Gaussian { mu, .. } => mu,
            Repr::Exponential { rate } => 1.0 / rate,
        }
    }

    /// E f(Π), exact for atoms and by Gauss quadrature otherwise.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self.repr() {
            Repr::Atoms(atoms) => atoms.iter().map(|a| a.prob * f(a.value)).sum(),
            Repr::Gaussian { mu, sd } => normal::normal_rule().expect(|z| f(mu + sd * z)),
            Repr::Exponential { rate } => laguerre_rule()
                .iter()
                .map(|&(x, w)| w * f(x / rate))
                .sum(),
        }
    }

    /// E[f(Π) | Π ≠ 0].
    pub fn expect_nonzero(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self.repr() {
            Repr::Atoms(atoms) => {
                let mass: f64 = atoms
                    .iter()
                    .filter(|a| a.value != 0.0)
                    .map(|a| a.prob)
                    .sum();
                if mass == 0.0 {
                    return 0.0;
                }
                atoms
                    .iter()
                    .filter(|a| a.value != 0.0)
                    .map(|a| a.prob * f(a.value))
                    .sum::<f64>()
                    / mass
            }
            _ => self.expect(f),
        }
    }

    /// Quantile function of Π at level u ∈ (0,1).
    pub fn quantile(&self, u: f64) -> f64 {
        match self.repr() {
            Repr::Atoms(mut atoms) => {
                atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
                let mut cum = 0.0;
                for a in &atoms {
                    cum += a.prob;
                    if cum >= u - 1e-12 {
                        return a.value;
                    }
                }
                atoms.last().map_or(0.0, |a| a.value)
            }
            Repr::Gaussian { mu, sd } => mu + sd * normal::quantile(u),
            Repr::Exponential { rate } => -(-u).ln_1p() / rate,
        }
    }

    /// Quantiles of Π at levels 1/p, …, (p−1)/p.
    pub fn quantiles(&self, p: usize) -> Result<Vec<f64>> {
        check_resolution(p)?;
        Ok((1..p).map(|i| self.quantile(i as f64 / p as f64)).collect())
    }

    /// P(Π + τZ ≤ x).
    pub fn conv_cdf(&self, x: f64, tau: f64) -> f64 {
        match self.repr() {
            Repr::Atoms(atoms) => atoms
                .iter()
                .map(|a| a.prob * cdf((x - a.value) / tau))
                .sum(),
            Repr::Gaussian { mu, sd } => cdf((x - mu) / (sd * sd + tau * tau).sqrt()),
            Repr::Exponential { rate } => cdf(x / tau) - exp_gauss_term(x, tau, rate),
        }
    }

    /// Density of Π + τZ at x.
    pub fn conv_pdf(&self, x: f64, tau: f64) -> f64 {
        match self.repr() {
            Repr::Atoms(atoms) => {
                atoms
                    .iter()
                    .map(|a| a.prob * pdf((x - a.value) / tau))
                    .sum::<f64>()
                    / tau
            }
            Repr::Gaussian { mu, sd } => {
                let s = (sd * sd + tau * tau).sqrt();
                pdf((x - mu) / s) / s
            }
            Repr::Exponential { rate } => rate * exp_gauss_term(x, tau, rate),
        }
    }

    /// Quantiles of Π + τZ at levels 1/p, …, (p−1)/p, by safeguarded Newton
    /// inversion of the convolution CDF to 1e-10.
    pub fn convolved_quantiles(&self, p: usize, tau: f64) -> Result<Vec<f64>> {
        check_resolution(p)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return domain("tau must be positive");
        }
        let levels: Vec<f64> = (1..p).map(|i| i as f64 / p as f64).collect();
        invert_cdf(
            &levels,
            |x| self.conv_cdf(x, tau),
            |x| self.conv_pdf(x, tau),
            self.center(),
            tau,
        )
    }

    fn center(&self) -> f64 {
        self.mean()
    }

    /// Closed-form E[Π | Π + τZ = q].
    pub fn conditional_expectation(&self, tau: f64, q: f64) -> CondExpectation {
        match self.repr() {
            Repr::Atoms(atoms) => CondExpectation {
                value: atoms_posterior_mean(&atoms, tau, q),
                tail_asymptotic: false,
            },
            Repr::Gaussian { mu, sd } => {
                let s2 = sd * sd;
                CondExpectation {
                    value: (q * s2 + mu * tau * tau) / (s2 + tau * tau),
                    tail_asymptotic: false,
                }
            }
            Repr::Exponential { rate } => {
                let (g, tail) = exponential_posterior_scaled_mean((q - rate * tau * tau) / tau);
                CondExpectation {
                    value: tau * g,
                    tail_asymptotic: tail,
                }
            }
        }
    }

    /// Closed-form Var[Π | Π + τZ = q].
    pub fn conditional_variance(&self, tau: f64, q: f64) -> f64 {
        match self.repr() {
            Repr::Atoms(atoms) => {
                let w = atoms_posterior_weights(&atoms, tau, q);
                let mean: f64 = atoms.iter().zip(&w).map(|(a, w)| w * a.value).sum();
                atoms
                    .iter()
                    .zip(&w)
                    .map(|(a, w)| w * (a.value - mean).powi(2))
                    .sum()
            }
            Repr::Gaussian { sd, .. } => {
                let s2 = sd * sd;
                s2 * tau * tau / (s2 + tau * tau)
            }
            Repr::Exponential { rate } => {
                // Normal N(ξτ, τ²) truncated to (0, ∞): τ²(1 + ξg − g²) with g the
                // scaled mean.
                let xi = (q - rate * tau * tau) / tau;
                let (g, _) = exponential_posterior_scaled_mean(xi);
                (tau * tau * (1.0 + xi * g - g * g)).max(0.0)
            }
        }
    }

    /// `p` i.i.d. draws from Π, deterministic in `seed`.
    pub fn sample(&self, p: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(p, &mut rng)
    }

    /// `p` i.i.d. draws using a caller-owned generator.
    pub fn sample_with<R: rand::Rng + ?Sized>(&self, p: usize, rng: &mut R) -> Vec<f64> {
        match self.repr() {
            Repr::Atoms(atoms) => (0..p)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut cum = 0.0;
                    for a in &atoms {
                        cum += a.prob;
                        if u < cum {
                            return a.value;
                        }
                    }
                    atoms.last().map_or(0.0, |a| a.value)
                })
                .collect(),
            Repr::Gaussian { mu, sd } => (0..p)
                .map(|_| mu + sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Repr::Exponential { rate } => (0..p)
                .map(|_| {
                    let u: f64 = rng.random();
                    -(-u).ln_1p() / rate
                })
                .collect(),
        }
    }
}

/// exp(−cx + c²τ²/2)·Φ(x/τ − cτ), evaluated without overflow.
fn exp_gauss_term(x: f64, tau: f64, rate: f64) -> f64 {
    let y = x / tau - rate * tau;
    if y > 0.0 {
        (-rate * x + 0.5 * rate * rate * tau * tau).exp() * cdf(y)
    } else {
        pdf(x / tau) * normal::mills_ratio(-y)
    }
}

/// Posterior weights of the atoms given Π + τZ = q.
fn atoms_posterior_weights(atoms: &[Atom], tau: f64, q: f64) -> Vec<f64> {
    let logs: Vec<f64> = atoms
        .iter()
        .map(|a| a.prob.ln() - (q - a.value).powi(2) / (2.0 * tau * tau))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn atoms_posterior_mean(atoms: &[Atom], tau: f64, q: f64) -> f64 {
    let w = atoms_posterior_weights(atoms, tau, q);
    q - atoms
        .iter()
        .zip(&w)
        .map(|(a, w)| (q - a.value) * w)
        .sum::<f64>()
}

/// ξ + φ(ξ)/Φ(ξ), switching to a continued fraction for ξ < −8. The flag
/// reports the switch.
fn exponential_posterior_scaled_mean(xi: f64) -> (f64, bool) {
    if xi < -8.0 {
        // ξ + φ(ξ)/Φ(ξ) = 1/(x + 2/(x + 3/(x + …))) with x = −ξ.
        let x = -xi;
        let mut acc = x;
        for k in (2..=40).rev() {
            acc = x + k as f64 / acc;
        }
        (1.0 / acc, true)
    } else {
        (xi + pdf(xi) / cdf(xi), false)
    }
}

fn check_resolution(p: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::Resolution(format!(
            "quantile resolution p must be at least 2, got {p}"
        )));
    }
    Ok(())
}

fn laguerre_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let deg = std::num::NonZeroUsize::new(64).expect("positive degree");
        let alpha = gauss_quad::FiniteAboveNegOneF64::new(0.0).expect("valid exponent");
        gauss_quad::GaussLaguerre::new(deg, alpha)
            .iter()
            .map(|(x, w)| (*x, *w))
            .collect()
    })
}

/// Inverts a continuous CDF at ascending `levels` using Newton steps safeguarded
/// by bisection, warm-started from the previous level.
pub(crate) fn invert_cdf(
    levels: &[f64],
    cdf_fn: impl Fn(f64) -> f64,
    pdf_fn: impl Fn(f64) -> f64,
    center: f64,
    scale: f64,
) -> Result<Vec<f64>> {
    if levels.is_empty() {
        return Ok(Vec::new());
    }
    let lo_level = levels[0];
    let hi_level = levels[levels.len() - 1];
    let mut width = 12.0 * scale.max(1e-8) + center.abs();
    let mut lo = center - width;
    while cdf_fn(lo) > lo_level {
        width *= 2.0;
        lo = center - width;
        if !lo.is_finite() {
            return Err(Error::Numerical("cannot bracket lower quantile".into()));
        }
    }
    width = 12.0 * scale.max(1e-8) + center.abs();
    let mut hi = center + width;
    while cdf_fn(hi) < hi_level {
        width *= 2.0;
        hi = center + width;
        if !hi.is_finite() {
            return Err(Error::Numerical("cannot bracket upper quantile".into()));
        }
    }
    let mut out = Vec::with_capacity(levels.len());
    let mut floor = lo;
    let mut x = 0.5 * (lo + hi);
    for &u in levels {
        let (mut a, mut b) = (floor, hi);
        x = x.clamp(a, b);
        for _ in 0..200 {
            let f = cdf_fn(x) - u;
            if f < 0.0 {
                a = x;
            } else {
                b = x;
            }
            if b - a < 1e-10 {
                break;
            }
            let d = pdf_fn(x);
            let newton = x - f / d;
            if d > 0.0 && newton > a && newton < b {
                let step = (newton - x).abs();
                x = newton;
                if step < 1e-11 {
                    break;
                }
            } else {
                x = 0.5 * (a + b);
            }
        }
        if !x.is_finite() {
            return Err(Error::Numerical(format!("quantile inversion failed at level {u}")));
        }
        out.push(x);
        floor = a.min(x);
    }
    Ok(out)
}

/// Penalty distribution Λ (or normalized A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltySpec {
    Constant { lambda: f64 },
    /// `a` on the top fraction `w`, `b` below.
    TwoLevel { a: f64, b: f64, w: f64 },
    /// Descending quantile values on equally spaced upper-tail levels.
    QuantileTable { values: Vec<f64> },
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PenaltySpec::Constant { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return domain("constant penalty must be positive");
                }
            }
            PenaltySpec::TwoLevel { a, b, w } => {
                if !(a.is_finite() && *a > *b && *b >= 0.0) {
                    return domain("two-level penalty needs a > b >= 0");
                }
                if !(*w > 0.0 && *w < 1.0) {
                    return domain("two-level mass w must lie in (0,1)");
                }
            }
            PenaltySpec::QuantileTable { values } => {
                PenaltyVector::new(values.clone())?;
            }
        }
        Ok(())
    }

    /// Quantiles at upper-tail levels 1/p, …, (p−1)/p, in descending order.
    pub fn quantiles(&self, p: usize) -> Result<Vec<f64>> {
        check_resolution(p)?;
        self.validate()?;
        let m = p - 1;
        Ok(match self {
            PenaltySpec::Constant { lambda } => vec![*lambda; m],
            PenaltySpec::TwoLevel { a, b, w } => {
                let k = (w * m as f64 - 1e-9).ceil() as usize;
                if k == 0 || k >= m {
                    return Err(Error::Resolution(format!(
                        "p = {p} cannot resolve two-level mass w = {w}"
                    )));
                }
                let mut q = vec![*a; k];
                q.resize(m, *b);
                q
            }
            PenaltySpec::QuantileTable { values } => resample_table(values, m),
        })
    }

    /// Finite penalty sequence of length `p` (about w·p entries at the top level).
    pub fn sequence(&self, p: usize) -> Result<PenaltyVector> {
        self.validate()?;
        let seq = match self {
            PenaltySpec::Constant { lambda } => vec![*lambda; p],
            PenaltySpec::TwoLevel { a, b, w } => {
                let k = ((w * p as f64).round() as usize).min(p);
                let mut q = vec![*a; k];
                q.resize(p, *b);
                q
            }
            PenaltySpec::QuantileTable { values } => resample_table(values, p),
        };
        PenaltyVector::new(seq)
    }

    /// Multiplies every level by `c > 0`.
    pub fn scaled(&self, c: f64) -> PenaltySpec {
        match self {
            PenaltySpec::Constant { lambda } => PenaltySpec::Constant { lambda: lambda * c },
            PenaltySpec::TwoLevel { a, b, w } => PenaltySpec::TwoLevel {
                a: a * c,
                b: b * c,
                w: *w,
            },
            PenaltySpec::QuantileTable { values } => PenaltySpec::QuantileTable {
                values: values.iter().map(|v| v * c).collect(),
            },
        }
    }
}

/// Nearest-level resampling of a descending table onto `m` upper-tail levels.
fn resample_table(values: &[f64], m: usize) -> Vec<f64> {
    let len = values.len();
    if len == m {
        return values.to_vec();
    }
    (0..m)
        .map(|i| {
            let level = (i as f64 + 1.0) / (m as f64 + 1.0);
            let j = (level * (len as f64 + 1.0)).round() as isize - 1;
            values[j.clamp(0, len as isize - 1) as usize]
        })
        .collect()
}

/// Standard normal draws, used by the experiment harness.
pub fn standard_normal_vec<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}
