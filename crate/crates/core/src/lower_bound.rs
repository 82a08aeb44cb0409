//! Lower trade-off curve. For a two-point normalized prior the smallest
//! estimation error over monotone penalty functions A ≥ α is a diagonal QP
//! after a left-endpoint discretization; the largest zero-threshold whose
//! optimum stays below δ gives the lowest reachable FDP. An analytic route
//! through the stationarity condition A = −H′/H is provided as well.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::ProblemShape;
use crate::error::{Error, Result, domain};
use crate::normal::{cdf, legendre_rule, pdf, sf};
use crate::qp::{QpInstance, solve_qp_isotonic_fast, weighted_isotonic};
use crate::tradeoff::{fdp_from_threshold, q_upper, t_star, u_star_dt};

/// Atoms at or above this value are treated as t = ∞.
pub const INFINITE_T: f64 = 1e5;

/// Quadratic weights below this floor are raised to keep d/Q finite.
const Q_FLOOR: f64 = 1e-300;

/// Discretization and search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundGrid {
    /// Left-endpoint step Δz.
    pub dz: f64,
    /// Grid extends this far past max(α, largest finite atom).
    pub z_span: f64,
    /// Number of log-spaced finite atom locations.
    pub t_points: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Extra atom standing for t = ∞.
    pub t_cap: f64,
    /// Bisection tolerance on the zero-threshold.
    pub alpha_tol: f64,
}

impl Default for LowerBoundGrid {
    fn default() -> Self {
        LowerBoundGrid {
            dz: 0.01,
            z_span: 8.0,
            t_points: 60,
            t_min: 1e-3,
            t_max: 12.0,
            t_cap: 1e6,
            alpha_tol: 1e-4,
        }
    }
}

impl LowerBoundGrid {
    /// Coarse profile for quick runs.
    pub fn coarse() -> Self {
        LowerBoundGrid {
            dz: 0.05,
            t_points: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dz > 0.0 && self.dz.is_finite()) {
            return Err(Error::Configuration(format!("dz must be positive, got {}", self.dz)));
        }
        if !(self.z_span > 0.0 && self.z_span.is_finite()) {
            return Err(Error::Configuration("z_span must be positive".into()));
        }
        if self.t_points < 2 {
            return Err(Error::Configuration("need at least two atom locations".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max < INFINITE_T) {
            return Err(Error::Configuration(
                "atom range must satisfy 0 < t_min < t_max < 1e5".into(),
            ));
        }
        if self.t_cap < INFINITE_T {
            return Err(Error::Configuration("t_cap must be at least 1e5".into()));
        }
        if !(self.alpha_tol > 0.0) {
            return Err(Error::Configuration("alpha_tol must be positive".into()));
        }
        Ok(())
    }

    /// Finite log-spaced atoms followed by the cap.
    pub fn t_values(&self) -> Vec<f64> {
        let (a, b) = (self.t_min.ln(), self.t_max.ln());
        let n = self.t_points;
        let mut ts: Vec<f64> = (0..n)
            .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
            .collect();
        ts.push(self.t_cap);
        ts
    }

    /// Grid α, α + Δz, …, α + mΔz with m = ⌈(max(α, t_far) + span − α)/Δz⌉.
    pub fn z_grid(&self, alpha: f64, t_far: f64) -> Vec<f64> {
        let end = alpha.max(t_far) + self.z_span;
        let m = ((end - alpha) / self.dz).ceil() as usize;
        (0..=m).map(|i| alpha + i as f64 * self.dz).collect()
    }
}

/// h_α(t) = P(|t + Z| > α).
pub fn h_alpha(t: f64, alpha: f64) -> f64 {
    if t >= INFINITE_T {
        return 1.0;
    }
    sf(alpha - t) + sf(alpha + t)
}

/// Normalized nonzero-signal distribution with at most two atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointPrior {
    pub t1: f64,
    pub t2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl TwoPointPrior {
    /// Weights that make the TPP at zero-threshold α equal to u.
    pub fn new(t1: f64, t2: f64, u: f64, alpha: f64) -> Result<Self> {
        if !(t1 >= 0.0 && t2 >= 0.0) {
            return domain("atom locations must be nonnegative");
        }
        let (h1, h2) = (h_alpha(t1, alpha), h_alpha(t2, alpha));
        if h1 == h2 {
            if (u - h1).abs() <= 1e-12 {
                return Ok(Self::single(t1));
            }
            return Err(Error::Infeasible(format!(
                "atoms {t1} and {t2} give equal TPP {h1}, not {u}"
            )));
        }
        let p1 = (u - h2) / (h1 - h2);
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::Infeasible(format!(
                "atoms {t1} and {t2} cannot reach TPP {u} at threshold {alpha}"
            )));
        }
        Ok(TwoPointPrior {
            t1,
            t2,
            p1,
            p2: 1.0 - p1,
        })
    }

    pub fn single(t: f64) -> Self {
        TwoPointPrior {
            t1: t,
            t2: t,
            p1: 1.0,
            p2: 0.0,
        }
    }

    pub fn tpp(&self, alpha: f64) -> f64 {
        self.p1 * h_alpha(self.t1, alpha) + self.p2 * h_alpha(self.t2, alpha)
    }

    fn atoms(&self) -> [(f64, f64); 2] {
        [(self.t1, self.p1), (self.t2, self.p2)]
    }

    fn largest_finite(&self) -> f64 {
        self.atoms()
            .iter()
            .filter(|(t, p)| *p > 0.0 && *t < INFINITE_T)
            .fold(0.0, |m, (t, _)| m.max(*t))
    }

    /// ε Σ p_j t_j² P(|t_j + Z| ≤ α): signals killed by the threshold.
    fn killed_signal_error(&self, alpha: f64, epsilon: f64) -> f64 {
        epsilon
            * self
                .atoms()
                .iter()
                .filter(|(t, p)| *p > 0.0 && *t < INFINITE_T)
                .map(|(t, p)| p * t * t * (cdf(alpha - t) - cdf(-alpha - t)))
                .sum::<f64>()
    }
}

/// Penalty function sampled on a uniform grid starting at α. Beyond the last
/// node it is held constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedPenalty {
    pub alpha: f64,
    pub dz: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl DiscretizedPenalty {
    /// The Lasso penalty A ≡ α.
    pub fn constant(alpha: f64, grid: Vec<f64>, dz: f64) -> Self {
        let values = vec![alpha; grid.len()];
        DiscretizedPenalty {
            alpha,
            dz,
            grid,
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.values.len() {
            return Err(Error::Dimension {
                expected: self.grid.len(),
                found: self.values.len(),
            });
        }
        if self.grid.is_empty() {
            return domain("empty penalty grid");
        }
        if !(self.dz > 0.0) || (self.grid[0] - self.alpha).abs() > 1e-12 * (1.0 + self.alpha) {
            return domain("grid must start at alpha with a positive step");
        }
        let tol = 1e-10 * (1.0 + self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        if self.values[0] < self.alpha - tol {
            return domain("penalty must be at least alpha");
        }
        if self.values.windows(2).any(|w| w[1] < w[0] - tol) {
            return domain("penalty must be nondecreasing");
        }
        Ok(())
    }

    /// Piecewise-constant value at z ≥ α.
    pub fn value_at(&self, z: f64) -> f64 {
        if z < self.alpha {
            return self.alpha;
        }
        let i = ((z - self.alpha) / self.dz).floor() as usize;
        self.values[i.min(self.values.len() - 1)]
    }
}

/// Discretized pieces of Σ_s ∫(z − s − A)²φ(z − s) over the grid and the
/// analytic tail, for the shifts s = ±t: F = Σ q_i A_i² − 2 d_i A_i + c.
#[derive(Debug, Clone)]
struct Component {
    q: Vec<f64>,
    d: Vec<f64>,
    c: f64,
}

impl Component {
    fn new(z: &[f64], dz: f64, t: f64) -> Self {
        let m = z.len();
        let mut q = vec![0.0; m];
        let mut d = vec![0.0; m];
        let mut c = 0.0;
        let z_tail = z[m - 1] + dz;
        for s in [t, -t] {
            for (i, &zi) in z.iter().enumerate() {
                let y = zi - s;
                let f = pdf(y);
                q[i] += dz * f;
                d[i] += dz * y * f;
                c += dz * y * y * f;
            }
            // ∫_L^∞ (y − A)²φ(y) dy with A held at its last value.
            let l = z_tail - s;
            let (fl, tl) = (pdf(l), sf(l));
            q[m - 1] += tl;
            d[m - 1] += fl;
            c += if fl > 0.0 { l * fl } else { 0.0 } + tl;
        }
        Component { q, d, c }
    }
}

/// Weighted quadratic F(A) = Σ q_i A_i² − 2 d_i A_i + c.
struct Assembled {
    q: Vec<f64>,
    d: Vec<f64>,
    c: f64,
}

impl Assembled {
    fn new(parts: &[(f64, &Component)], extra: f64) -> Self {
        let m = parts[0].1.q.len();
        let mut q = vec![0.0; m];
        let mut d = vec![0.0; m];
        let mut c = extra;
        for &(w, comp) in parts {
            if w == 0.0 {
                continue;
            }
            for i in 0..m {
                q[i] += w * comp.q[i];
                d[i] += w * comp.d[i];
            }
            c += w * comp.c;
        }
        for v in q.iter_mut() {
            *v = v.max(Q_FLOOR);
        }
        Assembled { q, d, c }
    }

    fn value(&self, a: &[f64]) -> f64 {
        let quad: f64 = a
            .iter()
            .zip(&self.q)
            .zip(&self.d)
            .map(|((x, q), d)| q * x * x - 2.0 * d * x)
            .sum();
        (quad + self.c).max(0.0)
    }

    fn qp(&self, alpha: f64) -> Result<QpInstance> {
        QpInstance::chain(
            self.q.iter().map(|v| 2.0 * v).collect(),
            self.d.iter().map(|v| 2.0 * v).collect(),
            alpha,
        )
    }

    /// Minimizer by isotonic regression of d/Q, then clipped at α.
    fn minimize(&self, alpha: f64) -> (f64, Vec<f64>) {
        let y: Vec<f64> = self.d.iter().zip(&self.q).map(|(d, q)| d / q).collect();
        let mut a = weighted_isotonic(&y, &self.q);
        for v in a.iter_mut() {
            *v = v.max(alpha);
        }
        (self.value(&a), a)
    }
}

fn assemble(
    z: &[f64],
    dz: f64,
    alpha: f64,
    prior: &TwoPointPrior,
    shape: &ProblemShape,
) -> Assembled {
    let eps = shape.epsilon;
    let null = Component::new(z, dz, 0.0);
    let c1 = Component::new(z, dz, prior.t1);
    let c2 = Component::new(z, dz, prior.t2);
    Assembled::new(
        &[
            (1.0 - eps, &null),
            (eps * prior.p1, &c1),
            (eps * prior.p2, &c2),
        ],
        prior.killed_signal_error(alpha, eps),
    )
}

/// Discretized estimation error F̄_α[A] of a feasible penalty. Includes the
/// A-free part of the integrand so the value is the error itself.
pub fn f_alpha(
    alpha: f64,
    a: &DiscretizedPenalty,
    prior: &TwoPointPrior,
    shape: &ProblemShape,
) -> Result<f64> {
    shape.validate()?;
    a.validate()?;
    if (a.alpha - alpha).abs() > 1e-12 * (1.0 + alpha) {
        return domain("penalty grid was built for a different alpha");
    }
    Ok(assemble(&a.grid, a.dz, alpha, prior, shape).value(&a.values))
}

/// Smallest F̄_α over nondecreasing penalties with A ≥ α, and the minimizer.
pub fn min_f_over_penalty(
    alpha: f64,
    prior: &TwoPointPrior,
    shape: &ProblemShape,
    grid: &LowerBoundGrid,
) -> Result<(f64, DiscretizedPenalty)> {
    shape.validate()?;
    grid.validate()?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return domain(format!("alpha must be nonnegative, got {alpha}"));
    }
    let z = grid.z_grid(alpha, prior.largest_finite());
    let asm = assemble(&z, grid.dz, alpha, prior, shape);
    let sol = solve_qp_isotonic_fast(&asm.qp(alpha)?)?;
    let value = asm.value(&sol.minimizer);
    Ok((
        value,
        DiscretizedPenalty {
            alpha,
            dz: grid.dz,
            grid: z,
            values: sol.minimizer,
        },
    ))
}

/// Per-atom components at a fixed α, shared by every pair of the search.
struct AlphaTables {
    alpha: f64,
    ts: Vec<f64>,
    null: Component,
    atoms: Vec<Component>,
}

impl AlphaTables {
    fn new(alpha: f64, grid: &LowerBoundGrid) -> Self {
        let ts = grid.t_values();
        let z = grid.z_grid(alpha, grid.t_max);
        let null = Component::new(&z, grid.dz, 0.0);
        let atoms = ts.par_iter().map(|&t| Component::new(&z, grid.dz, t)).collect();
        AlphaTables {
            alpha,
            ts,
            null,
            atoms,
        }
    }

    fn pair_value(&self, i: usize, j: usize, u: f64, shape: &ProblemShape) -> Option<f64> {
        let prior = TwoPointPrior::new(self.ts[i], self.ts[j], u, self.alpha).ok()?;
        let eps = shape.epsilon;
        let asm = Assembled::new(
            &[
                (1.0 - eps, &self.null),
                (eps * prior.p1, &self.atoms[i]),
                (eps * prior.p2, &self.atoms[j]),
            ],
            prior.killed_signal_error(self.alpha, eps),
        );
        Some(asm.minimize(self.alpha).0)
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.ts.len();
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
    }

    /// True when some grid prior admits a penalty with F̄ ≤ δ.
    fn feasible(&self, u: f64, shape: &ProblemShape) -> bool {
        self.pairs().par_iter().any(|&(i, j)| {
            self.pair_value(i, j, u, shape)
                .is_some_and(|v| v <= shape.delta)
        })
    }

    /// Smallest F̄ over the grid, with the minimizing prior.
    fn best(&self, u: f64, shape: &ProblemShape) -> Option<(f64, TwoPointPrior)> {
        self.pairs()
            .par_iter()
            .filter_map(|&(i, j)| {
                let v = self.pair_value(i, j, u, shape)?;
                let prior = TwoPointPrior::new(self.ts[i], self.ts[j], u, self.alpha).ok()?;
                Some((v, prior))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Smallest F̄_α over all grid priors reaching TPP u, or `None` if no pair is
/// feasible.
pub fn min_f_over_grid(
    alpha: f64,
    u: f64,
    shape: &ProblemShape,
    grid: &LowerBoundGrid,
) -> Result<Option<(f64, TwoPointPrior)>> {
    shape.validate()?;
    grid.validate()?;
    Ok(AlphaTables::new(alpha, grid).best(u, shape))
}

/// Zero-threshold at which the upper curve's FDP is reached for TPP u.
fn upper_threshold(u: f64, shape: &ProblemShape) -> Result<f64> {
    if u <= u_star_dt(shape)? {
        return t_star(u, shape);
    }
    let q = q_upper(u, shape)?;
    let e = shape.epsilon;
    if q >= 1.0 {
        return Ok(0.0);
    }
    let tail = q * e * u / (2.0 * (1.0 - e) * (1.0 - q));
    Ok(if tail >= 0.5 { 0.0 } else { -crate::normal::quantile(tail) })
}

/// Largest zero-threshold α for which some two-point prior on the grid and
/// some monotone penalty keep F̄_α ≤ δ at TPP u. At u = 1 only α = 0 keeps
/// every finite signal, and 0 is returned.
pub fn t_star_lower(u: f64, shape: &ProblemShape, grid: &LowerBoundGrid) -> Result<f64> {
    shape.validate()?;
    grid.validate()?;
    if !(u > 0.0 && u <= 1.0) {
        return domain(format!("u must lie in (0,1], got {u}"));
    }
    if u >= 1.0 {
        return Ok(0.0);
    }
    let feasible = |alpha: f64| AlphaTables::new(alpha, grid).feasible(u, shape);

    // The upper curve is reached by a real penalty, so thresholds just below
    // its zero-threshold are feasible for the relaxation.
    let guess = upper_threshold(u, shape)?;
    let mut candidates: Vec<f64> = [guess - 0.01, 0.9 * guess, 0.75 * guess, 0.5 * guess, 0.25 * guess]
        .into_iter()
        .filter(|a| *a > 0.0)
        .collect();
    candidates.push(0.05);
    let mut lo = None;
    for a in candidates {
        if feasible(a) {
            lo = Some(a);
            break;
        }
    }
    let mut lo = lo.ok_or_else(|| {
        Error::Configuration(format!("no feasible two-point prior on the grid at u = {u}"))
    })?;

    let mut step = (0.1 * lo).max(0.05);
    let mut hi = lo + step;
    while feasible(hi) {
        lo = hi;
        step *= 2.0;
        hi = lo + step;
        if hi > 1e3 {
            return Err(Error::Numerical(format!("zero-threshold unbounded at u = {u}")));
        }
    }
    while hi - lo > grid.alpha_tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Lower trade-off curve q(u) = FDP at the largest feasible zero-threshold.
pub fn q_lower(u: f64, shape: &ProblemShape, grid: &LowerBoundGrid) -> Result<f64> {
    if u == 0.0 {
        shape.validate()?;
        return Ok(0.0);
    }
    let t = t_star_lower(u, shape, grid)?;
    Ok(fdp_from_threshold(t, u, shape.epsilon))
}

/// Penalty z ↦ max(α, −H′(z)/H(z)) with
/// H(z) = 4(1−ε)φ(z) + 2ε Σ p_j [φ(z−t_j) + φ(z+t_j)].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPenalty {
    pub alpha: f64,
    pub epsilon: f64,
    pub prior: TwoPointPrior,
    /// Whether the penalty is nondecreasing on [α, z_max].
    pub monotone: bool,
    pub z_max: f64,
}

const SCAN_STEP: f64 = 1e-3;

impl AnalyticPenalty {
    /// Log-weights and shifts of the Gaussian terms of H.
    fn terms(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(5);
        if self.epsilon < 1.0 {
            out.push(((4.0 * (1.0 - self.epsilon)).ln(), 0.0));
        }
        for (t, p) in self.prior.atoms() {
            if p > 0.0 && t < INFINITE_T && self.epsilon > 0.0 {
                let lw = (2.0 * self.epsilon * p).ln();
                out.push((lw, t));
                out.push((lw, -t));
            }
        }
        out
    }

    /// Mean and variance of z − s under weights ∝ w_s φ(z − s).
    fn moments(&self, z: f64) -> (f64, f64) {
        let terms = self.terms();
        let logs: Vec<f64> = terms.iter().map(|(lw, s)| lw - 0.5 * (z - s).powi(2)).collect();
        let top = logs.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
        for ((_, s), l) in terms.iter().zip(&logs) {
            let w = (l - top).exp();
            let y = z - s;
            w0 += w;
            w1 += w * y;
            w2 += w * y * y;
        }
        let mean = w1 / w0;
        (mean, w2 / w0 - mean * mean)
    }

    /// −H′(z)/H(z).
    pub fn score(&self, z: f64) -> f64 {
        self.moments(z).0
    }

    /// d/dz of −H′/H, equal to 1 minus a posterior variance.
    pub fn score_slope(&self, z: f64) -> f64 {
        1.0 - self.moments(z).1
    }

    pub fn value(&self, z: f64) -> f64 {
        let z = z.abs();
        if z < self.alpha {
            return self.alpha;
        }
        self.alpha.max(self.score(z))
    }

    /// Points in (α, z_max) where −H′/H crosses α.
    pub fn kinks(&self) -> Vec<f64> {
        let g = |z: f64| self.score(z) - self.alpha;
        let n = ((self.z_max - self.alpha) / SCAN_STEP).ceil() as usize;
        let mut out = Vec::new();
        let mut prev = self.alpha;
        for k in 1..=n {
            let z = self.alpha + k as f64 * SCAN_STEP;
            if g(prev).signum() != g(z).signum() {
                let (mut a, mut b) = (prev, z);
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    if g(a).signum() == g(mid).signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                out.push(0.5 * (a + b));
            }
            prev = z;
        }
        out
    }
}

/// Analytic penalty for a two-point prior at zero-threshold α.
pub fn analytic_penalty_h(
    prior: TwoPointPrior,
    alpha: f64,
    shape: &ProblemShape,
) -> Result<AnalyticPenalty> {
    shape.validate()?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return domain(format!("alpha must be nonnegative, got {alpha}"));
    }
    let z_max = alpha.max(prior.largest_finite()) + 8.0;
    let mut pen = AnalyticPenalty {
        alpha,
        epsilon: shape.epsilon,
        prior,
        monotone: true,
        z_max,
    };
    let n = ((z_max - alpha) / SCAN_STEP).ceil() as usize;
    let mut prev = pen.value(alpha);
    for k in 1..=n {
        let v = pen.value(alpha + k as f64 * SCAN_STEP);
        if v < prev - 1e-12 {
            pen.monotone = false;
            break;
        }
        prev = v;
    }
    Ok(pen)
}

/// F_α[A] for a penalty function, by composite Gauss-Legendre on [α, z_end]
/// with A held at A(z_end) beyond. `breaks` are kinks of A.
pub fn f_alpha_exact(
    alpha: f64,
    a: impl Fn(f64) -> f64,
    breaks: &[f64],
    prior: &TwoPointPrior,
    shape: &ProblemShape,
) -> Result<f64> {
    shape.validate()?;
    let eps = shape.epsilon;
    let mut shifts = vec![(2.0 * (1.0 - eps), 0.0)];
    for (t, p) in prior.atoms() {
        if p > 0.0 {
            shifts.push((eps * p, t));
            shifts.push((eps * p, -t));
        }
    }
    let integrand = |z: f64| {
        let az = a(z);
        shifts
            .iter()
            .map(|&(w, s)| {
                let y = z - s;
                w * (y - az).powi(2) * pdf(y)
            })
            .sum::<f64>()
    };
    let z_end = alpha.max(prior.largest_finite()) + 12.0;
    let mut pts = vec![alpha, z_end];
    pts.extend(breaks.iter().copied().filter(|b| *b > alpha && *b < z_end));
    pts.sort_by(f64::total_cmp);
    let rule = legendre_rule();
    let mut total = 0.0;
    for seg in pts.windows(2) {
        let pieces = ((seg[1] - seg[0]) / 0.1).ceil().max(1.0) as usize;
        let h = (seg[1] - seg[0]) / pieces as f64;
        for k in 0..pieces {
            let mid = seg[0] + (k as f64 + 0.5) * h;
            total += 0.5
                * h
                * rule
                    .iter()
                    .map(|&(x, w)| w * integrand(mid + 0.5 * h * x))
                    .sum::<f64>();
        }
    }
    let a_end = a(z_end);
    for &(w, s) in &shifts {
        let l = z_end - s;
        let (fl, tl) = (pdf(l), sf(l));
        let head = if fl > 0.0 { l * fl } else { 0.0 } + tl;
        total += w * (head - 2.0 * a_end * fl + a_end * a_end * tl);
    }
    Ok(total + prior.killed_signal_error(alpha, eps))
}

/// Estimation error of the analytic penalty for a prior at threshold α.
pub fn analytic_error(
    prior: TwoPointPrior,
    alpha: f64,
    shape: &ProblemShape,
) -> Result<(f64, AnalyticPenalty)> {
    let pen = analytic_penalty_h(prior, alpha, shape)?;
    let kinks = pen.kinks();
    let f = f_alpha_exact(alpha, |z| pen.value(z), &kinks, &prior, shape)?;
    Ok((f, pen))
}

/// Atom t ≥ 0 with h_α(t) = u.
pub fn single_atom_for_tpp(u: f64, alpha: f64) -> Result<f64> {
    let floor = h_alpha(0.0, alpha);
    if !(u >= floor && u < 1.0) {
        return Err(Error::Infeasible(format!(
            "TPP {u} is not reachable by one atom at threshold {alpha}"
        )));
    }
    let mut hi = 1.0;
    while h_alpha(hi, alpha) < u {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h_alpha(mid, alpha) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + hi) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Worked single-atom example: starting at the Lasso threshold t⋆(u), the
/// analytic penalty leaves slack in the error budget, which is spent by
/// raising the zero-threshold until F = δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticChain {
    pub u: f64,
    pub t_star: f64,
    pub lasso_fdp: f64,
    pub t1: f64,
    pub error_at_t_star: f64,
    pub tau: f64,
    pub pi_star: f64,
    pub alpha: f64,
    pub t1_saturated: f64,
    pub slope_fdp: f64,
    pub u_dagger: f64,
    pub monotone_at_t_star: bool,
    pub monotone_at_alpha: bool,
}

/// Error of the single-atom analytic construction at threshold α and TPP u.
fn single_atom_error(u: f64, alpha: f64, shape: &ProblemShape) -> Result<(f64, f64, bool)> {
    let t1 = single_atom_for_tpp(u, alpha)?;
    let (f, pen) = analytic_error(TwoPointPrior::single(t1), alpha, shape)?;
    Ok((f, t1, pen.monotone))
}

/// Run the analytic chain at TPP u (u ≤ u⋆_DT).
pub fn analytic_chain(u: f64, shape: &ProblemShape) -> Result<AnalyticChain> {
    let ts = t_star(u, shape)?;
    let lasso_fdp = fdp_from_threshold(ts, u, shape.epsilon);
    let (e0, t1, mono0) = single_atom_error(u, ts, shape)?;
    if e0 >= shape.delta {
        return Err(Error::Infeasible(format!(
            "analytic penalty error {e0} exceeds delta at u = {u}"
        )));
    }
    let tau = (shape.sigma2 / (1.0 - e0 / shape.delta)).sqrt();
    let excess = |a: f64| single_atom_error(u, a, shape).map(|(f, _, _)| f - shape.delta);
    let mut lo = ts;
    let mut hi = ts + 0.05;
    while excess(hi)? < 0.0 {
        lo = hi;
        hi += 0.05;
        if hi > ts + 20.0 {
            return Err(Error::Numerical("cannot bracket the saturated threshold".into()));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if excess(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let (_, t1s, mono1) = single_atom_error(u, alpha, shape)?;
    Ok(AnalyticChain {
        u,
        t_star: ts,
        lasso_fdp,
        t1,
        error_at_t_star: e0,
        tau,
        pi_star: t1 * tau,
        alpha,
        t1_saturated: t1s,
        slope_fdp: fdp_from_threshold(alpha, u, shape.epsilon),
        u_dagger: u_dagger(shape)?,
        monotone_at_t_star: mono0,
        monotone_at_alpha: mono1,
    })
}

/// True when the single-atom analytic penalty at t⋆(u) is increasing and
/// keeps the error within δ.
fn certifies(u: f64, shape: &ProblemShape) -> bool {
    let Ok(ts) = t_star(u, shape) else {
        return false;
    };
    match single_atom_error(u, ts, shape) {
        Ok((f, _, mono)) => mono && f <= shape.delta,
        Err(_) => false,
    }
}

/// Smallest TPP at which the single-atom analytic construction beats the
/// Lasso threshold t⋆(u); 1 when it fails already at u⋆_DT.
pub fn u_dagger(shape: &ProblemShape) -> Result<f64> {
    let top = u_star_dt(shape)?;
    if top >= 1.0 || !certifies(top, shape) {
        return Ok(1.0);
    }
    let mut hi = top;
    let mut lo = hi;
    loop {
        let next = lo - 0.01;
        if next <= 1e-3 {
            return Ok(lo);
        }
        if !certifies(next, shape) {
            lo = next;
            break;
        }
        hi = next;
        lo = next;
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if certifies(mid, shape) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
