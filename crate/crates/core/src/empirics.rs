//! Finite-sample side: Gaussian designs, a FISTA solver and an AMP solver for
//! SLOPE, selection metrics, Monte Carlo sweeps, and the search for two-level
//! penalties that dominate a given Lasso penalty through state evolution.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::{PenaltySpec, PriorSpec, ProblemShape, standard_normal_vec};
use crate::error::{Error, Result, domain};
use crate::normal::{pdf, sf};
use crate::sorted_l1::{
    PenaltyVector, prox_unchecked, sorted_l1_norm, unique_nonzero_magnitudes_tol,
};
use crate::state_evolution::{
    SeConfig, SeSolution, abs_tail, lasso_alpha_for_lambda, lasso_alpha_min,
    solve_state_evolution, tpp_fdp_at, zero_threshold,
};

/// Support detection: |β̂_i| > ZERO_REL_TOL·max|β̂| counts as selected.
pub const ZERO_REL_TOL: f64 = 1e-8;

/// Magnitudes within this relative distance count as one level.
pub const UNIQUE_REL_TOL: f64 = 1e-6;

/// How the true coefficients are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalModel {
    /// β_i i.i.d. from the prior.
    Iid { prior: PriorSpec },
    /// Exactly round(fraction·p) nonzeros at uniform positions, values drawn
    /// from `values`.
    ExactSparsity { fraction: f64, values: PriorSpec },
}

impl SignalModel {
    fn sample<R: rand::Rng + ?Sized>(&self, p: usize, rng: &mut R) -> Vec<f64> {
        match self {
            SignalModel::Iid { prior } => prior.sample_with(p, rng),
            SignalModel::ExactSparsity { fraction, values } => {
                let k = ((fraction * p as f64).round() as usize).min(p);
                let mut idx: Vec<usize> = (0..p).collect();
                // Partial Fisher-Yates for the support.
                for i in 0..k {
                    let j = i + (rng.random::<f64>() * (p - i) as f64) as usize;
                    idx.swap(i, j.min(p - 1));
                }
                let vals = values.sample_with(k, rng);
                let mut beta = vec![0.0; p];
                for (i, v) in idx[..k].iter().zip(vals) {
                    beta[*i] = v;
                }
                beta
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SignalModel::Iid { prior } => prior.validate(),
            SignalModel::ExactSparsity { fraction, values } => {
                if !(0.0..=1.0).contains(fraction) {
                    return domain("sparsity fraction must lie in [0,1]");
                }
                values.validate()
            }
        }
    }
}

/// Linear model y = Xβ + w with a row-major n×p design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInstance {
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub beta: Vec<f64>,
    pub y: Vec<f64>,
    pub noise: Vec<f64>,
    pub seed: u64,
}

impl ModelInstance {
    /// X with i.i.d. N(0, 1/n) entries, β from `signal`, w ~ N(0, σ²).
    pub fn generate(n: usize, p: usize, signal: &SignalModel, sigma2: f64, seed: u64) -> Result<Self> {
        if n == 0 || p == 0 {
            return domain("n and p must be positive");
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return domain("noise variance must be nonnegative");
        }
        signal.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n as f64).sqrt();
        let x: Vec<f64> = standard_normal_vec(n * p, &mut rng)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let beta = signal.sample(p, &mut rng);
        let sd = sigma2.sqrt();
        let noise: Vec<f64> = standard_normal_vec(n, &mut rng)
            .into_iter()
            .map(|v| v * sd)
            .collect();
        let mut inst = Self::from_parts(n, p, x, beta, noise)?;
        inst.seed = seed;
        Ok(inst)
    }

    /// Builds an instance from explicit parts, computing y = Xβ + w.
    pub fn from_parts(n: usize, p: usize, x: Vec<f64>, beta: Vec<f64>, noise: Vec<f64>) -> Result<Self> {
        if x.len() != n * p {
            return Err(Error::Dimension {
                expected: n * p,
                found: x.len(),
            });
        }
        if beta.len() != p {
            return Err(Error::Dimension {
                expected: p,
                found: beta.len(),
            });
        }
        if noise.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: noise.len(),
            });
        }
        let mut inst = ModelInstance {
            n,
            p,
            x,
            beta,
            y: Vec::new(),
            noise,
            seed: 0,
        };
        let xb = inst.mul(&inst.beta);
        inst.y = xb.iter().zip(&inst.noise).map(|(a, b)| a + b).collect();
        Ok(inst)
    }

    /// Xb.
    pub fn mul(&self, b: &[f64]) -> Vec<f64> {
        self.x.chunks_exact(self.p).map(|row| dot(row, b)).collect()
    }

    /// Xᵀr.
    pub fn mul_t(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (row, &ri) in self.x.chunks_exact(self.p).zip(r) {
            if ri != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a * ri;
                }
            }
        }
        out
    }

    /// Squared column norms.
    pub fn column_norms_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for row in self.x.chunks_exact(self.p) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * a;
            }
        }
        out
    }

    /// ‖Xᵀy‖∞, the smallest constant penalty giving β̂ = 0.
    pub fn lambda_max(&self) -> f64 {
        self.mul_t(&self.y).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Selection and estimation quality of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub tpp: f64,
    pub fdp: f64,
    pub mse: f64,
    pub support_size: usize,
}

/// TPP, FDP (0/0 = 0) and MSE = ‖β̂ − β‖²/p. Entries with
/// |β̂_i| ≤ zero_tol·max|β̂| count as zero.
pub fn metrics(beta_true: &[f64], beta_hat: &[f64], zero_tol: f64) -> Result<SelectionMetrics> {
    if beta_true.len() != beta_hat.len() {
        return Err(Error::Dimension {
            expected: beta_true.len(),
            found: beta_hat.len(),
        });
    }
    let top = beta_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = zero_tol * top;
    let (mut true_pos, mut false_pos, mut signals) = (0usize, 0usize, 0usize);
    for (&b, &h) in beta_true.iter().zip(beta_hat) {
        let selected = h.abs() > cut && h != 0.0;
        if b != 0.0 {
            signals += 1;
            if selected {
                true_pos += 1;
            }
        } else if selected {
            false_pos += 1;
        }
    }
    let support = true_pos + false_pos;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = beta_true.len().max(1) as f64;
    Ok(SelectionMetrics {
        tpp: ratio(true_pos, signals),
        fdp: ratio(false_pos, support),
        mse: beta_true
            .iter()
            .zip(beta_hat)
            .map(|(b, h)| (b - h).powi(2))
            .sum::<f64>()
            / p,
        support_size: support,
    })
}

/// Stopping rule of the proximal gradient solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop when the duality gap is below tol·(1 + ½‖y‖²).
    pub tol: f64,
    pub power_iters: usize,
    /// Iterations between duality-gap checks.
    pub check_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 20_000,
            tol: 1e-8,
            power_iters: 50,
            check_every: 10,
        }
    }
}

/// Solution of the SLOPE program ½‖y − Xb‖² + J_λ(b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// Largest eigenvalue of XᵀX by power iteration from a fixed start.
pub fn spectral_norm_sq(inst: &ModelInstance, iters: usize) -> f64 {
    let mut v: Vec<f64> = (0..inst.p).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        let w = inst.mul_t(&inst.mul(&v));
        est = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        v = w;
    }
    est
}

fn objective(inst: &ModelInstance, b: &[f64], lambda: &PenaltyVector) -> Result<(f64, Vec<f64>)> {
    let r: Vec<f64> = inst.y.iter().zip(inst.mul(b)).map(|(y, xb)| y - xb).collect();
    let val = 0.5 * r.iter().map(|v| v * v).sum::<f64>() + sorted_l1_norm(b, lambda)?;
    Ok((val, r))
}

/// Duality gap at b with residual r. The dual point r/s is scaled into the
/// sorted-ℓ1 dual ball {v : Σ_{i≤k} |v|_(i) ≤ Σ_{i≤k} λ_i for all k}.
fn duality_gap(inst: &ModelInstance, primal: f64, r: &[f64], lambda: &[f64]) -> f64 {
    let mut g: Vec<f64> = inst.mul_t(r).into_iter().map(f64::abs).collect();
    g.sort_by(|a, b| b.total_cmp(a));
    let (mut cg, mut cl, mut s) = (0.0, 0.0, 1.0f64);
    for (gi, li) in g.iter().zip(lambda) {
        cg += gi;
        cl += li;
        if cl > 0.0 {
            s = s.max(cg / cl);
        } else if cg > 0.0 {
            return f64::INFINITY;
        }
    }
    let yy: f64 = inst.y.iter().map(|v| v * v).sum();
    let diff: f64 = inst.y.iter().zip(r).map(|(y, ri)| (y - ri / s).powi(2)).sum();
    primal - 0.5 * (yy - diff)
}

/// Accelerated proximal gradient with gradient-based momentum restart. The
/// returned iterate is a prox output, so exact zeros are preserved.
pub fn solve_slope(
    inst: &ModelInstance,
    lambda: &PenaltyVector,
    cfg: &SolverConfig,
    warm: Option<&[f64]>,
) -> Result<SlopeFit> {
    if lambda.len() != inst.p {
        return Err(Error::Dimension {
            expected: inst.p,
            found: lambda.len(),
        });
    }
    // Slack on the power-iteration estimate, which approaches L from below.
    let lip = 1.05 * spectral_norm_sq(inst, cfg.power_iters);
    if lip == 0.0 {
        return Ok(SlopeFit {
            beta: vec![0.0; inst.p],
            objective: 0.5 * inst.y.iter().map(|v| v * v).sum::<f64>(),
            gap: 0.0,
            iterations: 0,
        });
    }
    let step_pen: Vec<f64> = lambda.as_slice().iter().map(|l| l / lip).collect();
    let scale = 1.0 + 0.5 * inst.y.iter().map(|v| v * v).sum::<f64>();
    let mut x = match warm {
        Some(w) if w.len() == inst.p => w.to_vec(),
        _ => vec![0.0; inst.p],
    };
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::new();
    let mut gap = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let resid: Vec<f64> = inst.mul(&z).iter().zip(&inst.y).map(|(a, y)| a - y).collect();
        let grad = inst.mul_t(&resid);
        let point: Vec<f64> = z.iter().zip(&grad).map(|(a, g)| a - g / lip).collect();
        let next = prox_unchecked(&point, &step_pen);
        // Restart momentum when it points against the last step.
        let dot: f64 = z
            .iter()
            .zip(&next)
            .zip(&x)
            .map(|((zi, ni), xi)| (zi - ni) * (ni - xi))
            .sum();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if dot > 0.0 {
            t = 1.0;
            z = next.clone();
        } else {
            let mom = (t - 1.0) / t_next;
            z = next.iter().zip(&x).map(|(n, o)| n + mom * (n - o)).collect();
            t = t_next;
        }
        x = next;
        if it % cfg.check_every == 0 || it == cfg.max_iter {
            let (primal, r) = objective(inst, &x, lambda)?;
            gap = duality_gap(inst, primal, &r, lambda.as_slice());
            trace.push(gap);
            if !primal.is_finite() {
                return Err(Error::Numerical("objective is not finite".into()));
            }
            if gap <= cfg.tol * scale {
                return Ok(SlopeFit {
                    beta: x,
                    objective: primal,
                    gap,
                    iterations: it,
                });
            }
        }
    }
    Err(Error::Convergence {
        iterations: cfg.max_iter,
        last: gap,
        trace,
    })
}

/// Result of an AMP run with per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmpFit {
    pub beta: Vec<f64>,
    /// Empirical τ̂_t = ‖z^t‖/√n.
    pub tau_trace: Vec<f64>,
    /// ‖β^t − β‖²/p.
    pub mse_trace: Vec<f64>,
    /// Normalized penalty used by the iteration.
    pub alpha: Vec<f64>,
}

/// AMP iteration β^{t+1} = prox(Xᵀz^t + β^t; α τ̂_t),
/// z^{t+1} = y − Xβ^{t+1} + z^t ‖β^{t+1}‖₀*/n. The normalized penalty is
/// α = λ / (τ (1 − ‖·‖₀*/(δp))) from the state-evolution fixed point.
pub fn solve_slope_amp(
    inst: &ModelInstance,
    lambda: &PenaltyVector,
    se: &SeSolution,
    iters: usize,
) -> Result<AmpFit> {
    if lambda.len() != inst.p {
        return Err(Error::Dimension {
            expected: inst.p,
            found: lambda.len(),
        });
    }
    let delta = inst.n as f64 / inst.p as f64;
    let factor = se.tau * (1.0 - se.unique_fraction / delta);
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Infeasible(
            "state-evolution calibration factor must be positive".into(),
        ));
    }
    let alpha: Vec<f64> = lambda.as_slice().iter().map(|l| l / factor).collect();
    let n = inst.n as f64;
    let mut beta = vec![0.0; inst.p];
    let mut z = inst.y.clone();
    let mut tau_trace = Vec::with_capacity(iters + 1);
    let mut mse_trace = Vec::with_capacity(iters + 1);
    let mse = |b: &[f64]| {
        b.iter().zip(&inst.beta).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / inst.p as f64
    };
    let blow_up = 1e6 * (1.0 + inst.y.iter().map(|v| v * v).sum::<f64>().sqrt());
    for _ in 0..iters {
        let tau_hat = (z.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        tau_trace.push(tau_hat);
        mse_trace.push(mse(&beta));
        let pseudo: Vec<f64> = inst.mul_t(&z).iter().zip(&beta).map(|(a, b)| a + b).collect();
        let theta: Vec<f64> = alpha.iter().map(|a| a * tau_hat).collect();
        let next = prox_unchecked(&pseudo, &theta);
        let unique = unique_nonzero_magnitudes_tol(&next, UNIQUE_REL_TOL, 0.0) as f64;
        let xb = inst.mul(&next);
        z = inst
            .y
            .iter()
            .zip(&xb)
            .zip(&z)
            .map(|((y, a), zo)| y - a + zo * unique / n)
            .collect();
        beta = next;
        let norm = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > blow_up {
            return Err(Error::Instability(format!(
                "AMP iterate norm {norm:.3e} exploded"
            )));
        }
    }
    tau_trace.push((z.iter().map(|v| v * v).sum::<f64>() / n).sqrt());
    mse_trace.push(mse(&beta));
    Ok(AmpFit {
        beta,
        tau_trace,
        mse_trace,
        alpha,
    })
}

/// Seed of trial `trial` under `master`: the first draw of the ChaCha8
/// stream numbered `trial`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial);
    rng.random::<u64>()
}

/// One penalty of a sweep. With `relative` the levels multiply the trial's
/// λ_max = ‖Xᵀy‖∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyPoint {
    pub label: String,
    pub family: PenaltySpec,
    #[serde(default)]
    pub relative: bool,
}

/// Monte Carlo sweep over penalties with shared instances per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub id: String,
    pub n: usize,
    pub p: usize,
    pub sigma2: f64,
    pub signal: SignalModel,
    /// Solved in order within a trial, each warm-started from the previous.
    pub penalties: Vec<PenaltyPoint>,
    pub trials: usize,
    pub master_seed: u64,
    pub solver: SolverConfig,
}

/// One (penalty, trial) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config_id: String,
    pub label: String,
    pub trial: usize,
    pub seed: u64,
    pub tpp: f64,
    pub fdp: f64,
    pub mse: f64,
    pub support_size: usize,
    pub unique_magnitudes: usize,
    pub is_lasso: bool,
    /// Solver error message, if the trial failed.
    pub error: Option<String>,
}

/// Per-penalty averages over successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_id: String,
    pub label: String,
    pub mean_tpp: f64,
    pub mean_fdp: f64,
    pub mean_mse: f64,
    pub trials: usize,
    pub failures: usize,
}

/// Result of a sweep: raw records and per-penalty summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<SweepSummary>,
}

fn run_trial(cfg: &SweepConfig, trial: usize) -> Result<Vec<TrialRecord>> {
    let seed = trial_seed(cfg.master_seed, trial as u64);
    let inst = ModelInstance::generate(cfg.n, cfg.p, &cfg.signal, cfg.sigma2, seed)?;
    let lmax = inst.lambda_max();
    let mut warm: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(cfg.penalties.len());
    for point in &cfg.penalties {
        let family = if point.relative {
            point.family.scaled(lmax.max(f64::MIN_POSITIVE))
        } else {
            point.family.clone()
        };
        let is_lasso = matches!(family, PenaltySpec::Constant { .. });
        let base = TrialRecord {
            config_id: cfg.id.clone(),
            label: point.label.clone(),
            trial,
            seed,
            tpp: f64::NAN,
            fdp: f64::NAN,
            mse: f64::NAN,
            support_size: 0,
            unique_magnitudes: 0,
            is_lasso,
            error: None,
        };
        let fit = family
            .sequence(cfg.p)
            .and_then(|lam| solve_slope(&inst, &lam, &cfg.solver, warm.as_deref()));
        match fit {
            Ok(fit) => {
                let m = metrics(&inst.beta, &fit.beta, ZERO_REL_TOL)?;
                let top = fit.beta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let unique =
                    unique_nonzero_magnitudes_tol(&fit.beta, UNIQUE_REL_TOL, ZERO_REL_TOL * top);
                out.push(TrialRecord {
                    tpp: m.tpp,
                    fdp: m.fdp,
                    mse: m.mse,
                    support_size: m.support_size,
                    unique_magnitudes: unique,
                    ..base
                });
                warm = Some(fit.beta);
            }
            Err(err) => out.push(TrialRecord {
                error: Some(err.to_string()),
                ..base
            }),
        }
    }
    Ok(out)
}

/// Runs every trial (in parallel) and averages per penalty. Solver failures
/// are recorded per trial and excluded from the means.
pub fn experiment_tpp_fdp_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.n == 0 || cfg.p == 0 || cfg.trials == 0 {
        return domain("n, p and trials must be positive");
    }
    if cfg.penalties.is_empty() {
        return domain("sweep needs at least one penalty");
    }
    cfg.signal.validate()?;
    let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect::<Result<_>>()?;
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    let summaries = cfg
        .penalties
        .iter()
        .map(|point| {
            let ok: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.label == point.label && r.error.is_none())
                .collect();
            let k = ok.len();
            let mean = |f: fn(&TrialRecord) -> f64| {
                if k == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / k as f64
                }
            };
            SweepSummary {
                config_id: cfg.id.clone(),
                label: point.label.clone(),
                mean_tpp: mean(|r| r.tpp),
                mean_fdp: mean(|r| r.fdp),
                mean_mse: mean(|r| r.mse),
                trials: k,
                failures: cfg.trials - k,
            }
        })
        .collect();
    Ok(SweepResult { records, summaries })
}

/// Asymptotic quantities of one penalty at the state-evolution fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeMetrics {
    pub tau: f64,
    pub sparsity: f64,
    pub zero_threshold: f64,
    pub tpp: f64,
    pub fdp: f64,
    pub mse: f64,
}

impl SeMetrics {
    fn from_solution(shape: &ProblemShape, prior: &PriorSpec, se: &SeSolution, alpha: f64) -> Self {
        let (tpp, fdp) = tpp_fdp_at(prior, se.tau, alpha);
        SeMetrics {
            tau: se.tau,
            sparsity: se.sparsity,
            zero_threshold: se.zero_threshold,
            tpp,
            fdp,
            mse: shape.delta * (se.tau * se.tau - shape.sigma2),
        }
    }
}

/// Search grid of the instance-superiority search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperiorityConfig {
    pub se: SeConfig,
    /// ℓ takes this many points in (α_L, ell_factor·α_L].
    pub ell_points: usize,
    pub ell_factor: f64,
    pub w_grid: Vec<f64>,
    /// Relative tolerance when matching the SLOPE zero-threshold to α_L.
    pub threshold_rtol: f64,
}

impl Default for SuperiorityConfig {
    fn default() -> Self {
        SuperiorityConfig {
            se: SeConfig::with_p(20_000),
            ell_points: 40,
            ell_factor: 4.0,
            w_grid: vec![0.01, 0.02, 0.05, 0.1, 0.2],
            threshold_rtol: 5e-3,
        }
    }
}

/// Lasso penalty, the dominating two-level penalty if found, and the
/// asymptotic comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceComparison {
    pub alpha_l: f64,
    pub lasso: SeMetrics,
    /// Normalized two-level penalty A = (ℓ on the top w, α_L below).
    pub penalty: Option<PenaltySpec>,
    pub slope: Option<SeMetrics>,
    pub ell: Option<f64>,
    pub w: Option<f64>,
    /// Analytic dτ/dℓ at ℓ = α_L for the smallest grid w.
    pub dtau_dell: f64,
    /// E[Z sgn(η) | |η| ≥ q_w] for the same w; dτ/dℓ < 0 iff it exceeds α_L.
    pub ez_sign: f64,
    pub evaluated: usize,
}

impl InstanceComparison {
    pub fn found(&self) -> bool {
        self.slope.is_some()
    }
}

/// E[Z sgn(η) | |π + Z| ≥ q̃] = E[φ(q̃−π) + φ(q̃+π)] / E[Φ(π−q̃) + Φ(−π−q̃)] for
/// π = Π/τ.
pub fn ez_sign(prior: &PriorSpec, tau: f64, q_tilde: f64) -> f64 {
    let num = prior.expect(|b| pdf(q_tilde - b / tau) + pdf(q_tilde + b / tau));
    let den = prior.expect(|b| sf(q_tilde - b / tau) + sf(q_tilde + b / tau));
    num / den
}

/// Analytic dτ/dℓ at ℓ = α_L of the two-level penalty (ℓ, α_L, w):
/// (wτ/δ)(E[Z sgn η | top w] − α_L) / ((1/δ)E[(Z − sgn(η)α_L)²; η ≠ 0] − 1).
pub fn dtau_dell_at_lasso(shape: &ProblemShape, prior: &PriorSpec, tau: f64, alpha_l: f64, w: f64) -> f64 {
    let q_tilde = zero_threshold(prior, tau, w);
    let ez = ez_sign(prior, tau, q_tilde);
    // E[(Z − sgn(π+Z)α)²; |π+Z| > α] = E over π of the two one-sided tails.
    let tail = |m: f64| {
        // E[(Z − α)²; Z > α − m] with c = α − m.
        let c = alpha_l - m;
        let a = alpha_l;
        (1.0 + a * a) * sf(c) + (c - 2.0 * a) * pdf(c)
    };
    let den_e = prior.expect(|b| tail(b / tau) + tail(-b / tau));
    let num = w * tau / shape.delta * (ez - alpha_l);
    num / (den_e / shape.delta - 1.0)
}

/// Searches two-level normalized penalties (ℓ, α_L, w) for one with the same
/// zero-threshold as the Lasso penalty α_L, smaller τ and larger sparsity.
/// Both sides use the same quantile state evolution so its errors cancel.
pub fn instance_superiority_at_alpha(
    shape: &ProblemShape,
    prior: &PriorSpec,
    alpha_l: f64,
    cfg: &SuperiorityConfig,
) -> Result<InstanceComparison> {
    shape.validate()?;
    prior.validate()?;
    if !(alpha_l > 0.0 && alpha_l.is_finite()) {
        return domain(format!("Lasso threshold must be positive, got {alpha_l}"));
    }
    if cfg.ell_points == 0 || cfg.w_grid.is_empty() || !(cfg.ell_factor > 1.0) {
        return Err(Error::Configuration("empty superiority search grid".into()));
    }
    let lasso_se = solve_state_evolution(
        shape,
        prior,
        &PenaltySpec::Constant { lambda: alpha_l },
        &cfg.se,
    )?;
    let lasso = SeMetrics::from_solution(shape, prior, &lasso_se, alpha_l);
    let w_small = cfg.w_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let q_tilde = zero_threshold(prior, lasso.tau, w_small);
    let ezs = ez_sign(prior, lasso.tau, q_tilde);
    let dtau = dtau_dell_at_lasso(shape, prior, lasso.tau, alpha_l, w_small);

    let warm = SeConfig {
        tau_init: Some(lasso.tau),
        ..cfg.se
    };
    let mut ws = cfg.w_grid.clone();
    ws.sort_by(f64::total_cmp);
    let mut evaluated = 0;
    for &w in ws.iter().filter(|w| **w < lasso.sparsity) {
        for k in 1..=cfg.ell_points {
            let ell = alpha_l * (1.0 + (cfg.ell_factor - 1.0) * k as f64 / cfg.ell_points as f64);
            let penalty = PenaltySpec::TwoLevel {
                a: ell,
                b: alpha_l,
                w,
            };
            evaluated += 1;
            let Ok(se) = solve_state_evolution(shape, prior, &penalty, &warm) else {
                continue;
            };
            let same_threshold = se.sparsity > w
                && (se.zero_threshold - alpha_l).abs() <= cfg.threshold_rtol * alpha_l;
            if same_threshold && se.tau < lasso.tau && se.sparsity > lasso.sparsity {
                let slope = SeMetrics::from_solution(shape, prior, &se, alpha_l);
                return Ok(InstanceComparison {
                    alpha_l,
                    lasso,
                    penalty: Some(penalty),
                    slope: Some(slope),
                    ell: Some(ell),
                    w: Some(w),
                    dtau_dell: dtau,
                    ez_sign: ezs,
                    evaluated,
                });
            }
        }
    }
    Ok(InstanceComparison {
        alpha_l,
        lasso,
        penalty: None,
        slope: None,
        ell: None,
        w: None,
        dtau_dell: dtau,
        ez_sign: ezs,
        evaluated,
    })
}

/// Same search for an original-scale Lasso penalty λ, mapped to α_L through
/// the Lasso calibration.
pub fn instance_superiority_search(
    shape: &ProblemShape,
    prior: &PriorSpec,
    lasso_lambda: f64,
    cfg: &SuperiorityConfig,
) -> Result<InstanceComparison> {
    let alpha_l = lasso_alpha_for_lambda(shape, prior, lasso_lambda)?;
    instance_superiority_at_alpha(shape, prior, alpha_l, cfg)
}

/// Lasso thresholds α_L = α₀ + k·span/points for k = 1..points.
pub fn lasso_path_alphas(shape: &ProblemShape, prior: &PriorSpec, points: usize, span: f64) -> Result<Vec<f64>> {
    let a0 = lasso_alpha_min(shape, prior)?;
    Ok((1..=points)
        .map(|k| a0 + span * k as f64 / points as f64)
        .collect())
}

/// Sparsity of a normalized threshold at effective noise τ.
pub fn sparsity_at(prior: &PriorSpec, tau: f64, alpha: f64) -> f64 {
    abs_tail(prior, tau, alpha)
}

/// Named experiment setups reproducing the published figures.
pub const PRESET_NAMES: [&str; 5] = ["fig1-left", "fig1-right", "fig3", "fig7", "d3"];

/// Lasso path used by the comparison presets, in fractions of λ_max.
const LASSO_FRACTIONS: [f64; 10] = [0.8, 0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002];

/// Superiority search over a path of Lasso thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperiorityPreset {
    pub shape: ProblemShape,
    pub prior: PriorSpec,
    pub alphas: Vec<f64>,
    pub config: SuperiorityConfig,
}

impl SuperiorityPreset {
    /// Runs the search at every path point, in parallel.
    pub fn run(&self) -> Result<Vec<InstanceComparison>> {
        self.alphas
            .par_iter()
            .map(|a| instance_superiority_at_alpha(&self.shape, &self.prior, *a, &self.config))
            .collect()
    }
}

/// A resolved preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preset {
    Sweep(SweepConfig),
    Superiority(SuperiorityPreset),
    /// Analytic constant-prior chain at TPP level `u`.
    Chain { u: f64, shape: ProblemShape },
}

fn comparison_sweep(id: &str, n: usize, epsilon: f64, w: f64, trials: usize, seed: u64) -> SweepConfig {
    let mut penalties: Vec<PenaltyPoint> = LASSO_FRACTIONS
        .iter()
        .map(|f| PenaltyPoint {
            label: format!("lasso:{f}"),
            family: PenaltySpec::Constant { lambda: *f },
            relative: true,
        })
        .collect();
    for lam in [0.2, 0.1, 0.05] {
        for r in [0.5, 0.2, 0.1, 0.05] {
            penalties.push(PenaltyPoint {
                label: format!("slope:{lam}:{r}"),
                family: PenaltySpec::TwoLevel {
                    a: lam,
                    b: r * lam,
                    w,
                },
                relative: true,
            });
        }
    }
    SweepConfig {
        id: id.into(),
        n,
        p: 1000,
        sigma2: 0.0,
        signal: SignalModel::ExactSparsity {
            fraction: epsilon,
            values: PriorSpec::Gaussian { mu: 0.0, var: 1.0 },
        },
        penalties,
        trials,
        master_seed: seed,
        solver: SolverConfig::default(),
    }
}

/// Resolves a preset by name. `trials` and `seed` override the defaults of
/// Monte Carlo presets.
pub fn preset(name: &str, trials: Option<usize>, seed: Option<u64>) -> Result<Preset> {
    let seed = seed.unwrap_or(20_240_101);
    match name {
        "fig1-left" => Ok(Preset::Sweep(comparison_sweep(
            name,
            300,
            0.2,
            0.2,
            trials.unwrap_or(10),
            seed,
        ))),
        "fig1-right" => Ok(Preset::Sweep(comparison_sweep(
            name,
            400,
            0.7,
            0.3,
            trials.unwrap_or(10),
            seed,
        ))),
        "fig3" => {
            let shape = ProblemShape::new(0.3, 0.2, 0.0)?;
            let es = crate::tradeoff::epsilon_star(shape.delta)?;
            let m = crate::dists::DEFAULT_M;
            let mut penalties = Vec::new();
            for r in [0.3, 0.2, 0.1, 0.05] {
                for w in [0.05, 0.1, 0.15, 0.2] {
                    penalties.push(PenaltyPoint {
                        label: format!("slope:{r}:{w}"),
                        family: PenaltySpec::TwoLevel {
                            a: m.sqrt(),
                            b: r * m.sqrt(),
                            w,
                        },
                        relative: false,
                    });
                }
            }
            Ok(Preset::Sweep(SweepConfig {
                id: name.into(),
                n: 300,
                p: 1000,
                sigma2: 0.0,
                signal: SignalModel::Iid {
                    prior: PriorSpec::ThreePoint {
                        m,
                        eps: shape.epsilon,
                        eps_prime: es / shape.epsilon,
                    },
                },
                penalties,
                trials: trials.unwrap_or(50),
                master_seed: seed,
                solver: SolverConfig::default(),
            }))
        }
        "fig7" => {
            let shape = ProblemShape::new(0.3, 0.5, 0.0)?;
            let prior = PriorSpec::bernoulli(0.5, 1.0);
            // Keeps the Lasso sparsity well above the smallest grid w.
            let alphas = lasso_path_alphas(&shape, &prior, 20, 1.2)?;
            Ok(Preset::Superiority(SuperiorityPreset {
                shape,
                prior,
                alphas,
                config: SuperiorityConfig::default(),
            }))
        }
        "d3" => {
            let shape = ProblemShape::new(0.3, 0.2, 1.0)?;
            Ok(Preset::Chain {
                u: crate::tradeoff::u_star_dt(&shape)?,
                shape,
            })
        }
        other => Err(Error::Configuration(format!(
            "unknown preset '{other}'; expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sorted_l1::prox;

    fn lasso_cd(inst: &ModelInstance, lambda: f64) -> Vec<f64> {
        // Cyclic coordinate descent on ½‖y − Xb‖² + λ‖b‖₁.
        let (n, p) = (inst.n, inst.p);
        let col = |j: usize| (0..n).map(move |i| inst.x[i * p + j]);
        let norms = inst.column_norms_sq();
        let mut b = vec![0.0; p];
        let mut r = inst.y.clone();
        for _ in 0..100_000 {
            let mut delta = 0.0f64;
            for j in 0..p {
                let rho: f64 = col(j).zip(&r).map(|(x, ri)| x * ri).sum::<f64>() + norms[j] * b[j];
                let new = rho.signum() * (rho.abs() - lambda).max(0.0) / norms[j];
                let d = new - b[j];
                if d != 0.0 {
                    for (i, x) in col(j).enumerate() {
                        r[i] -= x * d;
                    }
                    b[j] = new;
                    delta = delta.max(d.abs());
                }
            }
            if delta < 1e-13 {
                break;
            }
        }
        b
    }

    fn bernoulli_instance(n: usize, p: usize, sigma2: f64, seed: u64) -> ModelInstance {
        let signal = SignalModel::Iid {
            prior: PriorSpec::bernoulli(0.2, 3.0),
        };
        ModelInstance::generate(n, p, &signal, sigma2, seed).unwrap()
    }

    #[test]
    fn metrics_hand_counts() {
        let m = metrics(&[1.0, 0.0, 2.0, 0.0], &[1.0, 3.0, 0.0, 0.0], ZERO_REL_TOL).unwrap();
        assert_eq!((m.tpp, m.fdp, m.support_size), (0.5, 0.5, 2));
        assert!((m.mse - (0.0 + 9.0 + 4.0 + 0.0) / 4.0).abs() < 1e-15);
        let zero = metrics(&[1.0, 0.0], &[0.0, 0.0], ZERO_REL_TOL).unwrap();
        assert_eq!((zero.tpp, zero.fdp), (0.0, 0.0));
        let exact = metrics(&[1.0, 0.0, -2.0], &[1.0, 0.0, -2.0], ZERO_REL_TOL).unwrap();
        assert_eq!((exact.tpp, exact.fdp, exact.mse), (1.0, 0.0, 0.0));
        assert!(metrics(&[1.0], &[1.0, 2.0], ZERO_REL_TOL).is_err());
    }

    #[test]
    fn design_is_consistent() {
        let inst = bernoulli_instance(200, 300, 0.5, 3);
        let xb = inst.mul(&inst.beta);
        for ((y, a), w) in inst.y.iter().zip(&xb).zip(&inst.noise) {
            assert_eq!(*y, a + w);
        }
        let bound = 5.0 / (inst.n as f64).sqrt();
        for c in inst.column_norms_sq() {
            assert!((c.sqrt() - 1.0).abs() < bound);
        }
        let again = bernoulli_instance(200, 300, 0.5, 3);
        assert_eq!(inst, again);
    }

    #[test]
    fn huge_penalty_gives_zero() {
        let inst = bernoulli_instance(50, 80, 0.1, 1);
        let lam = PenaltyVector::constant(10.0 * inst.lambda_max(), inst.p).unwrap();
        let fit = solve_slope(&inst, &lam, &SolverConfig::default(), None).unwrap();
        assert!(fit.beta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_penalty_matches_coordinate_descent() {
        for seed in 0..4 {
            let inst = bernoulli_instance(30, 50, 0.25, seed);
            let lambda = 0.2 * inst.lambda_max();
            let lam = PenaltyVector::constant(lambda, inst.p).unwrap();
            let cfg = SolverConfig {
                tol: 1e-14,
                max_iter: 200_000,
                ..SolverConfig::default()
            };
            let fit = solve_slope(&inst, &lam, &cfg, None).unwrap();
            let oracle = lasso_cd(&inst, lambda);
            for (a, b) in fit.beta.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-5, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn orthogonal_design_reduces_to_prox() {
        let p = 40;
        let mut x = vec![0.0; p * p];
        for i in 0..p {
            x[i * p + i] = 1.0;
        }
        let beta: Vec<f64> = (0..p).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let noise: Vec<f64> = (0..p).map(|i| 0.1 * ((i * 13) % 7) as f64).collect();
        let inst = ModelInstance::from_parts(p, p, x, beta, noise).unwrap();
        let lam = PenaltyVector::new((0..p).map(|i| 3.0 - 2.5 * i as f64 / p as f64).collect()).unwrap();
        let fit = solve_slope(&inst, &lam, &SolverConfig::default(), None).unwrap();
        let exact = prox(&inst.y, &lam).unwrap();
        for (a, b) in fit.beta.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn amp_zero_signal_stays_zero() {
        let x: Vec<f64> = (0..20 * 40).map(|i| ((i % 7) as f64 - 3.0) / 10.0).collect();
        let inst = ModelInstance::from_parts(20, 40, x, vec![0.0; 40], vec![0.0; 20]).unwrap();
        let shape = ProblemShape::new(0.5, 0.2, 0.0).unwrap();
        let prior = PriorSpec::bernoulli(0.2, 1.0);
        let se = solve_state_evolution(
            &shape,
            &prior,
            &PenaltySpec::Constant { lambda: 2.0 },
            &SeConfig::with_p(2_000),
        )
        .unwrap();
        let lam = PenaltyVector::constant(1.0, 40).unwrap();
        let fit = solve_slope_amp(&inst, &lam, &se, 10).unwrap();
        assert!(fit.beta.iter().all(|v| *v == 0.0));
        assert!(fit.tau_trace.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn amp_agrees_with_fista_and_tracks_state_evolution() {
        let (n, p) = (300, 1000);
        let shape = ProblemShape::new(0.3, 0.2, 0.0).unwrap();
        let prior = PriorSpec::bernoulli(0.2, 1.0);
        let a = PenaltySpec::TwoLevel { a: 2.5, b: 1.5, w: 0.1 };
        let se = solve_state_evolution(&shape, &prior, &a, &SeConfig::with_p(20_000)).unwrap();
        let lam_spec = crate::state_evolution::calibrate(&shape, &se).unwrap();
        let lam = lam_spec.sequence(p).unwrap();
        let inst = ModelInstance::generate(
            n,
            p,
            &SignalModel::Iid { prior: prior.clone() },
            0.0,
            11,
        )
        .unwrap();
        let amp = solve_slope_amp(&inst, &lam, &se, 30).unwrap();
        let fista = solve_slope(&inst, &lam, &SolverConfig::default(), None).unwrap();
        let dist: f64 = amp
            .beta
            .iter()
            .zip(&fista.beta)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / p as f64;
        assert!(dist < 1e-3, "{dist}");
        for t in 10..amp.tau_trace.len() {
            let pred = shape.delta * amp.tau_trace[t].powi(2);
            let obs = amp.mse_trace[t];
            assert!((obs - pred).abs() < 0.1 * pred, "t={t}: {obs} vs {pred}");
        }
    }

    #[test]
    fn presets_resolve() {
        for name in PRESET_NAMES {
            assert!(preset(name, None, None).is_ok(), "{name}");
        }
        assert!(matches!(preset("nope", None, None), Err(Error::Configuration(_))));
        let Preset::Sweep(cfg) = preset("fig3", Some(2), Some(1)).unwrap() else {
            panic!("fig3 is a sweep");
        };
        assert_eq!((cfg.trials, cfg.master_seed, cfg.n, cfg.p), (2, 1, 300, 1000));
    }

    #[test]
    fn trial_seeds_are_reproducible_and_distinct() {
        assert_eq!(trial_seed(5, 3), trial_seed(5, 3));
        assert_ne!(trial_seed(5, 3), trial_seed(5, 4));
        assert_ne!(trial_seed(5, 3), trial_seed(6, 3));
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = SweepConfig {
            id: "t".into(),
            n: 40,
            p: 100,
            sigma2: 0.0,
            signal: SignalModel::ExactSparsity {
                fraction: 0.2,
                values: PriorSpec::Gaussian { mu: 0.0, var: 1.0 },
            },
            penalties: vec![
                PenaltyPoint {
                    label: "lasso".into(),
                    family: PenaltySpec::Constant { lambda: 0.3 },
                    relative: true,
                },
                PenaltyPoint {
                    label: "slope".into(),
                    family: PenaltySpec::TwoLevel { a: 0.3, b: 0.1, w: 0.2 },
                    relative: true,
                },
            ],
            trials: 3,
            master_seed: 9,
            solver: SolverConfig::default(),
        };
        let a = experiment_tpp_fdp_sweep(&cfg).unwrap();
        let b = experiment_tpp_fdp_sweep(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 6);
        for r in &a.records {
            assert!(r.error.is_none());
            if r.is_lasso {
                assert!(r.support_size <= cfg.n);
            }
        }
    }

    #[test]
    fn superiority_ties_at_the_lasso_and_wins_nearby() {
        let shape = ProblemShape::new(0.3, 0.5, 0.0).unwrap();
        let prior = PriorSpec::bernoulli(0.5, 1.0);
        let cfg = SuperiorityConfig {
            se: SeConfig::with_p(5_000),
            ..SuperiorityConfig::default()
        };
        let a0 = lasso_alpha_min(&shape, &prior).unwrap();
        let alpha_l = a0 + 0.5;
        let cmp = instance_superiority_at_alpha(&shape, &prior, alpha_l, &cfg).unwrap();
        assert!(cmp.found(), "{cmp:?}");
        let s = cmp.slope.unwrap();
        assert!(s.tpp > cmp.lasso.tpp && s.fdp < cmp.lasso.fdp && s.mse < cmp.lasso.mse);
        // ℓ = α_L is the Lasso itself.
        let tie = solve_state_evolution(&shape, &prior, &PenaltySpec::Constant { lambda: alpha_l }, &cfg.se)
            .unwrap();
        assert_eq!(tie.tau, cmp.lasso.tau);
    }

    #[test]
    fn analytic_tau_slope_matches_finite_difference_sign() {
        let shape = ProblemShape::new(0.3, 0.5, 0.0).unwrap();
        let prior = PriorSpec::bernoulli(0.5, 1.0);
        let se_cfg = SeConfig::with_p(20_000);
        let alpha_l = lasso_alpha_min(&shape, &prior).unwrap() + 0.5;
        let w = 0.01;
        let lasso = solve_state_evolution(&shape, &prior, &PenaltySpec::Constant { lambda: alpha_l }, &se_cfg)
            .unwrap();
        let analytic = dtau_dell_at_lasso(&shape, &prior, lasso.tau, alpha_l, w);
        let h = 1e-3;
        let tau_at = |ell: f64| {
            solve_state_evolution(&shape, &prior, &PenaltySpec::TwoLevel { a: ell, b: alpha_l, w }, &se_cfg)
                .unwrap()
                .tau
        };
        // Central difference around α_L + h; ℓ < α_L is not a valid penalty.
        let fd = (tau_at(alpha_l + 2.0 * h) - lasso.tau) / (2.0 * h);
        assert!(analytic < 0.0, "{analytic}");
        assert_eq!(analytic.signum(), fd.signum(), "{analytic} vs {fd}");
    }
}
