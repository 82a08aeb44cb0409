//! Convex quadratic programs min ½AᵀQA − Aᵀd subject to GA ≥ h with diagonal
//! Q > 0. A dual active-set solver handles general constraints; the monotone
//! chain A₁ ≥ α, A_{i+1} ≥ A_i also has an O(m) isotonic-regression path.

use crate::error::{Error, Result};

/// Linear inequality constraints GA ≥ h.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraints {
    /// A₁ ≥ α and A_{i+1} ≥ A_i. Row 0 is the floor, row i couples i−1 and i.
    MonotoneChain,
    /// Dense rows of G with right-hand side h.
    General { rows: Vec<Vec<f64>>, rhs: Vec<f64> },
}

/// A quadratic program with diagonal quadratic form.
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub q: Vec<f64>,
    pub d: Vec<f64>,
    pub alpha: f64,
    pub constraints: Constraints,
}

/// Minimizer, objective value, active constraints and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub minimizer: Vec<f64>,
    pub value: f64,
    pub active_set: Vec<usize>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: Vec<f64>,
}

impl QpInstance {
    /// Monotone-chain instance with floor α.
    pub fn chain(q: Vec<f64>, d: Vec<f64>, alpha: f64) -> Result<Self> {
        let inst = QpInstance {
            q,
            d,
            alpha,
            constraints: Constraints::MonotoneChain,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.q.len();
        if self.d.len() != m {
            return Err(Error::Dimension {
                expected: m,
                found: self.d.len(),
            });
        }
        if m == 0 {
            return Err(Error::Domain("empty quadratic program".into()));
        }
        if self.q.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("quadratic weights must be positive".into()));
        }
        if self.d.iter().any(|v| !v.is_finite()) || !self.alpha.is_finite() {
            return Err(Error::Domain("linear term and floor must be finite".into()));
        }
        if let Constraints::General { rows, rhs } = &self.constraints {
            if rows.len() != rhs.len() {
                return Err(Error::Dimension {
                    expected: rows.len(),
                    found: rhs.len(),
                });
            }
            if let Some(r) = rows.iter().find(|r| r.len() != m) {
                return Err(Error::Dimension {
                    expected: m,
                    found: r.len(),
                });
            }
        }
        Ok(())
    }

    /// ½AᵀQA − Aᵀd.
    pub fn objective(&self, a: &[f64]) -> f64 {
        a.iter()
            .zip(&self.q)
            .zip(&self.d)
            .map(|((x, q), d)| 0.5 * q * x * x - d * x)
            .sum()
    }

    /// Dense constraint rows and right-hand side.
    pub fn dense_constraints(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        match &self.constraints {
            Constraints::General { rows, rhs } => (rows.clone(), rhs.clone()),
            Constraints::MonotoneChain => {
                let m = self.q.len();
                let mut rows = Vec::with_capacity(m);
                let mut first = vec![0.0; m];
                first[0] = 1.0;
                rows.push(first);
                for i in 1..m {
                    let mut row = vec![0.0; m];
                    row[i - 1] = -1.0;
                    row[i] = 1.0;
                    rows.push(row);
                }
                let mut rhs = vec![0.0; m];
                rhs[0] = self.alpha;
                (rows, rhs)
            }
        }
    }

    /// Dual objective at multipliers μ ≥ 0: −½(d + Gᵀμ)ᵀQ⁻¹(d + Gᵀμ) + hᵀμ.
    pub fn dual_objective(&self, mu: &[f64]) -> f64 {
        let (rows, rhs) = self.dense_constraints();
        let mut v = self.d.clone();
        for (row, &m) in rows.iter().zip(mu) {
            if m != 0.0 {
                for (vi, gi) in v.iter_mut().zip(row) {
                    *vi += m * gi;
                }
            }
        }
        let quad: f64 = v.iter().zip(&self.q).map(|(x, q)| x * x / q).sum();
        -0.5 * quad + rhs.iter().zip(mu).map(|(h, m)| h * m).sum::<f64>()
    }
}

const FEAS_TOL: f64 = 1e-12;

/// Dual active-set method of Goldfarb and Idnani. Starts from the
/// unconstrained minimizer and adds the most violated constraint (lowest index
/// on ties) while keeping dual feasibility.
pub fn solve_qp(inst: &QpInstance) -> Result<QpSolution> {
    inst.validate()?;
    let n = inst.q.len();
    let (rows, rhs) = inst.dense_constraints();
    let n_con = rows.len();

    // J = L⁻ᵀ with G = LLᵀ; diagonal here.
    let mut j = vec![vec![0.0; n]; n];
    for i in 0..n {
        j[i][i] = 1.0 / inst.q[i].sqrt();
    }
    // Upper-triangular R stored column-wise, one column per active constraint.
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut x: Vec<f64> = inst.d.iter().zip(&inst.q).map(|(d, q)| d / q).collect();

    let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let max_iter = 50 * (n + n_con) + 100;
    let mut iter = 0;

    loop {
        // Step 1: pick a violated constraint.
        let mut p = None;
        let mut worst = -FEAS_TOL * scale;
        for (i, (row, &b)) in rows.iter().zip(&rhs).enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = dot(row, &x) - b;
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else { break };
        let np = &rows[p];
        let mut u_plus = u.clone();
        u_plus.push(0.0);

        // Step 2: move along the primal and dual directions until p is added.
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::Convergence {
                    iterations: iter,
                    last: inst.objective(&x),
                    trace: Vec::new(),
                });
            }
            let q_act = active.len();
            // dvec = Jᵀ n_p.
            let dvec: Vec<f64> = (0..n).map(|c| (0..n).map(|i| j[i][c] * np[i]).sum()).collect();
            // z = J₂ d₂.
            let mut z = vec![0.0; n];
            for c in q_act..n {
                if dvec[c] != 0.0 {
                    for i in 0..n {
                        z[i] += j[i][c] * dvec[c];
                    }
                }
            }
            // r = R⁻¹ d₁ by back substitution.
            let mut r = vec![0.0; q_act];
            for k in (0..q_act).rev() {
                let mut acc = dvec[k];
                for l in k + 1..q_act {
                    acc -= r_cols[l][k] * r[l];
                }
                r[k] = acc / r_cols[k][k];
            }
            // Partial step length, ties to the lowest constraint index.
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for k in 0..q_act {
                if r[k] > 0.0 {
                    let t = u_plus[k] / r[k];
                    let better = match drop_k {
                        None => true,
                        Some(best) => {
                            t < t1 || (t == t1 && active[k] < active[best])
                        }
                    };
                    if better {
                        t1 = t;
                        drop_k = Some(k);
                    }
                }
            }
            let zn = dot(&z, np);
            let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let t2 = if znorm <= 1e-14 * (1.0 + dot(np, np).sqrt()) || zn <= 0.0 {
                f64::INFINITY
            } else {
                -(dot(np, &x) - rhs[p]) / zn
            };
            let t = t1.min(t2);
            if t.is_infinite() {
                return Err(Error::Infeasible(format!("constraint {p} cannot be satisfied")));
            }
            if t2.is_infinite() {
                // Dual step only.
                for k in 0..q_act {
                    u_plus[k] -= t * r[k];
                }
                u_plus[q_act] += t;
                let k = drop_k.expect("partial step has an index");
                u_plus.remove(k);
                drop_constraint(&mut j, &mut r_cols, &mut active, k);
                continue;
            }
            for i in 0..n {
                x[i] += t * z[i];
            }
            for k in 0..q_act {
                u_plus[k] -= t * r[k];
            }
            u_plus[q_act] += t;
            if t == t2 {
                add_constraint(&mut j, &mut r_cols, &dvec, q_act);
                active.push(p);
                u = u_plus;
                break;
            }
            let k = drop_k.expect("partial step has an index");
            u_plus.remove(k);
            drop_constraint(&mut j, &mut r_cols, &mut active, k);
        }
    }

    let mut multipliers = vec![0.0; n_con];
    for (&c, &m) in active.iter().zip(&u) {
        multipliers[c] = m.max(0.0);
    }
    let mut active_set = active.clone();
    active_set.sort_unstable();
    Ok(QpSolution {
        value: inst.objective(&x),
        minimizer: x,
        active_set,
        multipliers,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotation (c, s) with [c s; −s c]ᵀ-style action zeroing `b` against `a`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 { (1.0, 0.0, 0.0) } else { (a / h, b / h, h) }
}

/// Appends a column to R after rotating columns q_act.. of J so that Jᵀn_p has
/// a single nonzero below position q_act.
fn add_constraint(j: &mut [Vec<f64>], r_cols: &mut Vec<Vec<f64>>, dvec: &[f64], q_act: usize) {
    let n = j.len();
    let mut d = dvec.to_vec();
    for c in (q_act + 1..n).rev() {
        if d[c] == 0.0 {
            continue;
        }
        let (cs, sn, h) = givens(d[c - 1], d[c]);
        d[c - 1] = h;
        d[c] = 0.0;
        for row in j.iter_mut() {
            let (a, b) = (row[c - 1], row[c]);
            row[c - 1] = cs * a + sn * b;
            row[c] = -sn * a + cs * b;
        }
    }
    r_cols.push(d[..=q_act].to_vec());
}

/// Removes active constraint `k` and restores R to upper-triangular form.
fn drop_constraint(
    j: &mut [Vec<f64>],
    r_cols: &mut Vec<Vec<f64>>,
    active: &mut Vec<usize>,
    k: usize,
) {
    r_cols.remove(k);
    active.remove(k);
    let q_act = r_cols.len();
    for l in k..q_act {
        // Column l has a subdiagonal entry at row l+1 to eliminate.
        let (a, b) = (r_cols[l][l], r_cols[l][l + 1]);
        let (cs, sn, h) = givens(a, b);
        r_cols[l][l] = h;
        r_cols[l].truncate(l + 1);
        for col in r_cols.iter_mut().skip(l + 1) {
            let (x, y) = (col[l], col[l + 1]);
            col[l] = cs * x + sn * y;
            col[l + 1] = -sn * x + cs * y;
        }
        for row in j.iter_mut() {
            let (x, y) = (row[l], row[l + 1]);
            row[l] = cs * x + sn * y;
            row[l + 1] = -sn * x + cs * y;
        }
    }
}

/// Monotone-chain QP as weighted isotonic regression of d/Q with weights Q,
/// then clipped at the floor α.
pub fn solve_qp_isotonic_fast(inst: &QpInstance) -> Result<QpSolution> {
    inst.validate()?;
    if inst.constraints != Constraints::MonotoneChain {
        return Err(Error::Unsupported(
            "the isotonic solver needs the monotone-chain constraint".into(),
        ));
    }
    let y: Vec<f64> = inst.d.iter().zip(&inst.q).map(|(d, q)| d / q).collect();
    let mut a = weighted_isotonic(&y, &inst.q);
    for v in a.iter_mut() {
        *v = v.max(inst.alpha);
    }
    let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tie = 1e-12 * scale;
    let mut active_set = Vec::new();
    if a[0] - inst.alpha <= tie {
        active_set.push(0);
    }
    for i in 1..a.len() {
        if a[i] - a[i - 1] <= tie {
            active_set.push(i);
        }
    }
    let multipliers = chain_multipliers(inst, &a, &active_set);
    Ok(QpSolution {
        value: inst.objective(&a),
        minimizer: a,
        active_set,
        multipliers,
    })
}

/// Nondecreasing weighted least-squares fit by pooling adjacent violators.
pub fn weighted_isotonic(y: &[f64], w: &[f64]) -> Vec<f64> {
    // Blocks of (weighted mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() >= 2 {
            let (m1, w1, n1) = blocks[blocks.len() - 1];
            let (m0, w0, n0) = blocks[blocks.len() - 2];
            if m0 <= m1 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            let wt = w0 + w1;
            blocks[last] = ((m0 * w0 + m1 * w1) / wt, wt, n0 + n1);
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (m, _, n) in blocks {
        out.extend(std::iter::repeat_n(m, n));
    }
    out
}

/// Multipliers of the chain from stationarity QA − d = Gᵀμ, solved from the
/// last coordinate backwards.
fn chain_multipliers(inst: &QpInstance, a: &[f64], active: &[usize]) -> Vec<f64> {
    let m = a.len();
    let grad: Vec<f64> = (0..m).map(|i| inst.q[i] * a[i] - inst.d[i]).collect();
    // Column i of Gᵀμ is μ_i − μ_{i+1} (μ_m = 0).
    let mut mu = vec![0.0; m];
    let mut next = 0.0;
    for i in (0..m).rev() {
        mu[i] = grad[i] + next;
        next = mu[i];
    }
    let mut is_active = vec![false; m];
    for &i in active {
        is_active[i] = true;
    }
    for (v, &on) in mu.iter_mut().zip(&is_active) {
        // Rounding leaves tiny values on inactive rows.
        *v = if on { v.max(0.0) } else { 0.0 };
    }
    mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chain(rng: &mut ChaCha8Rng, m: usize) -> QpInstance {
        let q: Vec<f64> = (0..m).map(|_| 0.1 + 2.0 * rng.random::<f64>()).collect();
        let d: Vec<f64> = (0..m).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let alpha = rng.random::<f64>() - 0.5;
        QpInstance::chain(q, d, alpha).unwrap()
    }

    /// Projected gradient on increments: A = α + cumsum(x), x ≥ 0.
    fn projected_gradient_oracle(inst: &QpInstance, iters: usize) -> Vec<f64> {
        let m = inst.q.len();
        // Lipschitz bound of the increment-space Hessian MᵀQM.
        let lip = inst.q.iter().sum::<f64>() * m as f64;
        let step = 1.0 / lip;
        let mut x = vec![0.0; m];
        let build = |x: &[f64]| -> Vec<f64> {
            let mut acc = inst.alpha;
            x.iter()
                .map(|v| {
                    acc += v;
                    acc
                })
                .collect()
        };
        let mut y = x.clone();
        let mut t = 1.0f64;
        for _ in 0..iters {
            let a = build(&y);
            let g: Vec<f64> = (0..m).map(|i| inst.q[i] * a[i] - inst.d[i]).collect();
            // Gradient wrt increments is the reversed cumulative sum.
            let mut gx = vec![0.0; m];
            let mut acc = 0.0;
            for i in (0..m).rev() {
                acc += g[i];
                gx[i] = acc;
            }
            let xn: Vec<f64> = (0..m).map(|i| (y[i] - step * gx[i]).max(0.0)).collect();
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = (0..m)
                .map(|i| xn[i] + (t - 1.0) / tn * (xn[i] - x[i]))
                .collect();
            x = xn;
            t = tn;
        }
        build(&x)
    }

    #[test]
    fn unconstrained_optimum_is_returned() {
        let inst = QpInstance::chain(vec![1.0, 2.0, 1.0], vec![1.0, 4.0, 5.0], 0.5).unwrap();
        for sol in [solve_qp(&inst).unwrap(), solve_qp_isotonic_fast(&inst).unwrap()] {
            assert_eq!(sol.minimizer, vec![1.0, 2.0, 5.0]);
            assert!(sol.active_set.is_empty());
        }
    }

    #[test]
    fn two_coordinate_pool() {
        let inst = QpInstance::chain(vec![1.0, 1.0], vec![3.0, 1.0], 0.0).unwrap();
        for sol in [solve_qp(&inst).unwrap(), solve_qp_isotonic_fast(&inst).unwrap()] {
            assert!((sol.minimizer[0] - 2.0).abs() < 1e-12);
            assert!((sol.minimizer[1] - 2.0).abs() < 1e-12);
            assert_eq!(sol.active_set, vec![1]);
        }
    }

    #[test]
    fn floor_dominates() {
        let inst = QpInstance::chain(vec![1.0, 3.0, 2.0], vec![0.1, -1.0, 0.5], 1.0).unwrap();
        for sol in [solve_qp(&inst).unwrap(), solve_qp_isotonic_fast(&inst).unwrap()] {
            for v in &sol.minimizer {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_solver_rejects_general_constraints() {
        let inst = QpInstance {
            q: vec![1.0],
            d: vec![1.0],
            alpha: 0.0,
            constraints: Constraints::General {
                rows: vec![vec![1.0]],
                rhs: vec![2.0],
            },
        };
        assert!(matches!(
            solve_qp_isotonic_fast(&inst),
            Err(Error::Unsupported(_))
        ));
        let sol = solve_qp(&inst).unwrap();
        assert!((sol.minimizer[0] - 2.0).abs() < 1e-12);
        assert!((sol.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn general_constraints_match_hand_kkt() {
        // min ½(x² + y²) − 2x − 2y s.t. x + y ≤ 1 → (½, ½).
        let inst = QpInstance {
            q: vec![1.0, 1.0],
            d: vec![2.0, 2.0],
            alpha: 0.0,
            constraints: Constraints::General {
                rows: vec![vec![-1.0, -1.0]],
                rhs: vec![-1.0],
            },
        };
        let sol = solve_qp(&inst).unwrap();
        assert!((sol.minimizer[0] - 0.5).abs() < 1e-12);
        assert!((sol.minimizer[1] - 0.5).abs() < 1e-12);
        assert!((sol.multipliers[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn solvers_agree_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = 2 + (rng.random::<f64>() * 120.0) as usize;
            let inst = random_chain(&mut rng, m);
            let a = solve_qp(&inst).unwrap();
            let b = solve_qp_isotonic_fast(&inst).unwrap();
            let dev = a
                .minimizer
                .iter()
                .zip(&b.minimizer)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-8, "m={m} dev={dev}");
        }
    }

    #[test]
    fn strong_duality_and_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = 2 + (rng.random::<f64>() * 60.0) as usize;
            let inst = random_chain(&mut rng, m);
            let sol = solve_qp(&inst).unwrap();
            let dual = inst.dual_objective(&sol.multipliers);
            assert!((sol.value - dual).abs() < 1e-8, "{} vs {dual}", sol.value);
            let a = &sol.minimizer;
            assert!(a[0] >= inst.alpha - 1e-12);
            for w in a.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
            let fast = solve_qp_isotonic_fast(&inst).unwrap();
            let dual_fast = inst.dual_objective(&fast.multipliers);
            assert!((fast.value - dual_fast).abs() < 1e-8);
        }
    }

    #[test]
    fn small_instances_match_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let m = 2 + (rng.random::<f64>() * 5.0) as usize;
            let inst = random_chain(&mut rng, m);
            let oracle = projected_gradient_oracle(&inst, 100_000);
            let best = inst.objective(&oracle);
            for sol in [solve_qp(&inst).unwrap(), solve_qp_isotonic_fast(&inst).unwrap()] {
                assert!((sol.value - best).abs() < 1e-6, "{} vs {best}", sol.value);
            }
        }
    }

    proptest! {
        #[test]
        fn scaling_d_scales_free_part(
            seed in 0u64..1000,
            c in 0.5f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 8;
            let q: Vec<f64> = (0..m).map(|_| 0.5 + rng.random::<f64>()).collect();
            let d: Vec<f64> = (0..m).map(|_| 1.0 + 3.0 * rng.random::<f64>()).collect();
            // Floor far below keeps it inactive so the fit scales exactly.
            let base = solve_qp_isotonic_fast(&QpInstance::chain(q.clone(), d.clone(), -100.0).unwrap()).unwrap();
            let dc: Vec<f64> = d.iter().map(|v| v * c).collect();
            let scaled = solve_qp_isotonic_fast(&QpInstance::chain(q, dc, -100.0).unwrap()).unwrap();
            for (a, b) in base.minimizer.iter().zip(&scaled.minimizer) {
                prop_assert!((a * c - b).abs() < 1e-10 * (1.0 + b.abs()));
            }
        }
    }
}
