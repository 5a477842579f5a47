//! Dense strictly convex QP
//!
//! ```text
//! minimize ½ xᵀ G x + aᵀ x   subject to   C x ≥ b
//! ```
//!
//! solved with the Goldfarb–Idnani dual active-set method. The method starts
//! from the unconstrained minimizer, so no feasible initial point is needed,
//! and infeasibility is detected when a violated constraint cannot be added.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Constraint violation tolerance, relative to `1 + |b_i|`.
    pub feasibility_tol: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { feasibility_tol: 1e-10, max_iterations: 2000 }
    }
}

/// Solves the QP. `c` holds one constraint per row.
pub fn solve_qp(g: &DMatrix<f64>, a: &DVector<f64>, c: &DMatrix<f64>, b: &DVector<f64>, settings: &QpSettings) -> Result<QpSolution> {
    let n = g.nrows();
    let m = c.nrows();
    if g.ncols() != n || a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.len() });
    }
    if c.ncols() != n || b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    let chol = g.clone().cholesky().ok_or_else(|| Error::SolverFailed("QP Hessian is not positive definite".into()))?;
    let l = chol.l();

    // Columns L⁻¹ c_i, computed lazily.
    let mut transformed: Vec<Option<DVector<f64>>> = vec![None; m];
    let col = |i: usize, transformed: &mut Vec<Option<DVector<f64>>>| -> DVector<f64> {
        if transformed[i].is_none() {
            let ci = c.row(i).transpose();
            transformed[i] = Some(l.solve_lower_triangular(&ci).expect("nonsingular factor"));
        }
        transformed[i].clone().expect("just set")
    };

    let mut x = -chol.solve(a);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let violation = |x: &DVector<f64>, i: usize| c.row(i).dot(&x.transpose()) - b[i];

    loop {
        // Most violated inactive constraint, scaled by its row norm.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = violation(&x, i);
            if s < -settings.feasibility_tol * (1.0 + b[i].abs()) {
                let scaled = s / c.row(i).norm().max(1e-300);
                if pick.is_none_or(|(_, best)| scaled < best) {
                    pick = Some((i, scaled));
                }
            }
        }
        let Some((p, _)) = pick else { break };
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                return Err(Error::SolverFailed("QP iteration limit".into()));
            }
            let d = col(p, &mut transformed);
            let q = active.len();
            let (z_t, r) = if q == 0 {
                (d.clone(), DVector::zeros(0))
            } else {
                let mut bmat = DMatrix::zeros(n, q);
                for (k, &j) in active.iter().enumerate() {
                    bmat.set_column(k, &col(j, &mut transformed));
                }
                let gram = bmat.transpose() * &bmat;
                let gchol: Cholesky<f64, Dyn> = gram
                    .cholesky()
                    .ok_or_else(|| Error::SolverFailed("dependent active constraints".into()))?;
                let r = gchol.solve(&(bmat.transpose() * &d));
                (&d - &bmat * &r, r)
            };
            let zz = z_t.norm_squared();
            let full_step = if zz > 1e-14 * d.norm_squared() {
                Some(-violation(&x, p) / zz)
            } else {
                None
            };
            // Largest dual step keeping active multipliers nonnegative.
            let mut partial: Option<(f64, usize)> = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if partial.is_none_or(|(best, _)| t < best) {
                        partial = Some((t, k));
                    }
                }
            }
            match (full_step, partial) {
                (None, None) => return Err(Error::SolverFailed("infeasible QP".into())),
                (None, Some((t, k))) => {
                    for (uk, rk) in u.iter_mut().zip(r.iter()) {
                        *uk -= t * rk;
                    }
                    u_p += t;
                    active.remove(k);
                    u.remove(k);
                }
                (Some(t2), partial) => {
                    let (t, drop) = match partial {
                        Some((t1, k)) if t1 < t2 => (t1, Some(k)),
                        _ => (t2, None),
                    };
                    let z = l.transpose().solve_upper_triangular(&z_t).expect("nonsingular factor");
                    x += t * z;
                    for (uk, rk) in u.iter_mut().zip(r.iter()) {
                        *uk -= t * rk;
                    }
                    u_p += t;
                    match drop {
                        None => {
                            active.push(p);
                            u.push(u_p);
                            break;
                        }
                        Some(k) => {
                            active.remove(k);
                            u.remove(k);
                        }
                    }
                }
            }
        }
    }

    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteIterate);
    }
    let mut multipliers = DVector::zeros(m);
    for (&j, &uj) in active.iter().zip(&u) {
        multipliers[j] = uj.max(0.0);
    }
    let objective = 0.5 * x.dot(&(g * &x)) + a.dot(&x);
    Ok(QpSolution { x, multipliers, active, iterations, objective })
}

/// Stationarity, primal and complementarity residual (∞-norm) of `(x, λ)`.
pub fn kkt_residual(g: &DMatrix<f64>, a: &DVector<f64>, c: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let stationarity = (g * x + a - c.transpose() * lambda).amax();
    let slack = c * x - b;
    let primal = slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max);
    let comp = slack.iter().zip(lambda.iter()).map(|(s, l)| (s * l).abs()).fold(0.0, f64::max);
    let dual = lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
    stationarity.max(primal).max(comp).max(dual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    /// Accelerated projected gradient ascent on the dual
    /// `max_{λ≥0} −½ (Cᵀλ − a)ᵀ G⁻¹ (Cᵀλ − a) + bᵀλ`.
    fn dual_projected_gradient(g: &DMatrix<f64>, a: &DVector<f64>, c: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let ginv = g.clone().try_inverse().unwrap();
        let h = c * &ginv * c.transpose();
        let lip = h.symmetric_eigenvalues().max();
        let step = 1.0 / lip;
        let grad = |lam: &DVector<f64>| b - c * (&ginv * (c.transpose() * lam - a));
        let mut lam = DVector::zeros(c.nrows());
        let mut y = lam.clone();
        let mut t = 1.0f64;
        for _ in 0..200_000 {
            let next = (&y + step * grad(&y)).map(|v| v.max(0.0));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // Restart when the momentum points uphill in the dual sense.
            if (&next - &lam).dot(&grad(&y)) < 0.0 {
                y = lam.clone();
                t = 1.0;
                continue;
            }
            y = &next + (&next - &lam) * ((t - 1.0) / t_next);
            if (&next - &lam).amax() < 1e-15 {
                lam = next;
                break;
            }
            lam = next;
            t = t_next;
        }
        &ginv * (c.transpose() * &lam - a)
    }

    #[test]
    fn unconstrained_minimizer() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let a = DVector::from_vec(vec![-2.0, -4.0]);
        let sol = solve_qp(&g, &a, &DMatrix::zeros(0, 2), &DVector::zeros(0), &QpSettings::default()).unwrap();
        assert!((sol.x - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-14);
    }

    #[test]
    fn textbook_problem() {
        // min x² + y² − 2x − 5y  s.t. x − 2y ≥ −2, −x − 2y ≥ −6, −x + 2y ≥ −2, x ≥ 0, y ≥ 0
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let a = DVector::from_vec(vec![-2.0, -5.0]);
        let c = DMatrix::from_row_slice(5, 2, &[1.0, -2.0, -1.0, -2.0, -1.0, 2.0, 1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-2.0, -6.0, -2.0, 0.0, 0.0]);
        let sol = solve_qp(&g, &a, &c, &b, &QpSettings::default()).unwrap();
        assert!((sol.x[0] - 1.4).abs() < 1e-12 && (sol.x[1] - 1.7).abs() < 1e-12, "{}", sol.x);
        assert_eq!(sol.active, vec![0]);
        assert!(kkt_residual(&g, &a, &c, &b, &sol.x, &sol.multipliers) < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let g = DMatrix::identity(1, 1);
        let a = DVector::zeros(1);
        let c = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(solve_qp(&g, &a, &c, &b, &QpSettings::default()), Err(Error::SolverFailed(_))));
    }

    #[test]
    fn matches_projected_gradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..40 {
            let n = rng.random_range(2..=30);
            let m = rng.random_range(1..=n);
            let g = random_pd(n, &mut rng);
            let a = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let sol = solve_qp(&g, &a, &c, &b, &QpSettings::default()).unwrap();
            let oracle = dual_projected_gradient(&g, &a, &c, &b);
            let err = (&sol.x - &oracle).amax();
            assert!(err < 1e-6, "trial {trial} (n={n}, m={m}): {err}");
            assert!(kkt_residual(&g, &a, &c, &b, &sol.x, &sol.multipliers) < 1e-8);
        }
    }

    #[test]
    fn boxed_problems_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let n = rng.random_range(2..=30);
            let g = random_pd(n, &mut rng);
            let a = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
            // Box plus random cuts: more rows than variables.
            let extra = rng.random_range(0..n);
            let mut c = DMatrix::zeros(2 * n + extra, n);
            let mut b = DVector::zeros(2 * n + extra);
            for i in 0..n {
                c[(2 * i, i)] = 1.0;
                b[2 * i] = -1.0;
                c[(2 * i + 1, i)] = -1.0;
                b[2 * i + 1] = -1.0;
            }
            for k in 0..extra {
                for j in 0..n {
                    c[(2 * n + k, j)] = rng.random_range(-1.0..1.0);
                }
                b[2 * n + k] = rng.random_range(-2.0..0.0);
            }
            let sol = solve_qp(&g, &a, &c, &b, &QpSettings::default()).unwrap();
            assert!(kkt_residual(&g, &a, &c, &b, &sol.x, &sol.multipliers) < 1e-8);
        }
    }
}
