//! Long-only mean-variance allocation with a quadratic risk cap and an L1
//! transaction-cost penalty, solved by a log-barrier interior-point method.
//!
//! maximize    mu'w - psi * 1'|w - w0|
//! subject to  w' Sigma w <= sigma_target^2,  1'w = 1,  0 <= w_k <= 1
//!
//! The |w - w0| terms become auxiliary variables t_k with two linear
//! constraints each; all inequalities enter a log barrier and the budget
//! equality is kept exactly inside each Newton solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MvoProblem {
    pub mu: DVector<f64>,
    /// PSD covariance (repair upstream when needed), per-period units.
    pub sigma: DMatrix<f64>,
    /// Risk cap as a variance, same period units as `sigma`.
    pub sigma_target_sq: f64,
    /// Proportional transaction cost on |w - w0|.
    pub psi: f64,
    /// Previous weights; all-zero means the initial allocation (no cost base).
    pub w0: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct MvoSolution {
    pub weights: DVector<f64>,
    /// Objective value mu'w - psi*1'|w - w0| at the returned weights.
    pub objective: f64,
    /// Set when the risk cap lies below the long-only minimum variance; the
    /// minimum-variance weights are returned in that case.
    pub infeasible_cap: bool,
    /// Max of the scaled stationarity and complementarity residuals.
    pub kkt_residual: f64,
}

const BARRIER_M0: f64 = 100.0;
const BARRIER_GROWTH: f64 = 10.0;
const BARRIER_GAP: f64 = 1e-10;
const NEWTON_TOL: f64 = 1e-12;
const MAX_NEWTON: usize = 80;

fn validate_problem(p: &MvoProblem) -> Result<usize> {
    let n = p.mu.len();
    if p.sigma.nrows() != n || p.sigma.ncols() != n {
        return Err(Error::Dimension { expected: n, got: p.sigma.nrows() });
    }
    if p.w0.len() != n {
        return Err(Error::Dimension { expected: n, got: p.w0.len() });
    }
    if !(p.sigma_target_sq > 0.0) {
        return Err(Error::Config("risk target must be positive".into()));
    }
    if p.psi < 0.0 {
        return Err(Error::Config("transaction cost must be non-negative".into()));
    }
    let w0_sum = p.w0.sum();
    let all_zero = p.w0.iter().all(|&v| v == 0.0);
    if !all_zero {
        if p.w0.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (w0_sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config("w0 must lie in the simplex or be all-zero".into()));
        }
    }
    Ok(n)
}

/// Long-only minimum-variance weights on the simplex, KKT-tight.
pub fn solve_min_variance(sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = sigma.nrows();
    if sigma.ncols() != n || n == 0 {
        return Err(Error::Dimension { expected: n, got: sigma.ncols() });
    }
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut m = BARRIER_M0;
    while 2.0 * n as f64 / m > BARRIER_GAP {
        newton_min_variance(sigma, &mut w, m)?;
        m *= BARRIER_GROWTH;
    }
    newton_min_variance(sigma, &mut w, m)?;
    Ok(w)
}

fn newton_min_variance(sigma: &DMatrix<f64>, w: &mut DVector<f64>, m: f64) -> Result<()> {
    let n = w.len();
    for _ in 0..MAX_NEWTON {
        let mut grad = sigma * &*w * (2.0 * m);
        let mut hess = sigma * (2.0 * m);
        for k in 0..n {
            let a = w[k];
            let b = 1.0 - w[k];
            grad[k] += -1.0 / a + 1.0 / b;
            hess[(k, k)] += 1.0 / (a * a) + 1.0 / (b * b);
        }
        let (dx, _) = solve_kkt(&hess, &grad, n)?;
        let decrement = -grad.dot(&dx);
        if decrement < NEWTON_TOL {
            return Ok(());
        }
        let f = |w: &DVector<f64>| {
            m * (w.transpose() * sigma * w)[(0, 0)]
                - w.iter().map(|&v| v.ln()).sum::<f64>()
                - w.iter().map(|&v| (1.0 - v).ln()).sum::<f64>()
        };
        let f0 = f(w);
        let mut alpha = 1.0;
        loop {
            let cand = &*w + &dx * alpha;
            let feasible = cand.iter().all(|&v| v > 0.0 && v < 1.0);
            if feasible && f(&cand) <= f0 - 0.25 * alpha * decrement {
                *w = cand;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                return Ok(()); // numerically converged
            }
        }
    }
    Ok(())
}

/// Solve `[H a; a' 0] [dx nu] = [-g; 0]` with `a = 1` on the first `n_w`
/// coordinates (the budget lives on the w block only).
fn solve_kkt(hess: &DMatrix<f64>, grad: &DVector<f64>, n_w: usize) -> Result<(DVector<f64>, f64)> {
    let dim = grad.len();
    let mut kkt = DMatrix::zeros(dim + 1, dim + 1);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(hess);
    for k in 0..n_w {
        kkt[(k, dim)] = 1.0;
        kkt[(dim, k)] = 1.0;
    }
    let mut rhs = DVector::zeros(dim + 1);
    for k in 0..dim {
        rhs[k] = -grad[k];
    }
    let solved = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular KKT system".into()))?;
    let dx = DVector::from_fn(dim, |k, _| solved[k]);
    Ok((dx, solved[dim]))
}

struct MvoBarrier<'a> {
    p: &'a MvoProblem,
    n: usize,
}

impl MvoBarrier<'_> {
    /// Slack vector of every inequality at x = (w, t); any non-positive entry
    /// means infeasible.
    fn slacks(&self, w: &DVector<f64>, t: &DVector<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let n = self.n;
        let g1: Vec<f64> = (0..n).map(|k| w[k]).collect();
        let g2: Vec<f64> = (0..n).map(|k| 1.0 - w[k]).collect();
        let g3: Vec<f64> = (0..n).map(|k| t[k] - (w[k] - self.p.w0[k])).collect();
        let g4: Vec<f64> = (0..n).map(|k| t[k] + (w[k] - self.p.w0[k])).collect();
        let g5 = self.p.sigma_target_sq - (w.transpose() * &self.p.sigma * w)[(0, 0)];
        (g1, g2, g3, g4, g5)
    }

    fn strictly_feasible(&self, w: &DVector<f64>, t: &DVector<f64>) -> bool {
        let (g1, g2, g3, g4, g5) = self.slacks(w, t);
        g1.iter().chain(&g2).chain(&g3).chain(&g4).all(|&g| g > 0.0) && g5 > 0.0
    }

    fn value(&self, w: &DVector<f64>, t: &DVector<f64>, m: f64) -> f64 {
        let (g1, g2, g3, g4, g5) = self.slacks(w, t);
        let f0 = -self.p.mu.dot(w) + self.p.psi * t.sum();
        let barrier: f64 = g1
            .iter()
            .chain(&g2)
            .chain(&g3)
            .chain(&g4)
            .map(|&g| -g.ln())
            .sum::<f64>()
            - g5.ln();
        m * f0 + barrier
    }

    /// One centering run at fixed barrier weight.
    fn newton(&self, w: &mut DVector<f64>, t: &mut DVector<f64>, m: f64) -> Result<()> {
        let n = self.n;
        for _ in 0..MAX_NEWTON {
            let (g1, g2, g3, g4, g5) = self.slacks(w, t);
            let sigma_w = &self.p.sigma * &*w;

            let mut grad = DVector::zeros(2 * n);
            let mut hess = DMatrix::zeros(2 * n, 2 * n);
            for k in 0..n {
                grad[k] = -m * self.p.mu[k] - 1.0 / g1[k] + 1.0 / g2[k] + 1.0 / g3[k]
                    - 1.0 / g4[k]
                    + 2.0 * sigma_w[k] / g5;
                grad[n + k] = m * self.p.psi - 1.0 / g3[k] - 1.0 / g4[k];

                let q3 = 1.0 / (g3[k] * g3[k]);
                let q4 = 1.0 / (g4[k] * g4[k]);
                hess[(k, k)] = 1.0 / (g1[k] * g1[k]) + 1.0 / (g2[k] * g2[k]) + q3 + q4;
                hess[(n + k, n + k)] = q3 + q4;
                hess[(k, n + k)] = -q3 + q4;
                hess[(n + k, k)] = -q3 + q4;
            }
            for i in 0..n {
                for j in 0..n {
                    hess[(i, j)] += 2.0 * self.p.sigma[(i, j)] / g5
                        + 4.0 * sigma_w[i] * sigma_w[j] / (g5 * g5);
                }
            }

            let (dx, _) = solve_kkt(&hess, &grad, n)?;
            let decrement = -grad.dot(&dx);
            if decrement < NEWTON_TOL {
                return Ok(());
            }
            let f0 = self.value(w, t, m);
            let mut alpha = 1.0;
            loop {
                let wc = DVector::from_fn(n, |k, _| w[k] + alpha * dx[k]);
                let tc = DVector::from_fn(n, |k, _| t[k] + alpha * dx[n + k]);
                if self.strictly_feasible(&wc, &tc)
                    && self.value(&wc, &tc, m) <= f0 - 0.25 * alpha * decrement
                {
                    *w = wc;
                    *t = tc;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

/// Objective value at given weights.
fn objective(p: &MvoProblem, w: &DVector<f64>) -> f64 {
    let l1: f64 = (0..w.len()).map(|k| (w[k] - p.w0[k]).abs()).sum();
    p.mu.dot(w) - p.psi * l1
}

/// KKT residual at the final (central-path) point: complementarity is 1/m
/// per constraint and stationarity follows from the Newton residual; both
/// are reported on the unscaled problem.
fn kkt_residual(p: &MvoProblem, w: &DVector<f64>, t: &DVector<f64>, m: f64) -> f64 {
    let n = w.len();
    let barrier = MvoBarrier { p, n };
    let (g1, g2, g3, g4, g5) = barrier.slacks(w, t);
    let sigma_w = &p.sigma * w;
    // stationarity in w with multipliers 1/(m g): nu recovered from the mean
    let mut stat = DVector::zeros(n);
    for k in 0..n {
        stat[k] = -p.mu[k] - 1.0 / (m * g1[k]) + 1.0 / (m * g2[k]) + 1.0 / (m * g3[k])
            - 1.0 / (m * g4[k])
            + 2.0 * sigma_w[k] / (m * g5);
    }
    let nu = -stat.sum() / n as f64;
    let stat_res = stat.iter().map(|v| (v + nu).abs()).fold(0.0f64, f64::max);
    let comp_res = 1.0 / m;
    stat_res.max(comp_res)
}

/// Solve the transaction-cost mean-variance program. When the risk cap is
/// unattainable the long-only minimum-variance weights come back flagged.
pub fn solve_mvo(p: &MvoProblem) -> Result<MvoSolution> {
    let n = validate_problem(p)?;
    if n == 1 {
        let w = DVector::from_element(1, 1.0);
        let var = p.sigma[(0, 0)];
        return Ok(MvoSolution {
            objective: objective(p, &w),
            infeasible_cap: var > p.sigma_target_sq,
            weights: w,
            kkt_residual: 0.0,
        });
    }

    let w_mv = solve_min_variance(&p.sigma)?;
    let var_mv = (w_mv.transpose() * &p.sigma * &w_mv)[(0, 0)];
    if var_mv >= p.sigma_target_sq * (1.0 - 1e-9) {
        return Ok(MvoSolution {
            objective: objective(p, &w_mv),
            weights: w_mv,
            infeasible_cap: true,
            kkt_residual: f64::NAN,
        });
    }

    // strictly feasible start: blend the minimum-variance point toward the
    // simplex center without leaving the risk cap
    let center = DVector::from_element(n, 1.0 / n as f64);
    let barrier = MvoBarrier { p, n };
    let mut gamma = 0.5;
    let mut w = loop {
        let cand = &w_mv * (1.0 - gamma) + &center * gamma;
        let var = (cand.transpose() * &p.sigma * &cand)[(0, 0)];
        if var < p.sigma_target_sq * (1.0 - 1e-9) {
            break cand;
        }
        gamma *= 0.5;
        if gamma < 1e-12 {
            break w_mv.clone();
        }
    };
    let mut t = DVector::from_fn(n, |k, _| (w[k] - p.w0[k]).abs() + 0.1);
    if !barrier.strictly_feasible(&w, &t) {
        return Err(Error::Solver("failed to construct a strictly feasible start".into()));
    }

    let n_ineq = (4 * n + 1) as f64;
    let mut m = BARRIER_M0;
    while n_ineq / m > BARRIER_GAP {
        barrier.newton(&mut w, &mut t, m)?;
        m *= BARRIER_GROWTH;
    }
    barrier.newton(&mut w, &mut t, m)?;

    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("solver produced non-finite weights".into()));
    }
    Ok(MvoSolution {
        objective: objective(p, &w),
        kkt_residual: kkt_residual(p, &w, &t, m),
        weights: w,
        infeasible_cap: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::identity(n, n) * scale
    }

    #[test]
    fn min_variance_identity_is_equal_weights() {
        let w = solve_min_variance(&eye(4, 1.0)).unwrap();
        for k in 0..4 {
            assert!((w[k] - 0.25).abs() < 1e-8);
        }
    }

    #[test]
    fn min_variance_two_assets_closed_form() {
        // variances 1 and 4, zero correlation -> inverse-variance weights (0.8, 0.2)
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 4.0]));
        let w = solve_min_variance(&sigma).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-6, "w = {w:?}");
        assert!((w[1] - 0.2).abs() < 1e-6);
    }

    fn base_problem(n: usize) -> MvoProblem {
        MvoProblem {
            mu: DVector::from_element(n, 0.01),
            sigma: eye(n, 0.001),
            sigma_target_sq: 0.01,
            psi: 0.0,
            w0: DVector::zeros(n),
        }
    }

    #[test]
    fn symmetric_problem_gives_equal_weights() {
        let p = base_problem(5);
        let sol = solve_mvo(&p).unwrap();
        for k in 0..5 {
            assert!((sol.weights[k] - 0.2).abs() < 1e-6, "weights {:?}", sol.weights);
        }
        assert!(!sol.infeasible_cap);
    }

    #[test]
    fn constraints_hold_strictly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let n = rng.random_range(2..8);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.05..0.05));
            let sigma = &a * a.transpose() + eye(n, 1e-4);
            let p = MvoProblem {
                mu: DVector::from_fn(n, |_, _| rng.random_range(-0.02..0.03)),
                sigma,
                sigma_target_sq: rng.random_range(0.002..0.05),
                psi: 0.001,
                w0: DVector::from_element(n, 1.0 / n as f64),
            };
            let sol = solve_mvo(&p).unwrap();
            let w = &sol.weights;
            assert!((w.sum() - 1.0).abs() < 1e-6);
            for k in 0..n {
                assert!(w[k] >= -1e-6 && w[k] <= 1.0 + 1e-6);
            }
            if !sol.infeasible_cap {
                let var = (w.transpose() * &p.sigma * w)[(0, 0)];
                assert!(var <= p.sigma_target_sq * (1.0 + 1e-6));
                assert!(sol.kkt_residual < 1e-6, "kkt {:.3e}", sol.kkt_residual);
            }
        }
    }

    #[test]
    fn huge_cost_pins_weights_to_w0() {
        let n = 4;
        let mut w0 = DVector::from_element(n, 0.25);
        w0[0] = 0.4;
        w0[1] = 0.1;
        let p = MvoProblem {
            mu: DVector::from_fn(n, |k, _| 0.01 + 0.005 * k as f64),
            sigma: eye(n, 0.001),
            sigma_target_sq: 0.05,
            psi: 1e5,
            w0: w0.clone(),
        };
        let sol = solve_mvo(&p).unwrap();
        assert!((sol.weights - w0).abs().max() < 1e-3);
    }

    #[test]
    fn infeasible_cap_returns_min_variance_flagged() {
        let sigma = eye(3, 1.0); // min attainable variance 1/3
        let p = MvoProblem {
            mu: DVector::from_element(3, 0.01),
            sigma,
            sigma_target_sq: 0.05,
            psi: 0.0,
            w0: DVector::zeros(3),
        };
        let sol = solve_mvo(&p).unwrap();
        assert!(sol.infeasible_cap);
        for k in 0..3 {
            assert!((sol.weights[k] - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn objective_is_monotone_in_risk_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1));
        let sigma = &a * a.transpose() + eye(n, 1e-3);
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-0.01..0.04));
        let mut prev = f64::NEG_INFINITY;
        for target in [0.02, 0.04, 0.08, 0.16] {
            let p = MvoProblem {
                mu: mu.clone(),
                sigma: sigma.clone(),
                sigma_target_sq: target,
                psi: 0.001,
                w0: DVector::from_element(n, 1.0 / n as f64),
            };
            let sol = solve_mvo(&p).unwrap();
            assert!(
                sol.objective >= prev - 1e-7,
                "objective decreased: {prev} -> {}",
                sol.objective
            );
            prev = sol.objective;
        }
    }

    #[test]
    fn mu_shift_leaves_argmax_unchanged_when_costless() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 4;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1));
        let sigma = &a * a.transpose() + eye(n, 1e-3);
        let mu = DVector::from_fn(n, |_, _| rng.random_range(0.0..0.03));
        let mk = |mu: DVector<f64>| MvoProblem {
            mu,
            sigma: sigma.clone(),
            sigma_target_sq: 0.03,
            psi: 0.0,
            w0: DVector::zeros(n),
        };
        let base = solve_mvo(&mk(mu.clone())).unwrap();
        let shifted = solve_mvo(&mk(mu.map(|v| v + 0.5))).unwrap();
        assert!((base.weights - shifted.weights).abs().max() < 1e-5);
    }

    #[test]
    fn three_asset_solution_beats_simplex_grid() {
        // hand-set mu, diagonal sigma, binding cap
        let p = MvoProblem {
            mu: DVector::from_column_slice(&[0.03, 0.02, 0.005]),
            sigma: DMatrix::from_diagonal(&DVector::from_column_slice(&[0.04, 0.01, 0.0025])),
            sigma_target_sq: 0.009,
            psi: 0.001,
            w0: DVector::from_column_slice(&[0.2, 0.3, 0.5]),
        };
        let sol = solve_mvo(&p).unwrap();
        assert!(!sol.infeasible_cap);

        // exhaustive grid at 1e-3 resolution over the simplex
        let mut best = f64::NEG_INFINITY;
        let steps = 1000usize;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let w1 = i as f64 / steps as f64;
                let w2 = j as f64 / steps as f64;
                let w3 = 1.0 - w1 - w2;
                let var = 0.04 * w1 * w1 + 0.01 * w2 * w2 + 0.0025 * w3 * w3;
                if var > p.sigma_target_sq {
                    continue;
                }
                let obj = 0.03 * w1 + 0.02 * w2 + 0.005 * w3
                    - 0.001 * ((w1 - 0.2).abs() + (w2 - 0.3).abs() + (w3 - 0.5).abs());
                best = best.max(obj);
            }
        }
        assert!(
            (sol.objective - best).abs() <= 1e-3,
            "solver {} vs grid {best}",
            sol.objective
        );
        assert!(sol.objective >= best - 1e-3);
    }
}
