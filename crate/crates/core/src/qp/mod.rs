//! Convex quadratic programming:
//!
//! ```text
//! minimize ½ xᵀ P x + aᵀ x   subject to  l ≤ C x ≤ u
//! ```
//!
//! with `P` symmetric positive semidefinite. The solver is an operator
//! splitting (ADMM) method with Ruiz equilibration and adaptive penalty,
//! followed by an active-set polish that solves the KKT system of the
//! identified active constraints. When ADMM stalls on badly conditioned
//! constraints, a primal-dual interior-point method supplies the polish
//! with a better starting point. All matrices are sparse; the linear
//! systems are factored as band matrices, so problems whose `P` and
//! constraint rows are banded (every problem in this crate) cost O(n) per
//! iteration.

mod admm;
pub mod banded;
mod ipm;
pub mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub p: CsrMatrix,
    pub a: Vec<f64>,
    pub c: CsrMatrix,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadraticProgram {
    /// Problem with one-sided constraints `C x ≥ b`.
    pub fn new(p: CsrMatrix, a: Vec<f64>, c: CsrMatrix, b: Vec<f64>) -> Result<Self> {
        let upper = vec![f64::INFINITY; b.len()];
        Self::with_bounds(p, a, c, b, upper)
    }

    /// Problem with two-sided constraints `lower ≤ C x ≤ upper`; equal bounds
    /// give equality constraints.
    pub fn with_bounds(p: CsrMatrix, a: Vec<f64>, c: CsrMatrix, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = a.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::LengthMismatch { expected: n, found: p.nrows() });
        }
        if c.ncols() != n {
            return Err(Error::LengthMismatch { expected: n, found: c.ncols() });
        }
        let m = c.nrows();
        for v in [&lower, &upper] {
            if v.len() != m {
                return Err(Error::LengthMismatch { expected: m, found: v.len() });
            }
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(Error::invalid("constraint bounds must satisfy lower <= upper"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("linear cost must be finite"));
        }
        for r in 0..n {
            for (col, v) in p.row(r) {
                let t = p.get(col, r);
                if (v - t).abs() > 1e-12 * (1.0 + v.abs().max(t.abs())) {
                    return Err(Error::NotSymmetric { row: r, col });
                }
            }
        }
        Ok(Self { p, a, c, lower, upper })
    }

    pub fn num_vars(&self) -> usize {
        self.a.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.c.nrows()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut px = vec![0.0; x.len()];
        self.p.mul_vec(x, &mut px);
        x.iter().zip(&px).zip(&self.a).map(|((xi, pi), ai)| 0.5 * xi * pi + ai * xi).sum()
    }

    /// Largest violation of `lower ≤ C x ≤ upper`.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mut cx = vec![0.0; self.num_constraints()];
        self.c.mul_vec(x, &mut cx);
        cx.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Largest violation of the multiplier sign conditions and of
    /// complementary slackness: `yᵢ ≤ 0` needs a finite lower bound and
    /// `yᵢ (Cx − l)ᵢ ≈ 0`, `yᵢ ≥ 0` the same for the upper bound.
    pub fn complementarity(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut cx = vec![0.0; self.num_constraints()];
        self.c.mul_vec(x, &mut cx);
        (0..cx.len())
            .map(|k| {
                let (l, u) = (self.lower[k], self.upper[k]);
                if y[k] < 0.0 {
                    if l == f64::NEG_INFINITY {
                        -y[k]
                    } else {
                        -y[k] * (cx[k] - l).abs()
                    }
                } else if y[k] > 0.0 {
                    if u == f64::INFINITY {
                        y[k]
                    } else {
                        y[k] * (u - cx[k]).abs()
                    }
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    /// `‖P x + a + Cᵀ y‖∞`.
    pub fn dual_residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.num_vars();
        let mut px = vec![0.0; n];
        let mut cty = vec![0.0; n];
        self.p.mul_vec(x, &mut px);
        self.c.mul_t_vec(y, &mut cty);
        (0..n).map(|i| (px[i] + self.a[i] + cty[i]).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub primal_residual: f64,
    /// Stationarity, multiplier signs and complementary slackness.
    pub dual_residual: f64,
    pub objective: f64,
    pub status: SolverStatus,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Absolute KKT tolerance required for `Optimal`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor.
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub scaling_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            scaling_iters: 10,
        }
    }
}

/// Primal-dual starting point for a related problem.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers with `P x + a + Cᵀ y = 0`: `yᵢ ≤ 0` on an active lower
    /// bound, `yᵢ ≥ 0` on an active upper bound.
    pub y: Vec<f64>,
    pub report: SolverReport,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart { x: self.x.clone(), y: self.y.clone() }
    }
}

/// Solves the program; see [`solve_qp_warm`] for warm starts and multipliers.
pub fn solve_qp(qp: &QuadraticProgram, cfg: &SolverConfig) -> Result<(Vec<f64>, SolverReport)> {
    let sol = solve_qp_warm(qp, cfg, None)?;
    Ok((sol.x, sol.report))
}

pub fn solve_qp_warm(qp: &QuadraticProgram, cfg: &SolverConfig, warm: Option<&WarmStart>) -> Result<QpSolution> {
    if let Some(w) = warm {
        if w.x.len() != qp.num_vars() {
            return Err(Error::LengthMismatch { expected: qp.num_vars(), found: w.x.len() });
        }
        if w.y.len() != qp.num_constraints() {
            return Err(Error::LengthMismatch { expected: qp.num_constraints(), found: w.y.len() });
        }
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::invalid("solver needs a positive tolerance and iteration budget"));
    }
    Ok(admm::solve(qp, cfg, warm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_qp(p: f64, a: f64, rows: &[(f64, f64)]) -> QuadraticProgram {
        let pm = CsrMatrix::from_dense(&[vec![p]]).unwrap();
        let c = CsrMatrix::from_dense(&rows.iter().map(|r| vec![r.0]).collect::<Vec<_>>()).unwrap();
        let b = rows.iter().map(|r| r.1).collect();
        QuadraticProgram::new(pm, vec![a], c, b).unwrap()
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = QuadraticProgram::new(
            CsrMatrix::from_dense(&[vec![2.0]]).unwrap(),
            vec![-2.0],
            CsrMatrix::zeros(0, 1),
            vec![],
        )
        .unwrap();
        let (x, r) = solve_qp(&qp, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn active_bound() {
        // (x − 1)² = x² − 2x + 1 with x ≥ 2
        let qp = scalar_qp(2.0, -2.0, &[(1.0, 2.0)]);
        let sol = solve_qp_warm(&qp, &SolverConfig::default(), None).unwrap();
        assert_eq!(sol.report.status, SolverStatus::Optimal);
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        // multiplier 2 on the active lower bound
        assert!((sol.y[0] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn detects_infeasibility() {
        // x ≥ 2 and −x ≥ −1
        let qp = scalar_qp(2.0, -2.0, &[(1.0, 2.0), (-1.0, -1.0)]);
        let (_, r) = solve_qp(&qp, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Infeasible);
    }

    #[test]
    fn rejects_bad_problems() {
        let p = CsrMatrix::from_dense(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        let c = CsrMatrix::zeros(0, 2);
        assert!(matches!(QuadraticProgram::new(p, vec![0.0, 0.0], c.clone(), vec![]), Err(Error::NotSymmetric { .. })));
        let p = CsrMatrix::identity(2);
        assert!(matches!(
            QuadraticProgram::new(p.clone(), vec![0.0], c.clone(), vec![]),
            Err(Error::LengthMismatch { .. })
        ));
        let c1 = CsrMatrix::from_dense(&[vec![1.0, 1.0]]).unwrap();
        assert!(QuadraticProgram::new(p, vec![0.0, 0.0], c1, vec![]).is_err());
    }

    #[test]
    fn equality_and_box() {
        // minimize ½‖x‖² − x₀ − 2x₁ s.t. x₀ + x₁ = 1, 0 ≤ x₀ ≤ 0.2
        let p = CsrMatrix::identity(2);
        let c = CsrMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let qp = QuadraticProgram::with_bounds(p, vec![-1.0, -2.0], c, vec![1.0, 0.0], vec![1.0, 0.2]).unwrap();
        let sol = solve_qp_warm(&qp, &SolverConfig::default(), None).unwrap();
        assert_eq!(sol.report.status, SolverStatus::Optimal);
        // unconstrained on the line x₁ = 1 − x₀: x₀ = 0 is the bound-optimal point
        assert!((sol.x[0] - 0.0).abs() < 1e-9, "{:?}", sol.x);
        assert!((sol.x[1] - 1.0).abs() < 1e-9);
    }

    // Dense Gaussian elimination with partial pivoting; None if singular.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        Some(x)
    }

    // Exhaustive search over active sets: the optimum of a strictly convex
    // QP solves the equality problem of its active rows.
    fn enumerate_active_sets(p: &[Vec<f64>], a: &[f64], c: &[Vec<f64>], b: &[f64], qp: &QuadraticProgram) -> f64 {
        let (d, m) = (a.len(), b.len());
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << m) {
            let rows: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
            let n = d + rows.len();
            let mut kkt = vec![vec![0.0; n]; n];
            let mut rhs = vec![0.0; n];
            for i in 0..d {
                kkt[i][..d].copy_from_slice(&p[i]);
                rhs[i] = -a[i];
            }
            for (r, &k) in rows.iter().enumerate() {
                for i in 0..d {
                    kkt[d + r][i] = c[k][i];
                    kkt[i][d + r] = c[k][i];
                }
                rhs[d + r] = b[k];
            }
            if let Some(sol) = dense_solve(kkt, rhs) {
                let x = &sol[..d];
                if qp.primal_residual(x) <= 1e-12 {
                    best = best.min(qp.objective(x));
                }
            }
        }
        best
    }

    #[test]
    fn random_problems_match_exhaustive_search() {
        use rand::Rng;
        let mut rng = crate::quantile::rng_from_seed(41);
        for trial in 0..30 {
            let d = 1 + trial % 3;
            let m = rng.random_range(1..=4);
            let b: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
            // P = BᵀB + 0.1 I
            let p: Vec<Vec<f64>> = (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| (0..d).map(|r| b[r][i] * b[r][j]).sum::<f64>() + if i == j { 0.1 } else { 0.0 })
                        .collect()
                })
                .collect();
            let a: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let c: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
            // rows through a known interior point keep the problem feasible
            let x_in: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let rhs: Vec<f64> =
                c.iter().map(|row| row.iter().zip(&x_in).map(|(u, v)| u * v).sum::<f64>() - 0.3).collect();
            let qp = QuadraticProgram::new(
                CsrMatrix::from_dense(&p).unwrap(),
                a.clone(),
                CsrMatrix::from_dense(&c).unwrap(),
                rhs.clone(),
            )
            .unwrap();
            let sol = solve_qp_warm(&qp, &SolverConfig::default(), None).unwrap();
            assert_eq!(sol.report.status, SolverStatus::Optimal);
            let tol = SolverConfig::default().tol;
            assert!(qp.primal_residual(&sol.x) <= tol);
            assert!(qp.complementarity(&sol.x, &sol.y) <= tol);
            let f = qp.objective(&sol.x);
            let oracle = enumerate_active_sets(&p, &a, &c, &rhs, &qp);
            assert!((f - oracle).abs() <= 1e-6, "trial {trial}: {f} vs {oracle}");
        }
    }

    #[test]
    fn complementarity_flags_bad_multipliers() {
        let qp = scalar_qp(2.0, -2.0, &[(1.0, 2.0)]);
        // right sign but the row is slack
        assert!((qp.complementarity(&[3.0], &[-2.0]) - 2.0).abs() < 1e-15);
        // wrong sign for a lower bound
        assert!(qp.complementarity(&[2.0], &[1.0]) >= 1.0);
        assert_eq!(qp.complementarity(&[2.0], &[-2.0]), 0.0);
    }
}
