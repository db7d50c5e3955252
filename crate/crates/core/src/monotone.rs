//! Projection onto non-increasing densities on the half line.
//!
//! A law on `[0, ∞)` has a non-increasing density iff its quantile is
//! convex, non-decreasing and vanishes at 0. On a partition the fit is the
//! piecewise-affine quantile through `q₀ = 0, q₁ … q_K`, and
//!
//! ```text
//! ∫(Q − Q₀)² = Σᵢ (Δuᵢ/3)(qᵢ₋₁² + qᵢ₋₁qᵢ + qᵢ² − 3yᵢ(qᵢ₋₁ + qᵢ) + 3yᵢ²)
//! ```
//!
//! is quadratic in `q`. [`build_monotone_qp`] states it as a tridiagonal QP
//! with monotonicity rows `qᵢ ≥ qᵢ₋₁` and slope-convexity rows.
//!
//! The fit itself solves the same program in the coordinates of the cone's
//! generators. Every feasible quantile is `Q(u) = Σⱼ zⱼ (u − uⱼ₋₁)₊` with
//! `z ≥ 0`, where `zⱼ` is the slope increase at knot `uⱼ₋₁`, so the fit is a
//! nonnegative least-squares problem over ramps. A Lawson-Hanson active set
//! adds one kink at a time; with kinks fixed the fit is a tridiagonal solve
//! in the values at the kinks, and all ramp gradients come from one
//! backward sweep. Iterates are exactly feasible and the result satisfies
//! the KKT conditions of the QP.

use crate::density::{DensityModel, Segment, SegmentShape};
use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, Partition, StepQuantile};
use crate::qp::banded::BandedMatrix;
use crate::qp::{CsrMatrix, QuadraticProgram, SolverConfig, SolverReport, SolverStatus};
use crate::quantile::{PiecewiseLinear, Quantile};

/// Slopes closer than this (relative) are one density piece.
const MERGE_REL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneFit {
    pub partition: Partition,
    /// Knots `q₀ = 0, q₁ … q_K`.
    pub q: Vec<f64>,
    pub report: SolverReport,
    pub w2: f64,
    pub warnings: Vec<String>,
}

impl MonotoneFit {
    pub fn quantile(&self) -> Quantile {
        Quantile::Linear(PiecewiseLinear { partition: self.partition.clone(), q: self.q.clone() })
    }

    /// Right end of the support, `q_K`.
    pub fn support_end(&self) -> f64 {
        *self.q.last().unwrap()
    }
}

/// Grid size used when the caller has no preference.
pub fn default_grid_size(m: &EmpiricalMeasure) -> usize {
    m.len().max(64)
}

fn check_lengths(q_len: usize, part: &Partition, y: &[f64]) -> Result<()> {
    let k = part.num_cells();
    if y.len() != k {
        return Err(Error::LengthMismatch { expected: k, found: y.len() });
    }
    if q_len != k + 1 {
        return Err(Error::LengthMismatch { expected: k + 1, found: q_len });
    }
    Ok(())
}

/// Squared L² distance between the piecewise-affine quantile through `q`
/// and the step quantile `y`.
pub fn monotone_objective(q: &[f64], part: &Partition, y: &[f64]) -> Result<f64> {
    check_lengths(q.len(), part, y)?;
    Ok((1..q.len())
        .map(|i| {
            let (a, b, yi) = (q[i - 1], q[i], y[i - 1]);
            part.width(i) / 3.0 * (a * a + a * b + b * b - 3.0 * yi * (a + b) + 3.0 * yi * yi)
        })
        .sum())
}

/// QP in `q₁ … q_K` whose objective plus `Σ Δuᵢ yᵢ²` is
/// [`monotone_objective`]. Rows `0..K` are monotonicity, rows `K..2K−1`
/// slope convexity.
pub fn build_monotone_qp(part: &Partition, y: &[f64]) -> Result<QuadraticProgram> {
    let k = part.num_cells();
    check_lengths(k + 1, part, y)?;
    let du = part.widths();
    let mut p = Vec::with_capacity(3 * k);
    let mut a = vec![0.0; k];
    for i in 0..k {
        // variable i is q_{i+1}: right end of cell i+1, left end of cell i+2
        let mut diag = 2.0 / 3.0 * du[i];
        a[i] = -y[i] * du[i];
        if i + 1 < k {
            diag += 2.0 / 3.0 * du[i + 1];
            a[i] -= y[i + 1] * du[i + 1];
            p.push((i, i + 1, du[i + 1] / 3.0));
            p.push((i + 1, i, du[i + 1] / 3.0));
        }
        p.push((i, i, diag));
    }
    let mut c = Vec::with_capacity(5 * k);
    for i in 0..k {
        c.push((i, i, 1.0));
        if i > 0 {
            c.push((i, i - 1, -1.0));
        }
    }
    // (q_{i+1} − q_i)/Δu_{i+1} − (q_i − q_{i−1})/Δu_i ≥ 0 for i = 1..K−1
    for i in 1..k {
        let row = k + i - 1;
        let (l, r) = (1.0 / du[i - 1], 1.0 / du[i]);
        c.push((row, i, r));
        c.push((row, i - 1, -(l + r)));
        if i >= 2 {
            c.push((row, i - 2, l));
        }
    }
    let m = 2 * k - 1;
    QuadraticProgram::new(CsrMatrix::from_triplets(k, k, &p)?, a, CsrMatrix::from_triplets(m, k, &c)?, vec![0.0; m])
}

/// Fits the projection of `m` discretized on `k` grid cells.
pub fn fit_monotone(m: &EmpiricalMeasure, k: usize, cfg: &SolverConfig) -> Result<MonotoneFit> {
    if m.min() <= 0.0 {
        return Err(Error::NonPositiveData(m.min()));
    }
    fit_monotone_step(&m.discretize(k)?, cfg)
}

/// Fits the projection of a step quantile on its own partition.
pub fn fit_monotone_step(q0: &StepQuantile, cfg: &SolverConfig) -> Result<MonotoneFit> {
    if q0.min() <= 0.0 {
        return Err(Error::NonPositiveData(q0.min()));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::invalid("solver needs a positive tolerance and iteration budget"));
    }
    let part = &q0.partition;
    let ramps = RampProblem { part, y: &q0.y };
    // kinks keep entering far below the reported tolerance: the fitted
    // quantile error scales like the square root of the objective gap
    let scale = q0.max();
    let sol = ramps.solve(cfg.tol * scale * 1e-6, cfg.max_iter);
    let q = ramps.knots(&sol.z);
    let objective = monotone_objective(&q, part, &q0.y)?;
    let report = SolverReport {
        iterations: sol.iterations,
        primal_residual: 0.0,
        dual_residual: sol.residual / scale,
        objective,
        status: if sol.converged && sol.residual <= cfg.tol * scale {
            SolverStatus::Optimal
        } else {
            SolverStatus::MaxIter
        },
    };
    let mut fit =
        MonotoneFit { partition: part.clone(), q, report, w2: objective.max(0.0).sqrt(), warnings: Vec::new() };
    if flat_cells(&fit) > 0 {
        fit.warnings.push("some knots coincide; their mass is an atom at the boundary".into());
    }
    Ok(fit)
}

struct RampSolution {
    z: Vec<f64>,
    iterations: usize,
    /// Largest KKT violation of the ramp gradients.
    residual: f64,
    converged: bool,
}

// Ramp j (0-based) is (u − u_j)₊, so z[j] is the slope increase at knot j.
struct RampProblem<'a> {
    part: &'a Partition,
    y: &'a [f64],
}

impl RampProblem<'_> {
    fn knots(&self, z: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(z.len() + 1);
        q.push(0.0);
        let mut slope = 0.0;
        for (i, zi) in z.iter().enumerate() {
            slope += zi;
            q.push(q[i] + slope * self.part.width(i + 1));
        }
        q
    }

    /// `g[j] = ∫ (u − u_j)₊ (Q − Q₀) du`, half the gradient in `z`.
    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let k = self.y.len();
        let mut g = vec![0.0; k];
        // tail integrals ∫_{u_i}^1 r and ∫_{u_i}^1 (u − u_i) r
        let (mut a, mut b) = (0.0, 0.0);
        for i in (0..k).rev() {
            let d = self.part.width(i + 1);
            let (qa, qb, yi) = (q[i], q[i + 1], self.y[i]);
            b += d * a + d * d * (qa / 6.0 + qb / 3.0 - yi / 2.0);
            a += d * (0.5 * (qa + qb) - yi);
            g[i] = b;
        }
        g
    }

    /// Least squares over the ramps in `passive` (sorted, non-empty): `Q`
    /// vanishes up to the first kink and is affine between kinks.
    fn subproblem(&self, passive: &[usize]) -> Option<Vec<f64>> {
        let knots = self.part.knots();
        let k = self.y.len();
        let mut nodes: Vec<usize> = passive.to_vec();
        nodes.push(k);
        let m = nodes.len() - 1;
        let mut gram = BandedMatrix::zeros(m, 1);
        let mut rhs = vec![0.0; m];
        for s in 0..m {
            let (ia, ib) = (nodes[s], nodes[s + 1]);
            let (ua, ub) = (knots[ia], knots[ib]);
            let len = ub - ua;
            // node s is fixed at zero when s = 0
            if s > 0 {
                gram.add(s - 1, s - 1, len / 3.0);
                gram.add(s - 1, s, len / 6.0);
            }
            gram.add(s, s, len / 3.0);
            let (mut rise, mut fall) = (0.0, 0.0);
            for i in ia..ib {
                let (lo, hi) = (knots[i] - ua, knots[i + 1] - ua);
                let rise_i = self.y[i] * 0.5 * (hi * hi - lo * lo) / len;
                rise += rise_i;
                fall += self.y[i] * (hi - lo) - rise_i;
            }
            rhs[s] += rise;
            if s > 0 {
                rhs[s - 1] += fall;
            }
        }
        let chol = gram.cholesky()?;
        chol.solve_in_place(&mut rhs);
        // values at nodes 1..=m back to slope increments
        let mut z = vec![0.0; passive.len()];
        let mut prev_slope = 0.0;
        let mut prev_value = 0.0;
        for s in 0..m {
            let slope = (rhs[s] - prev_value) / (knots[nodes[s + 1]] - knots[nodes[s]]);
            z[s] = slope - prev_slope;
            prev_slope = slope;
            prev_value = rhs[s];
        }
        z.iter().all(|v| v.is_finite()).then_some(z)
    }

    fn solve(&self, tol: f64, max_iter: usize) -> RampSolution {
        let k = self.y.len();
        let mut z = vec![0.0; k];
        let mut passive: Vec<usize> = Vec::new();
        let mut barred = vec![false; k];
        let mut iterations = 0;
        let converged = loop {
            let g = self.gradient(&self.knots(&z));
            let entering = (0..k)
                .filter(|&j| !barred[j] && z[j] == 0.0 && !passive.contains(&j))
                .min_by(|&a, &b| g[a].total_cmp(&g[b]))
                .filter(|&j| g[j] < -tol);
            let Some(j) = entering else {
                break true;
            };
            if iterations >= max_iter {
                break false;
            }
            let at = passive.partition_point(|&p| p < j);
            passive.insert(at, j);
            loop {
                iterations += 1;
                let Some(zp) = self.subproblem(&passive) else {
                    break;
                };
                if zp.iter().all(|&v| v > 0.0) {
                    for (&p, v) in passive.iter().zip(&zp) {
                        z[p] = *v;
                    }
                    break;
                }
                // step towards the subproblem solution until a ramp leaves
                let mut alpha: f64 = 1.0;
                let mut blocking = passive[0];
                for (&p, &v) in passive.iter().zip(&zp) {
                    if v <= 0.0 {
                        let ratio = if z[p] > 0.0 { z[p] / (z[p] - v) } else { 0.0 };
                        if ratio <= alpha {
                            alpha = ratio;
                            blocking = p;
                        }
                    }
                }
                for (&p, &v) in passive.iter().zip(&zp) {
                    z[p] += alpha * (v - z[p]);
                }
                // the blocking ramp leaves even if roundoff left it positive
                let leaving: Vec<usize> = passive
                    .iter()
                    .zip(&zp)
                    .filter(|&(&p, &v)| p == blocking || (v <= 0.0 && z[p] <= 0.0))
                    .map(|(&p, _)| p)
                    .collect();
                for &p in &leaving {
                    z[p] = 0.0;
                }
                passive.retain(|p| !leaving.contains(p));
                // a ramp that cannot enter without leaving again is roundoff
                if leaving.contains(&j) && alpha == 0.0 {
                    barred[j] = true;
                }
                if passive.is_empty() || iterations >= max_iter {
                    break;
                }
            }
        };
        let g = self.gradient(&self.knots(&z));
        let residual = (0..k).map(|j| if z[j] > 0.0 { g[j].abs() } else { (-g[j]).max(0.0) }).fold(0.0, f64::max);
        RampSolution { z, iterations, residual, converged }
    }
}

fn flat_floor(fit: &MonotoneFit) -> f64 {
    1e-12 * fit.support_end().abs().max(f64::MIN_POSITIVE)
}

fn flat_cells(fit: &MonotoneFit) -> usize {
    let floor = flat_floor(fit);
    fit.q.windows(2).filter(|w| w[1] - w[0] <= floor).count()
}

/// Piecewise-constant density with heights `Δuᵢ / Δqᵢ`. Cells with equal
/// slopes are merged into one piece; cells with `Δqᵢ ≈ 0` contribute an
/// atom at their knot instead.
pub fn monotone_density(fit: &MonotoneFit) -> Result<DensityModel> {
    let q = &fit.q;
    let part = &fit.partition;
    if q.len() != part.knots().len() {
        return Err(Error::LengthMismatch { expected: part.knots().len(), found: q.len() });
    }
    if !(fit.support_end() > q[0]) {
        return Err(Error::invalid("all knots are equal; the fit has no density"));
    }
    let floor = flat_floor(fit);
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    let mut segments: Vec<Segment> = Vec::new();
    // open piece: (lo, mass, first slope)
    let mut open: Option<(f64, f64, f64)> = None;
    let mut hi = q[0];
    for i in 1..q.len() {
        let (dq, du) = (q[i] - q[i - 1], part.width(i));
        if dq <= floor {
            match atoms.last_mut() {
                Some(a) if a.0 == q[i] => a.1 += du,
                _ => atoms.push((q[i], du)),
            }
            continue;
        }
        let slope = dq / du;
        match open {
            Some((lo, mass, s0)) if (slope - s0).abs() <= MERGE_REL * s0 => open = Some((lo, mass + du, s0)),
            _ => {
                if let Some((lo, mass, _)) = open {
                    segments.push(piece(lo, hi, mass));
                }
                open = Some((q[i - 1], du, slope));
            }
        }
        hi = q[i];
    }
    if let Some((lo, mass, _)) = open {
        segments.push(piece(lo, hi, mass));
    }
    Ok(DensityModel { segments, atoms })
}

fn piece(lo: f64, hi: f64, mass: f64) -> Segment {
    Segment { lo, hi, shape: SegmentShape::Constant { height: mass / (hi - lo) } }
}
