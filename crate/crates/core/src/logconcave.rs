//! Projection onto log-concave distributions.
//!
//! A quantile `Q` is log-concave iff `h = 1/Q′` is positive and concave. On a
//! partition the fit keeps `h` affine on each cell, so it is described by the
//! left end `c = Q(0)` and the knot values `h₀ … h_K`. The quantile knots are
//!
//! ```text
//! q₀ = c,   qᵢ = qᵢ₋₁ + (Δuᵢ / hᵢ₋₁) Φ(δᵢ),   δᵢ = hᵢ / hᵢ₋₁ − 1,
//! ```
//!
//! and the squared distance to a step quantile `y` is
//!
//! ```text
//! Σᵢ Δuᵢ [ rᵢ² + 2 rᵢ (Δuᵢ/hᵢ₋₁) A(δᵢ) + (Δuᵢ/hᵢ₋₁)² B(δᵢ) ],   rᵢ = qᵢ₋₁ − yᵢ,
//! ```
//!
//! with `A`, `B` from [`crate::numerics::phi_moments`].
//!
//! Concave `h` is parametrized by its values on a set of kinks, the knots
//! where its slope may change; between kinks `h` is affine, so concavity is
//! a sign condition on slope changes at the kinks alone. The optimizer is an
//! active-set method. For a fixed kink set it runs damped Gauss-Newton in
//! `(c, h at kinks)`, dropping a kink whose slope change would flip sign.
//! It then inserts a kink wherever moving `h` there (a tent perturbation)
//! decreases the objective. It stops when no tent helps and the reduced
//! gradient vanishes, measured in units of the data range.
//!
//! The problem is not convex in `(c, h)`, so the result is a stationary
//! point; in practice different kink seeds reach the same fit.

use crate::density::{DensityModel, Segment, SegmentShape};
use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, Partition, StepQuantile};
use crate::numerics::{moments_with_derivatives, phi_unchecked, phi_with_derivative, GAUSS_LEGENDRE_16};
use crate::qp::banded::BandedMatrix;
use crate::qp::{SolverReport, SolverStatus};
use crate::quantile::{LogConcaveQuantile, Quantile};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;
const MU_INIT: f64 = 1e-3;
const MU_MIN: f64 = 1e-10;
const MU_MAX: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct LogConcaveConfig {
    /// Projected-gradient tolerance relative to `1 + objective/R²`, measured
    /// in units of the data range `R`.
    pub tol: f64,
    pub max_iter: usize,
    /// Restrict the support to `[0, ∞)` by requiring `c ≥ 0`.
    pub nonneg_support: bool,
}

impl Default for LogConcaveConfig {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 10_000, nonneg_support: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogConcaveFit {
    pub partition: Partition,
    pub c: f64,
    /// Reciprocal slopes at the knots; empty for a point mass.
    pub h: Vec<f64>,
    pub q: Vec<f64>,
    pub report: SolverReport,
    pub w2: f64,
}

impl LogConcaveFit {
    pub fn is_point_mass(&self) -> bool {
        self.h.is_empty()
    }

    pub fn quantile(&self) -> Quantile {
        if self.is_point_mass() {
            return Quantile::constant(self.c);
        }
        Quantile::LogConcave(LogConcaveQuantile {
            partition: self.partition.clone(),
            c: self.c,
            h: self.h.clone(),
            q: self.q.clone(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.quantile().mean()
    }

    /// `(q₀, q_K)`.
    pub fn support(&self) -> (f64, f64) {
        (self.q[0], *self.q.last().unwrap())
    }
}

fn check_params(c: f64, h: &[f64], part: &Partition) -> Result<()> {
    let n = part.knots().len();
    if h.len() != n {
        return Err(Error::LengthMismatch { expected: n, found: h.len() });
    }
    if !c.is_finite() {
        return Err(Error::invalid(format!("left end c = {c} must be finite")));
    }
    for (index, &value) in h.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        if !(value > 0.0) {
            return Err(Error::invalid(format!("h[{index}] = {value} must be positive")));
        }
    }
    Ok(())
}

fn check_data(part: &Partition, y: &[f64]) -> Result<()> {
    if y.len() != part.num_cells() {
        return Err(Error::LengthMismatch { expected: part.num_cells(), found: y.len() });
    }
    Ok(())
}

/// Quantile knots `q₀ … q_K` of the parameters `(c, h)`.
pub fn q_knots(c: f64, h: &[f64], part: &Partition) -> Result<Vec<f64>> {
    check_params(c, h, part)?;
    Ok(knots_unchecked(c, h, part))
}

fn knots_unchecked(c: f64, h: &[f64], part: &Partition) -> Vec<f64> {
    let mut q = Vec::with_capacity(h.len());
    q.push(c);
    for i in 1..h.len() {
        let delta = h[i] / h[i - 1] - 1.0;
        q.push(q[i - 1] + part.width(i) / h[i - 1] * phi_unchecked(delta));
    }
    q
}

/// `∫₀¹ (Q_{c,h} − Q₀)² du` for the step quantile with values `y`.
pub fn logconcave_objective(c: f64, h: &[f64], part: &Partition, y: &[f64]) -> Result<f64> {
    check_params(c, h, part)?;
    check_data(part, y)?;
    Ok(objective_unchecked(c, h, part, y))
}

fn objective_unchecked(c: f64, h: &[f64], part: &Partition, y: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut q = c;
    for i in 1..h.len() {
        let du = part.width(i);
        let delta = h[i] / h[i - 1] - 1.0;
        let w = du / h[i - 1];
        let m = moments_with_derivatives(delta);
        let r = q - y[i - 1];
        total += du * (r * r + 2.0 * r * w * m.a + w * w * m.b);
        q += w * phi_unchecked(delta);
    }
    total
}

/// Gradient of [`logconcave_objective`] with respect to `(c, h₀, …, h_K)`.
pub fn logconcave_gradient(c: f64, h: &[f64], part: &Partition, y: &[f64]) -> Result<Vec<f64>> {
    check_params(c, h, part)?;
    check_data(part, y)?;
    Ok(evaluate(c, h, part, y).grad)
}

// Objective, gradient and the per-cell partial derivatives the Gauss-Newton
// model needs. Cell arrays are indexed from 0 for cell 1.
struct Evaluation {
    f: f64,
    grad: Vec<f64>,
    /// ∂Fᵢ/∂qᵢ₋₁ with h fixed.
    dq: Vec<f64>,
    /// ∂Fᵢ/∂hᵢ₋₁ and ∂Fᵢ/∂hᵢ with qᵢ₋₁ fixed.
    dh0: Vec<f64>,
    dh1: Vec<f64>,
    /// ∂gᵢ/∂hᵢ₋₁ and ∂gᵢ/∂hᵢ of the knot increment gᵢ = qᵢ − qᵢ₋₁.
    ga: Vec<f64>,
    gb: Vec<f64>,
}

fn evaluate(c: f64, h: &[f64], part: &Partition, y: &[f64]) -> Evaluation {
    let k = y.len();
    let mut ev = Evaluation {
        f: 0.0,
        grad: vec![0.0; k + 2],
        dq: Vec::with_capacity(k),
        dh0: Vec::with_capacity(k),
        dh1: Vec::with_capacity(k),
        ga: Vec::with_capacity(k),
        gb: Vec::with_capacity(k),
    };
    let mut q = c;
    for i in 1..=k {
        let du = part.width(i);
        let h0 = h[i - 1];
        let delta = h[i] / h0 - 1.0;
        let w = du / h0;
        let m = moments_with_derivatives(delta);
        let (phi, dphi) = phi_with_derivative(delta);
        let r = q - y[i - 1];
        let opd = 1.0 + delta;

        ev.f += du * (r * r + 2.0 * r * w * m.a + w * w * m.b);
        ev.dq.push(du * (2.0 * r + 2.0 * w * m.a));
        ev.dh1.push(du * (2.0 * r * w * m.da + w * w * m.db) / h0);
        ev.dh0.push(-du / h0 * (2.0 * r * w * (m.a + opd * m.da) + w * w * (2.0 * m.b + opd * m.db)));
        ev.ga.push(-w / h0 * (phi + opd * dphi));
        ev.gb.push(w / h0 * dphi);
        q += w * phi;
    }
    // reverse sweep: `suffix` is the derivative of F with respect to qᵢ
    let mut suffix = 0.0;
    for i in (1..=k).rev() {
        ev.grad[1 + i] += ev.gb[i - 1] * suffix + ev.dh1[i - 1];
        ev.grad[i] += ev.ga[i - 1] * suffix + ev.dh0[i - 1];
        suffix += ev.dq[i - 1];
    }
    ev.grad[0] = suffix;
    ev
}

// Gram matrix over cell i of (1, ∂ψ/∂hᵢ₋₁, ∂ψ/∂hᵢ), where ψ(s) is the
// increment of Q inside the cell; upper triangle in row order.
fn cell_gram(du: f64, h0: f64, h1: f64) -> [f64; 6] {
    let delta = h1 / h0 - 1.0;
    let scale = du / (h0 * h0);
    let mut g = [0.0; 6];
    for &(lam, wt) in GAUSS_LEGENDRE_16.iter() {
        let (phi, dphi) = phi_with_derivative(delta * lam);
        let pa = -scale * lam * (phi + (1.0 + delta) * lam * dphi);
        let pb = scale * lam * lam * dphi;
        let w = du * wt;
        g[0] += w;
        g[1] += w * pa;
        g[2] += w * pb;
        g[3] += w * pa * pa;
        g[4] += w * pa * pb;
        g[5] += w * pb * pb;
    }
    g
}

// Concavity row j (1 ≤ j < K) normalized to unit centre coefficient:
// hⱼ − wl hⱼ₋₁ − wr hⱼ₊₁ ≥ 0.
fn concavity_weights(part: &Partition, j: usize) -> (f64, f64) {
    let (a, b) = (part.width(j), part.width(j + 1));
    (b / (a + b), a / (a + b))
}

fn concavity_slack(part: &Partition, h: &[f64], j: usize) -> f64 {
    let (wl, wr) = concavity_weights(part, j);
    h[j] - wl * h[j - 1] - wr * h[j + 1]
}

struct Problem<'a> {
    part: &'a Partition,
    y: &'a [f64],
    eps: f64,
    nonneg: bool,
    /// Scales of positions and of reciprocal slopes.
    x_scale: f64,
}

impl Problem<'_> {
    fn k(&self) -> usize {
        self.y.len()
    }

    fn violation(&self, c: f64, h: &[f64]) -> f64 {
        let k = self.k();
        let mut worst = h.iter().map(|&v| self.eps - v).fold(0.0, f64::max);
        for j in 1..k {
            worst = worst.max(-concavity_slack(self.part, h, j));
        }
        if self.nonneg {
            worst = worst.max(-c);
        }
        worst
    }
}

/// `h` affine between consecutive kinks; `values` holds `h` at the kinks,
/// which always include both ends of the partition.
#[derive(Debug, Clone)]
struct KinkState {
    c: f64,
    kinks: Vec<usize>,
    values: Vec<f64>,
}

enum Blocking {
    None,
    Bound(usize),
    Kink(usize),
}

impl KinkState {
    fn expand(&self, part: &Partition) -> Vec<f64> {
        let u = part.knots();
        let mut h = Vec::with_capacity(u.len());
        for p in 0..self.kinks.len() - 1 {
            let (a, b) = (self.kinks[p], self.kinks[p + 1]);
            let (ha, hb) = (self.values[p], self.values[p + 1]);
            let len = u[b] - u[a];
            for j in a..b {
                let t = (u[j] - u[a]) / len;
                h.push((1.0 - t) * ha + t * hb);
            }
        }
        h.push(*self.values.last().unwrap());
        h
    }

    // Drop in slope across interior kink p, linear in the values.
    fn slack(&self, u: &[f64], values: &[f64], p: usize) -> f64 {
        let (a, m, b) = (self.kinks[p - 1], self.kinks[p], self.kinks[p + 1]);
        (values[p] - values[p - 1]) / (u[m] - u[a]) - (values[p + 1] - values[p]) / (u[b] - u[m])
    }
}

impl Problem<'_> {
    // Scale of the variables `(c, values)` in the scale-free coordinates.
    fn var_scale(&self, i: usize) -> f64 {
        if i == 0 {
            self.x_scale
        } else {
            1.0 / self.x_scale
        }
    }

    /// Gradient and Gauss-Newton Hessian of `F/R²` in the scale-free
    /// coordinates `(c/R, R·values)` of the kink parametrization.
    fn reduced_model(&self, st: &KinkState, h: &[f64], ev: &Evaluation) -> (Vec<f64>, Vec<Vec<f64>>) {
        let u = self.part.knots();
        let s = st.kinks.len();
        let n = s + 1;
        let mut g = vec![0.0; n];
        let mut hess = vec![vec![0.0; n]; n];
        g[0] = ev.grad[0];
        // derivative of q at the start of the current kink interval
        let mut base = vec![0.0; n];
        base[0] = 1.0;
        for p in 0..s - 1 {
            let (a, b) = (st.kinks[p], st.kinks[p + 1]);
            let len = u[b] - u[a];
            let loc = [p + 1, p + 2];
            // Within the interval the rows of ∂(qᵢ₋₁, hᵢ₋₁, hᵢ)/∂θ are `base`
            // plus multiples of the two local coordinates; accumulate the
            // `base baseᵀ`, cross and local parts separately.
            let mut w = 0.0;
            let mut v = [0.0; 2];
            let mut m = [[0.0; 2]; 2];
            let mut lq = [0.0; 2];
            for i in a + 1..=b {
                let t0 = (u[i - 1] - u[a]) / len;
                let t1 = (u[i] - u[a]) / len;
                let l0 = [1.0 - t0, t0];
                let l1 = [1.0 - t1, t1];
                let gm = cell_gram(self.part.width(i), h[i - 1], h[i]);
                let gr = [[gm[0], gm[1], gm[2]], [gm[1], gm[3], gm[4]], [gm[2], gm[4], gm[5]]];
                let rows = [lq, l0, l1];
                w += 2.0 * gr[0][0];
                for x in 0..2 {
                    v[x] += 2.0 * (gr[0][0] * lq[x] + gr[0][1] * l0[x] + gr[0][2] * l1[x]);
                    for z in 0..2 {
                        let mut acc = 0.0;
                        for (ra, row_a) in rows.iter().enumerate() {
                            for (rb, row_b) in rows.iter().enumerate() {
                                acc += gr[ra][rb] * row_a[x] * row_b[z];
                            }
                        }
                        m[x][z] += 2.0 * acc;
                    }
                }
                let (ga, gb) = (ev.ga[i - 1], ev.gb[i - 1]);
                for x in 0..2 {
                    lq[x] += ga * l0[x] + gb * l1[x];
                }
            }
            for r in 0..n {
                if base[r] == 0.0 {
                    continue;
                }
                for col in 0..n {
                    hess[r][col] += w * base[r] * base[col];
                }
                for x in 0..2 {
                    hess[r][loc[x]] += base[r] * v[x];
                    hess[loc[x]][r] += v[x] * base[r];
                }
            }
            for x in 0..2 {
                for z in 0..2 {
                    hess[loc[x]][loc[z]] += m[x][z];
                }
                base[loc[x]] += lq[x];
            }
            for j in a..b {
                let t = (u[j] - u[a]) / len;
                g[loc[0]] += (1.0 - t) * ev.grad[1 + j];
                g[loc[1]] += t * ev.grad[1 + j];
            }
        }
        g[s] += ev.grad[u.len()];

        let r2 = self.x_scale * self.x_scale;
        for i in 0..n {
            g[i] *= self.var_scale(i) / r2;
            for j in 0..n {
                hess[i][j] *= self.var_scale(i) * self.var_scale(j) / r2;
            }
        }
        (g, hess)
    }

    // Longest step along `d` (scale-free) that keeps the kink values
    // concave and the bounds satisfied, with the constraint that blocks it.
    fn max_step(&self, st: &KinkState, d: &[f64]) -> (f64, Blocking) {
        let u = self.part.knots();
        let s = st.kinks.len();
        let mut best = (f64::INFINITY, Blocking::None);
        let dc = d[0] * self.var_scale(0);
        if self.nonneg && dc < 0.0 {
            best = (st.c / -dc, Blocking::Bound(0));
        }
        let dv: Vec<f64> = (0..s).map(|p| d[p + 1] * self.var_scale(p + 1)).collect();
        for p in [0, s - 1] {
            if dv[p] < 0.0 {
                let t = (st.values[p] - self.eps).max(0.0) / -dv[p];
                if t < best.0 {
                    best = (t, Blocking::Bound(p + 1));
                }
            }
        }
        for p in 1..s - 1 {
            let ds = st.slack(u, &dv, p);
            if ds < 0.0 {
                let t = st.slack(u, &st.values, p).max(0.0) / -ds;
                if t < best.0 {
                    best = (t, Blocking::Kink(p));
                }
            }
        }
        best
    }

    fn moved(&self, st: &KinkState, d: &[f64], t: f64) -> KinkState {
        let mut c = st.c + t * d[0] * self.var_scale(0);
        if self.nonneg {
            c = c.max(0.0);
        }
        let values = st
            .values
            .iter()
            .enumerate()
            .map(|(p, v)| (v + t * d[p + 1] * self.var_scale(p + 1)).max(self.eps))
            .collect();
        KinkState { c, kinks: st.kinks.clone(), values }
    }

    /// Damped Gauss-Newton on a fixed kink set until the scale-free gradient
    /// drops below `tol`. A step that makes a kink flat removes the kink.
    /// Returns the number of iterations used.
    fn solve_on_kinks(&self, st: &mut KinkState, tol: f64, budget: usize) -> usize {
        let (part, y) = (self.part, self.y);
        let r2 = self.x_scale * self.x_scale;
        let mut mu = MU_INIT;
        let mut h = st.expand(part);
        let mut ev = evaluate(st.c, &h, part, y);
        let mut it = 0;
        while it < budget {
            it += 1;
            let n = st.kinks.len() + 1;
            let (g, hess) = self.reduced_model(st, &h, &ev);
            let free = self.free_vars(st, &g);
            let gnorm = (0..n).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
            if gnorm <= tol * (1.0 + ev.f / r2) {
                break;
            }
            let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
            let Some(d) = damped_step(&hess, &g, &idx, &mut mu) else {
                break;
            };
            let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                mu = (mu * 10.0).min(MU_MAX);
                if mu >= MU_MAX {
                    break;
                }
                continue;
            }
            let quad: f64 = (0..n).map(|i| d[i] * (0..n).map(|j| hess[i][j] * d[j]).sum::<f64>()).sum();
            let pred = -(slope + 0.5 * quad);
            if pred * r2 <= 8.0 * f64::EPSILON * ev.f {
                // no decrease left above rounding error
                break;
            }
            let (t_max, blocking) = self.max_step(st, &d);
            let mut t = t_max.min(1.0);
            let mut accepted = None;
            for attempt in 0..MAX_BACKTRACK {
                let trial = self.moved(st, &d, t);
                let ht = trial.expand(part);
                let ft = objective_unchecked(trial.c, &ht, part, y);
                if ft <= ev.f + ARMIJO * t * slope * r2 {
                    accepted = Some((trial, ht, attempt == 0 && t_max <= 1.0, ft));
                    break;
                }
                t *= 0.5;
            }
            let Some((trial, ht, blocked, ft)) = accepted else {
                mu = (mu * 10.0).min(MU_MAX);
                if mu >= MU_MAX {
                    break;
                }
                continue;
            };
            if t > 0.0 {
                let actual = (ev.f - ft) / r2;
                if t == 1.0 && actual >= 0.75 * pred {
                    mu = (mu * 0.25).max(MU_MIN);
                } else if t < 1.0 || actual < 0.25 * pred {
                    mu = (mu * 4.0).min(MU_MAX);
                }
            }
            *st = trial;
            h = ht;
            if blocked {
                match blocking {
                    Blocking::Bound(0) => st.c = 0.0,
                    Blocking::Bound(i) => st.values[i - 1] = self.eps,
                    Blocking::Kink(p) => {
                        st.kinks.remove(p);
                        st.values.remove(p);
                    }
                    Blocking::None => {}
                }
                h = st.expand(part);
            }
            ev = evaluate(st.c, &h, part, y);
        }
        it
    }

    /// Scans each kink interval `(a, b)` for the tent function that peaks at
    /// grid point `j` and vanishes at `a` and `b`. Returns, per interval, the
    /// smallest scale-free derivative of the objective along such a tent and
    /// the point with the most negative concavity multiplier. Tents and the
    /// affine functions between kinks span the feasible directions, so the
    /// point is stationary iff no derivative is negative.
    fn scan_tents(&self, st: &KinkState, grad: &[f64]) -> Vec<(f64, usize)> {
        let u = self.part.knots();
        let scale = self.x_scale.powi(3);
        let mut out = Vec::with_capacity(st.kinks.len() - 1);
        for p in 0..st.kinks.len() - 1 {
            let (a, b) = (st.kinks[p], st.kinks[p + 1]);
            if b - a < 2 {
                continue;
            }
            let gh = &grad[1 + a..=1 + b];
            let (t0, t1) =
                gh.iter().enumerate().fold((0.0, 0.0), |(s0, s1), (o, g)| (s0 + g, s1 + g * (u[a + o] - u[a])));
            let (mut p0, mut p1) = (gh[0], 0.0);
            let mut min_deriv = f64::INFINITY;
            let mut best = (f64::INFINITY, a + 1);
            for j in a + 1..b {
                let g = gh[j - a];
                p0 += g;
                p1 += g * (u[j] - u[a]);
                let left = p1 / (u[j] - u[a]);
                let right = ((u[b] - u[a]) * (t0 - p0) - (t1 - p1)) / (u[b] - u[j]);
                let deriv = (left + right) / scale;
                min_deriv = min_deriv.min(deriv);
                // the tent's own concavity row evaluates to `bend`, so the
                // multiplier of that row is deriv / bend
                let (wl, wr) = concavity_weights(self.part, j);
                let bend = wl * self.part.width(j) / (u[j] - u[a]) + wr * self.part.width(j + 1) / (u[b] - u[j]);
                let multiplier = deriv / bend;
                if multiplier < best.0 {
                    best = (multiplier, j);
                }
            }
            out.push((min_deriv, best.1));
        }
        out
    }

    /// Adds a kink in every interval with a tent derivative below
    /// `-threshold`. Returns whether any kink was added.
    fn insert_kinks(&self, st: &mut KinkState, grad: &[f64], threshold: f64) -> bool {
        let added: Vec<usize> =
            self.scan_tents(st, grad).into_iter().filter(|t| t.0 < -threshold).map(|t| t.1).collect();
        if added.is_empty() {
            return false;
        }
        let h = st.expand(self.part);
        for j in added {
            let p = st.kinks.partition_point(|&x| x < j);
            st.kinks.insert(p, j);
            st.values.insert(p, h[j]);
        }
        true
    }

    /// Scale-free KKT residual of a kink state: the largest gradient entry
    /// over the free kink variables and the most negative tent derivative.
    fn kkt_residual(&self, st: &KinkState, h: &[f64], ev: &Evaluation) -> f64 {
        let (g, _) = self.reduced_model(st, h, ev);
        let free = self.free_vars(st, &g);
        let gnorm = (0..g.len()).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        let tents = self.scan_tents(st, &ev.grad).iter().map(|t| -t.0).fold(0.0, f64::max);
        gnorm.max(tents)
    }

    // Variables not held at a bound that the gradient pushes against.
    fn free_vars(&self, st: &KinkState, g: &[f64]) -> Vec<bool> {
        let n = g.len();
        let mut free = vec![true; n];
        if self.nonneg && st.c <= 0.0 && g[0] > 0.0 {
            free[0] = false;
        }
        for p in [0, n - 2] {
            if st.values[p] <= self.eps && g[p + 1] > 0.0 {
                free[p + 1] = false;
            }
        }
        free
    }
}

// Solves `(H + μ diag H) d = −g` on the free coordinates, raising `μ` until
// the matrix factors.
fn damped_step(hess: &[Vec<f64>], g: &[f64], idx: &[usize], mu: &mut f64) -> Option<Vec<f64>> {
    let m = idx.len();
    let mut d = vec![0.0; g.len()];
    if m == 0 {
        return Some(d);
    }
    let diag_mean = idx.iter().map(|&i| hess[i][i]).sum::<f64>() / m as f64;
    loop {
        let mut a = BandedMatrix::zeros(m, m - 1);
        for (r, &i) in idx.iter().enumerate() {
            for (col, &j) in idx.iter().enumerate().take(r + 1) {
                a.add(r, col, hess[i][j]);
            }
            a.add(r, r, *mu * (hess[i][i] + 1e-12 * diag_mean) + 1e-300);
        }
        if let Some(chol) = a.cholesky() {
            let mut rhs: Vec<f64> = idx.iter().map(|&i| -g[i]).collect();
            chol.solve_in_place(&mut rhs);
            if rhs.iter().all(|v| v.is_finite()) {
                for (r, &i) in idx.iter().enumerate() {
                    d[i] = rhs[r];
                }
                return Some(d);
            }
        }
        if *mu >= MU_MAX {
            return None;
        }
        *mu = (*mu * 10.0).min(MU_MAX);
    }
}

/// Fits the log-concave projection of `m` discretized on `k` grid cells.
pub fn fit_logconcave(m: &EmpiricalMeasure, k: usize, cfg: &LogConcaveConfig) -> Result<LogConcaveFit> {
    let q0 = m.discretize(k)?;
    fit_logconcave_step(&q0, cfg)
}

/// Fits the log-concave projection of a step quantile on its own partition.
pub fn fit_logconcave_step(q0: &StepQuantile, cfg: &LogConcaveConfig) -> Result<LogConcaveFit> {
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::invalid("optimizer needs a positive tolerance and iteration budget"));
    }
    let part = &q0.partition;
    let y = &q0.y;
    let k = y.len();
    let (lo, hi) = (q0.min(), q0.max());
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return Ok(point_mass_fit(part, lo));
    }
    if cfg.nonneg_support && lo < 0.0 {
        return Err(Error::invalid("nonnegative support requested but the data has negative values"));
    }
    let range = hi - lo;
    let prob = Problem { part, y, eps: 1e-8 / range, nonneg: cfg.nonneg_support, x_scale: range };

    let mean = q0.mean();
    let sd = part.cells().zip(y).map(|((a, b), &v)| (b - a) * (v - mean) * (v - mean)).sum::<f64>().sqrt();
    // uniform law with the data's mean and variance
    let mut c = mean - 3f64.sqrt() * sd;
    if cfg.nonneg_support {
        c = c.max(0.0);
    }
    let mut state = KinkState { c, kinks: vec![0, k], values: vec![1.0 / (12f64.sqrt() * sd); 2] };

    let mut iterations = 0;
    // work well below the reported tolerance; the fitted quantile error
    // scales like the square root of the objective gap
    let work_tol = cfg.tol * 1e-2;
    let mut inner_tol = 0.1 * work_tol;
    while iterations < cfg.max_iter {
        iterations += prob.solve_on_kinks(&mut state, inner_tol, cfg.max_iter - iterations);
        let h = state.expand(part);
        let ev = evaluate(state.c, &h, part, y);
        let threshold = work_tol * (1.0 + ev.f / (range * range));
        if prob.insert_kinks(&mut state, &ev.grad, threshold) {
            continue;
        }
        if prob.kkt_residual(&state, &h, &ev) <= threshold {
            break;
        }
        // the inner solve stopped short: tighten it once more
        if inner_tol < work_tol * 1e-4 {
            break;
        }
        inner_tol *= 0.1;
    }

    // c has a closed-form optimum given h: match the means
    let h = state.expand(part);
    let shift = mean - LogConcaveQuantile::new(part.clone(), state.c, h.clone())?.mean();
    state.c += shift;
    if cfg.nonneg_support {
        state.c = state.c.max(0.0);
    }
    let c = state.c;
    let ev = evaluate(c, &h, part, y);
    let residual = prob.kkt_residual(&state, &h, &ev);
    let status = if residual <= cfg.tol * (1.0 + ev.f / (range * range)) {
        SolverStatus::Optimal
    } else {
        SolverStatus::MaxIter
    };
    let report = SolverReport {
        iterations,
        primal_residual: prob.violation(c, &h),
        dual_residual: residual,
        objective: ev.f,
        status,
    };
    let q = knots_unchecked(c, &h, part);
    Ok(LogConcaveFit { partition: part.clone(), c, h, q, report, w2: ev.f.max(0.0).sqrt() })
}

fn point_mass_fit(part: &Partition, x: f64) -> LogConcaveFit {
    LogConcaveFit {
        partition: part.clone(),
        c: x,
        h: Vec::new(),
        q: vec![x; part.knots().len()],
        report: SolverReport {
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: 0.0,
            status: SolverStatus::Optimal,
        },
        w2: 0.0,
    }
}

/// Piecewise log-affine density of a fit: on `(qᵢ₋₁, qᵢ)` it is
/// `hᵢ₋₁ exp(βᵢ (x − qᵢ₋₁))` with `βᵢ = (hᵢ − hᵢ₋₁)/Δuᵢ`.
pub fn logconcave_density(fit: &LogConcaveFit) -> Result<DensityModel> {
    if fit.is_point_mass() {
        return Err(Error::invalid("a point mass has no density"));
    }
    let segments = (1..fit.h.len())
        .filter(|&i| fit.q[i] > fit.q[i - 1])
        .map(|i| Segment {
            lo: fit.q[i - 1],
            hi: fit.q[i],
            shape: SegmentShape::LogAffine {
                alpha: fit.h[i - 1].ln(),
                beta: (fit.h[i] - fit.h[i - 1]) / fit.partition.width(i),
            },
        })
        .collect();
    Ok(DensityModel { segments, atoms: Vec::new() })
}
