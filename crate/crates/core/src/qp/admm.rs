use super::banded::{BandedCholesky, BandedMatrix};
use super::ipm::interior_point;
use super::sparse::CsrMatrix;
use super::{QpSolution, QuadraticProgram, SolverConfig, SolverReport, SolverStatus, WarmStart};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 50;
const EPS_PRIMAL_INFEASIBLE: f64 = 1e-7;
const POLISH_DELTA: f64 = 1e-7;
const POLISH_REFINE: usize = 30;
const POLISH_ROUNDS: usize = 25;
/// ADMM accuracy at which the first polish is attempted.
const FIRST_POLISH_EPS: f64 = 1e-4;
/// ADMM iterations after which a stalled solve switches to interior point.
const RESCUE_AFTER: usize = 500;

pub(super) struct Scaled {
    pub p: CsrMatrix,
    pub a: Vec<f64>,
    pub c: CsrMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    cost: f64,
}

fn norm_to_scale(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        1.0 / v.min(1e4).sqrt()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// Ruiz equilibration of the KKT matrix [P Cᵀ; C 0] followed by cost scaling.
fn equilibrate(qp: &QuadraticProgram, iters: usize) -> Scaled {
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let mut p = qp.p.clone();
    let mut c = qp.c.clone();
    let mut a = qp.a.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    for _ in 0..iters {
        let mut col = vec![0.0; n];
        p.col_inf_norms(&mut col);
        c.col_inf_norms(&mut col);
        let dt: Vec<f64> = col.iter().map(|&v| norm_to_scale(v)).collect();
        let et: Vec<f64> = (0..m).map(|r| norm_to_scale(c.row_inf_norm(r))).collect();
        p.scale(&dt, &dt);
        c.scale(&et, &dt);
        for i in 0..n {
            a[i] *= dt[i];
            d[i] *= dt[i];
        }
        for k in 0..m {
            e[k] *= et[k];
        }
    }
    let mut col = vec![0.0; n];
    p.col_inf_norms(&mut col);
    let mean_p = if n > 0 { col.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let scale = mean_p.max(inf_norm(&a));
    let cost = if scale < 1e-4 { 1.0 } else { 1.0 / scale.min(1e4) };
    p.scale_all(cost);
    a.iter_mut().for_each(|v| *v *= cost);
    let l = qp.lower.iter().zip(&e).map(|(v, s)| v * s).collect();
    let u = qp.upper.iter().zip(&e).map(|(v, s)| v * s).collect();
    Scaled { p, a, c, l, u, d, e, cost }
}

fn bandwidth(p: &CsrMatrix, c: &CsrMatrix) -> usize {
    p.bandwidth().max(c.max_row_span())
}

/// Factor of `P + shift·I + Cᵀ diag(w) C`.
pub(super) fn factor(p: &CsrMatrix, c: &CsrMatrix, shift: f64, w: &[f64], bw: usize) -> Option<BandedCholesky> {
    let n = p.nrows();
    let mut m = BandedMatrix::zeros(n, bw);
    for r in 0..n {
        for (col, v) in p.row(r) {
            if col <= r {
                m.add(r, col, v);
            }
        }
    }
    m.add_diagonal(shift);
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for k in 0..c.nrows() {
        entries.clear();
        entries.extend(c.row(k));
        for (ii, &(i, vi)) in entries.iter().enumerate() {
            for &(j, vj) in &entries[..=ii] {
                m.add(i, j, w[k] * vi * vj);
            }
        }
    }
    m.cholesky()
}

struct Admm<'a> {
    s: &'a Scaled,
    cfg: &'a SolverConfig,
    n: usize,
    m: usize,
    bw: usize,
    rho: f64,
    rho_vec: Vec<f64>,
    chol: BandedCholesky,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    y_prev: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum RowKind {
    Equality,
    Inequality,
    Free,
}

fn row_kind(l: f64, u: f64) -> RowKind {
    if l == u {
        RowKind::Equality
    } else if l == f64::NEG_INFINITY && u == f64::INFINITY {
        RowKind::Free
    } else {
        RowKind::Inequality
    }
}

impl<'a> Admm<'a> {
    fn rho_vector(s: &Scaled, rho: f64) -> Vec<f64> {
        s.l.iter()
            .zip(&s.u)
            .map(|(&l, &u)| match row_kind(l, u) {
                RowKind::Equality => RHO_EQ_FACTOR * rho,
                RowKind::Inequality => rho,
                RowKind::Free => RHO_MIN,
            })
            .collect()
    }

    fn refactor(&mut self, rho: f64) -> bool {
        let rho_vec = Self::rho_vector(self.s, rho);
        match factor(&self.s.p, &self.s.c, self.cfg.sigma, &rho_vec, self.bw) {
            Some(chol) => {
                self.rho = rho;
                self.rho_vec = rho_vec;
                self.chol = chol;
                true
            }
            None => false,
        }
    }

    fn step(&mut self) {
        let (n, m) = (self.n, self.m);
        let s = self.s;
        let sigma = self.cfg.sigma;
        let alpha = self.cfg.alpha;
        let mut rhs = vec![0.0; n];
        let w: Vec<f64> = (0..m).map(|k| self.rho_vec[k] * self.z[k] - self.y[k]).collect();
        s.c.mul_t_vec(&w, &mut rhs);
        for i in 0..n {
            rhs[i] += sigma * self.x[i] - s.a[i];
        }
        self.chol.solve_in_place(&mut rhs);
        let xt = rhs;
        let mut zt = vec![0.0; m];
        s.c.mul_vec(&xt, &mut zt);
        for i in 0..n {
            self.x[i] = alpha * xt[i] + (1.0 - alpha) * self.x[i];
        }
        self.y_prev.copy_from_slice(&self.y);
        for k in 0..m {
            let zr = alpha * zt[k] + (1.0 - alpha) * self.z[k];
            let z_new = (zr + self.y[k] / self.rho_vec[k]).clamp(s.l[k], s.u[k]);
            self.y[k] += self.rho_vec[k] * (zr - z_new);
            self.z[k] = z_new;
        }
    }

    /// Unscaled residuals and their relative scales.
    fn residuals(&self) -> Residuals {
        let s = self.s;
        let (n, m) = (self.n, self.m);
        let mut cx = vec![0.0; m];
        s.c.mul_vec(&self.x, &mut cx);
        let mut px = vec![0.0; n];
        s.p.mul_vec(&self.x, &mut px);
        let mut cty = vec![0.0; n];
        s.c.mul_t_vec(&self.y, &mut cty);

        let mut prim = 0.0f64;
        let mut prim_scale = 0.0f64;
        for k in 0..m {
            let inv = 1.0 / s.e[k];
            prim = prim.max(((cx[k] - self.z[k]) * inv).abs());
            prim_scale = prim_scale.max((cx[k] * inv).abs()).max((self.z[k] * inv).abs());
        }
        let mut dual = 0.0f64;
        let mut dual_scale = 0.0f64;
        for i in 0..n {
            let inv = 1.0 / (s.d[i] * s.cost);
            dual = dual.max(((px[i] + s.a[i] + cty[i]) * inv).abs());
            dual_scale = dual_scale.max((px[i] * inv).abs()).max((cty[i] * inv).abs()).max((s.a[i] * inv).abs());
        }
        // scaled quantities for the penalty update
        let prim_s = (0..m).map(|k| (cx[k] - self.z[k]).abs()).fold(0.0, f64::max);
        let dual_s = (0..n).map(|i| (px[i] + s.a[i] + cty[i]).abs()).fold(0.0, f64::max);
        let prim_norm_s = inf_norm(&cx).max(inf_norm(&self.z));
        let dual_norm_s = inf_norm(&px).max(inf_norm(&cty)).max(inf_norm(&s.a));
        Residuals { prim, prim_scale, dual, dual_scale, prim_s, dual_s, prim_norm_s, dual_norm_s }
    }

    fn primal_infeasible(&self) -> bool {
        let s = self.s;
        let dy: Vec<f64> = (0..self.m).map(|k| self.y[k] - self.y_prev[k]).collect();
        let norm = (0..self.m).map(|k| (dy[k] * s.e[k]).abs()).fold(0.0, f64::max);
        if norm <= 1e-12 {
            return false;
        }
        let mut cty = vec![0.0; self.n];
        s.c.mul_t_vec(&dy, &mut cty);
        let lhs = (0..self.n).map(|i| (cty[i] / s.d[i]).abs()).fold(0.0, f64::max);
        if lhs > EPS_PRIMAL_INFEASIBLE * norm {
            return false;
        }
        let mut support = 0.0;
        for k in 0..self.m {
            if dy[k] > 0.0 {
                if s.u[k] == f64::INFINITY {
                    return false;
                }
                support += s.u[k] * dy[k];
            } else if dy[k] < 0.0 {
                if s.l[k] == f64::NEG_INFINITY {
                    return false;
                }
                support += s.l[k] * dy[k];
            }
        }
        support < -EPS_PRIMAL_INFEASIBLE * norm
    }
}

struct Residuals {
    prim: f64,
    prim_scale: f64,
    dual: f64,
    dual_scale: f64,
    prim_s: f64,
    dual_s: f64,
    prim_norm_s: f64,
    dual_norm_s: f64,
}

impl Residuals {
    fn converged(&self, eps: f64) -> bool {
        self.prim <= eps + eps * self.prim_scale && self.dual <= eps + eps * self.dual_scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Active {
    Inactive,
    Lower,
    Upper,
    Equality,
}

/// Solves the equality-constrained KKT system of the guessed active set and
/// repairs the guess until primal and dual feasibility hold, or gives up.
fn polish(
    qp: &QuadraticProgram,
    s: &Scaled,
    x0: &[f64],
    z0: &[f64],
    y0: &[f64],
    tol: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let mut active: Vec<Active> = (0..m)
        .map(|k| match row_kind(s.l[k], s.u[k]) {
            RowKind::Equality => Active::Equality,
            RowKind::Free => Active::Inactive,
            RowKind::Inequality => {
                if z0[k] - s.l[k] < -y0[k] {
                    Active::Lower
                } else if s.u[k] - z0[k] < y0[k] {
                    Active::Upper
                } else {
                    Active::Inactive
                }
            }
        })
        .collect();
    let _ = x0;

    for _round in 0..POLISH_ROUNDS {
        let rows: Vec<usize> = (0..m).filter(|&k| active[k] != Active::Inactive).collect();
        let target: Vec<f64> = rows
            .iter()
            .map(|&k| match active[k] {
                Active::Upper => s.u[k],
                _ => s.l[k],
            })
            .collect();
        let a_act = s.c.select_rows(&rows);
        let Some((x, y_act)) = solve_kkt(&s.p, &s.a, &a_act, &target) else {
            return None;
        };

        let mut y = vec![0.0; m];
        for (idx, &k) in rows.iter().enumerate() {
            y[k] = y_act[idx];
        }
        // unscaled checks
        let mut cx = vec![0.0; m];
        s.c.mul_vec(&x, &mut cx);
        let mut changed = false;
        let mut worst_sign: Option<(usize, f64)> = None;
        for k in 0..m {
            let inv_e = 1.0 / s.e[k];
            let yk = y[k] * s.e[k] / s.cost;
            match active[k] {
                Active::Inactive => {
                    let v = cx[k] * inv_e;
                    if v < qp.lower[k] - tol {
                        active[k] = Active::Lower;
                        changed = true;
                    } else if v > qp.upper[k] + tol {
                        active[k] = Active::Upper;
                        changed = true;
                    }
                }
                Active::Lower if yk > tol => {
                    if worst_sign.is_none_or(|(_, w)| yk > w) {
                        worst_sign = Some((k, yk));
                    }
                }
                #[allow(clippy::collapsible_match)]
                Active::Upper if yk < -tol => {
                    if worst_sign.is_none_or(|(_, w)| -yk > w) {
                        worst_sign = Some((k, -yk));
                    }
                }
                _ => {}
            }
        }
        if !changed {
            match worst_sign {
                None => {
                    let xu: Vec<f64> = (0..n).map(|i| x[i] * s.d[i]).collect();
                    let yu: Vec<f64> = (0..m).map(|k| y[k] * s.e[k] / s.cost).collect();
                    return Some((xu, yu));
                }
                Some(_) => {
                    // drop every wrong-signed constraint at once
                    for k in 0..m {
                        let yk = y[k] * s.e[k] / s.cost;
                        match active[k] {
                            Active::Lower if yk > tol => active[k] = Active::Inactive,
                            Active::Upper if yk < -tol => active[k] = Active::Inactive,
                            _ => {}
                        }
                    }
                }
            }
        }
    }
    None
}

/// Solves `[P Aᵀ; A 0] [x; y] = [−a; b]` by regularized factorization and
/// iterative refinement.
fn solve_kkt(p: &CsrMatrix, a: &[f64], act: &CsrMatrix, b: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = p.nrows();
    let k = act.nrows();
    let delta = POLISH_DELTA;
    let w = vec![1.0 / delta; k];
    let bw = bandwidth(p, act);
    let chol = factor(p, act, delta, &w, bw)?;

    let solve_reg = |r1: &[f64], r2: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut rhs = vec![0.0; n];
        let scaled: Vec<f64> = r2.iter().map(|v| v / delta).collect();
        act.mul_t_vec(&scaled, &mut rhs);
        for i in 0..n {
            rhs[i] += r1[i];
        }
        chol.solve_in_place(&mut rhs);
        let mut ax = vec![0.0; k];
        act.mul_vec(&rhs, &mut ax);
        let dy = (0..k).map(|j| (ax[j] - r2[j]) / delta).collect();
        (rhs, dy)
    };

    let r1: Vec<f64> = a.iter().map(|v| -v).collect();
    let (mut x, mut y) = solve_reg(&r1, b);
    let scale = 1.0 + inf_norm(a).max(inf_norm(b));
    let mut px = vec![0.0; n];
    let mut aty = vec![0.0; n];
    let mut ax = vec![0.0; k];
    for _ in 0..POLISH_REFINE {
        p.mul_vec(&x, &mut px);
        act.mul_t_vec(&y, &mut aty);
        act.mul_vec(&x, &mut ax);
        let e1: Vec<f64> = (0..n).map(|i| -a[i] - px[i] - aty[i]).collect();
        let e2: Vec<f64> = (0..k).map(|j| b[j] - ax[j]).collect();
        if inf_norm(&e1).max(inf_norm(&e2)) <= 1e-15 * scale {
            break;
        }
        let (dx, dy) = solve_reg(&e1, &e2);
        for i in 0..n {
            x[i] += dx[i];
        }
        for j in 0..k {
            y[j] += dy[j];
        }
    }
    if x.iter().chain(&y).all(|v| v.is_finite()) {
        Some((x, y))
    } else {
        None
    }
}

fn report(qp: &QuadraticProgram, x: &[f64], y: &[f64], iterations: usize, status: SolverStatus) -> SolverReport {
    SolverReport {
        iterations,
        primal_residual: qp.primal_residual(x),
        dual_residual: qp.dual_residual(x, y).max(qp.complementarity(x, y)),
        objective: qp.objective(x),
        status,
    }
}

fn try_polish(
    qp: &QuadraticProgram,
    s: &Scaled,
    point: (&[f64], &[f64], &[f64]),
    tol: f64,
    iterations: usize,
) -> Option<QpSolution> {
    let (x, y) = polish(qp, s, point.0, point.1, point.2, tol)?;
    let r = report(qp, &x, &y, iterations, SolverStatus::Optimal);
    if r.primal_residual <= tol && r.dual_residual <= tol {
        Some(QpSolution { x, y, report: r })
    } else {
        None
    }
}

// Interior-point rescue: polish from its point, or accept the point itself.
fn rescue(qp: &QuadraticProgram, s: &Scaled, bw: usize, x0: &[f64], tol: f64, iterations: usize) -> Option<QpSolution> {
    let ip = interior_point(s, bw, x0, tol * 1e-1)?;
    let total = iterations + ip.iterations;
    if let Some(sol) = try_polish(qp, s, (&ip.x, &ip.z, &ip.y), tol, total) {
        return Some(sol);
    }
    let (xu, yu) = unscale(s, &ip.x, &ip.y);
    let r = report(qp, &xu, &yu, total, SolverStatus::Optimal);
    (r.primal_residual <= tol && r.dual_residual <= tol).then_some(QpSolution { x: xu, y: yu, report: r })
}

pub(super) fn solve(qp: &QuadraticProgram, cfg: &SolverConfig, warm: Option<&WarmStart>) -> QpSolution {
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let s = equilibrate(qp, cfg.scaling_iters);
    let bw = bandwidth(&s.p, &s.c);

    let mut rho = cfg.rho.clamp(RHO_MIN, RHO_MAX);
    let (rho_vec, chol) = loop {
        let rho_vec = Admm::rho_vector(&s, rho);
        if let Some(c) = factor(&s.p, &s.c, cfg.sigma, &rho_vec, bw) {
            break (rho_vec, c);
        }
        // σ > 0 makes the matrix definite in exact arithmetic; a larger
        // penalty usually gets past roundoff trouble.
        rho *= 10.0;
        if rho > RHO_MAX {
            let x = vec![0.0; n];
            let y = vec![0.0; m];
            let r = report(qp, &x, &y, 0, SolverStatus::MaxIter);
            return QpSolution { x, y, report: r };
        }
    };
    let (x, y) = match warm {
        Some(w) => (
            (0..n).map(|i| w.x[i] / s.d[i]).collect::<Vec<_>>(),
            (0..m).map(|k| w.y[k] * s.cost / s.e[k]).collect::<Vec<_>>(),
        ),
        None => (vec![0.0; n], vec![0.0; m]),
    };
    let mut z = vec![0.0; m];
    s.c.mul_vec(&x, &mut z);
    for k in 0..m {
        z[k] = z[k].clamp(s.l[k], s.u[k]);
    }
    let mut admm = Admm { s: &s, cfg, n, m, bw, rho, rho_vec, chol, x, z, y: y.clone(), y_prev: y };

    if cfg.polish && warm.is_some() {
        if let Some(sol) = try_polish(qp, &s, (&admm.x, &admm.z, &admm.y), cfg.tol, 0) {
            return sol;
        }
    }

    let mut eps = if cfg.polish { FIRST_POLISH_EPS.max(cfg.tol) } else { cfg.tol };
    let mut rescued = false;
    for iter in 1..=cfg.max_iter {
        admm.step();
        if iter % CHECK_EVERY != 0 && iter != cfg.max_iter {
            continue;
        }
        let res = admm.residuals();
        let converged = res.converged(eps);
        if converged && cfg.polish {
            if let Some(sol) = try_polish(qp, &s, (&admm.x, &admm.z, &admm.y), cfg.tol, iter) {
                return sol;
            }
        }
        if cfg.polish && !rescued && (converged || iter >= RESCUE_AFTER) {
            rescued = true;
            if let Some(sol) = rescue(qp, &s, bw, &admm.x, cfg.tol, iter) {
                return sol;
            }
        }
        if converged {
            let (xu, yu) = unscale(&s, &admm.x, &admm.y);
            let r = report(qp, &xu, &yu, iter, SolverStatus::Optimal);
            if r.primal_residual <= cfg.tol && r.dual_residual <= cfg.tol {
                return QpSolution { x: xu, y: yu, report: r };
            }
            eps = (eps * 0.1).max(cfg.tol * 1e-3);
        }
        if admm.primal_infeasible() {
            let (xu, yu) = unscale(&s, &admm.x, &admm.y);
            let r = report(qp, &xu, &yu, iter, SolverStatus::Infeasible);
            return QpSolution { x: xu, y: yu, report: r };
        }
        if cfg.adaptive_rho && iter % ADAPT_EVERY == 0 {
            let ratio = ((res.prim_s / res.prim_norm_s.max(1e-30))
                / (res.dual_s / res.dual_norm_s.max(1e-30)).max(1e-30))
            .sqrt();
            let new_rho = (admm.rho * ratio).clamp(RHO_MIN, RHO_MAX);
            if ratio.is_finite() && (new_rho > 5.0 * admm.rho || new_rho < 0.2 * admm.rho) {
                admm.refactor(new_rho);
            }
        }
    }
    if cfg.polish {
        if let Some(sol) = try_polish(qp, &s, (&admm.x, &admm.z, &admm.y), cfg.tol, cfg.max_iter) {
            return sol;
        }
    }
    let (xu, yu) = unscale(&s, &admm.x, &admm.y);
    let r = report(qp, &xu, &yu, cfg.max_iter, SolverStatus::MaxIter);
    QpSolution { x: xu, y: yu, report: r }
}

fn unscale(s: &Scaled, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (x.iter().zip(&s.d).map(|(v, d)| v * d).collect(), y.iter().zip(&s.e).map(|(v, e)| v * e / s.cost).collect())
}
