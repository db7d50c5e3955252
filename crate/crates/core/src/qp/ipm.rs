//! Mehrotra predictor-corrector interior-point method on the equilibrated
//! problem, used when ADMM stalls. Each iteration factors
//! `P + Gᵀ W G + Eᵀ E / δ` with the same band structure as the ADMM system.

use super::admm::{factor, Scaled};

const MAX_ITER: usize = 100;
const STEP_FRACTION: f64 = 0.99;
const EQ_REG: f64 = 1e-10;
const PRIMAL_REG: f64 = 1e-12;

/// One side of a row: `sign · (C x)ᵢ ≥ bound`.
struct Side {
    row: usize,
    sign: f64,
    bound: f64,
}

pub(super) struct IpmPoint {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: usize,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// Largest step in (0, 1] keeping v + α dv > 0, shortened by the boundary fraction.
fn step_to_boundary(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha: f64 = 1.0;
    for (a, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            alpha = alpha.min(-STEP_FRACTION * a / d);
        }
    }
    alpha
}

pub(super) fn interior_point(s: &Scaled, bw: usize, x0: &[f64], tol: f64) -> Option<IpmPoint> {
    let n = s.p.nrows();
    let m = s.c.nrows();
    let mut sides = Vec::new();
    let mut eq_rows = Vec::new();
    for k in 0..m {
        if s.l[k] == s.u[k] {
            eq_rows.push(k);
            continue;
        }
        if s.l[k] > f64::NEG_INFINITY {
            sides.push(Side { row: k, sign: 1.0, bound: s.l[k] });
        }
        if s.u[k] < f64::INFINITY {
            sides.push(Side { row: k, sign: -1.0, bound: -s.u[k] });
        }
    }
    let ns = sides.len();

    let mut x = x0.to_vec();
    let mut cx = vec![0.0; m];
    s.c.mul_vec(&x, &mut cx);
    let mut sl: Vec<f64> = sides.iter().map(|sd| (sd.sign * cx[sd.row] - sd.bound).max(1.0)).collect();
    let mut lam = vec![1.0; ns];
    let mut nu = vec![0.0; m];

    let mut px = vec![0.0; n];
    let mut ct = vec![0.0; n];
    let mut best: Option<(f64, IpmPoint)> = None;
    for it in 1..=MAX_ITER {
        s.c.mul_vec(&x, &mut cx);
        s.p.mul_vec(&x, &mut px);
        // multipliers in the solver's convention: P x + a + Cᵀ y = 0
        let mut y = vec![0.0; m];
        for (j, sd) in sides.iter().enumerate() {
            y[sd.row] -= sd.sign * lam[j];
        }
        for &k in &eq_rows {
            y[k] -= nu[k];
        }
        s.c.mul_t_vec(&y, &mut ct);
        let rd: Vec<f64> = (0..n).map(|i| px[i] + s.a[i] + ct[i]).collect();
        let rg: Vec<f64> = sides.iter().zip(&sl).map(|(sd, sv)| sd.sign * cx[sd.row] - sv - sd.bound).collect();
        let re: Vec<f64> = eq_rows.iter().map(|&k| cx[k] - s.l[k]).collect();
        let mu = if ns > 0 { sl.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>() / ns as f64 } else { 0.0 };

        let merit = (max_abs(&rd) / (1.0 + max_abs(&s.a))).max(max_abs(&rg)).max(max_abs(&re)).max(mu);
        if best.as_ref().is_none_or(|b: &(f64, IpmPoint)| merit < b.0) {
            best = Some((merit, IpmPoint { x: x.clone(), z: cx.clone(), y, iterations: it }));
        }
        if merit <= tol {
            break;
        }

        // weights of the condensed system
        let mut w = vec![0.0; m];
        for (j, sd) in sides.iter().enumerate() {
            w[sd.row] += lam[j] / sl[j];
        }
        for &k in &eq_rows {
            w[k] = 1.0 / EQ_REG;
        }
        // the condensed system degrades as μ → 0; stop with the best point
        let Some(chol) = factor(&s.p, &s.c, PRIMAL_REG, &w, bw) else {
            break;
        };

        let solve = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            // rhs = −r_d − Gᵀ(W r_g + S⁻¹ r_c) − Eᵀ r_e / δ
            let mut row_rhs = vec![0.0; m];
            for (j, sd) in sides.iter().enumerate() {
                row_rhs[sd.row] += sd.sign * (lam[j] / sl[j] * rg[j] + rc[j] / sl[j]);
            }
            for (e, &k) in eq_rows.iter().enumerate() {
                row_rhs[k] = re[e] / EQ_REG;
            }
            let mut rhs = vec![0.0; n];
            s.c.mul_t_vec(&row_rhs, &mut rhs);
            for i in 0..n {
                rhs[i] = -rd[i] - rhs[i];
            }
            chol.solve_in_place(&mut rhs);
            let dx = rhs;
            let mut cdx = vec![0.0; m];
            s.c.mul_vec(&dx, &mut cdx);
            let mut dlam = vec![0.0; ns];
            let mut ds = vec![0.0; ns];
            for (j, sd) in sides.iter().enumerate() {
                let gdx = sd.sign * cdx[sd.row];
                dlam[j] = -(lam[j] / sl[j]) * (gdx + rg[j]) - rc[j] / sl[j];
                ds[j] = gdx + rg[j];
            }
            let mut dnu = vec![0.0; m];
            for (e, &k) in eq_rows.iter().enumerate() {
                dnu[k] = -(cdx[k] + re[e]) / EQ_REG;
            }
            (dx, ds, dlam, dnu)
        };

        // predictor
        let rc_aff: Vec<f64> = sl.iter().zip(&lam).map(|(a, b)| a * b).collect();
        let (_, ds_a, dl_a, _) = solve(&rc_aff);
        let alpha_aff = step_to_boundary(&sl, &ds_a).min(step_to_boundary(&lam, &dl_a)) / STEP_FRACTION;
        let alpha_aff = alpha_aff.min(1.0);
        let mu_aff = if ns > 0 {
            (0..ns).map(|j| (sl[j] + alpha_aff * ds_a[j]) * (lam[j] + alpha_aff * dl_a[j])).sum::<f64>() / ns as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };

        // corrector
        let rc: Vec<f64> = (0..ns).map(|j| sl[j] * lam[j] + ds_a[j] * dl_a[j] - sigma * mu).collect();
        let (dx, ds, dl, dnu) = solve(&rc);
        let alpha = step_to_boundary(&sl, &ds).min(step_to_boundary(&lam, &dl));
        for i in 0..n {
            x[i] += alpha * dx[i];
        }
        for j in 0..ns {
            sl[j] = (sl[j] + alpha * ds[j]).max(1e-300);
            lam[j] = (lam[j] + alpha * dl[j]).max(1e-300);
        }
        for &k in &eq_rows {
            nu[k] += alpha * dnu[k];
        }
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    best.map(|b| b.1)
}
