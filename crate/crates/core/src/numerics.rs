//! Special functions of the log-concave parametrization and quadrature rules.
//!
//! `Φ(η) = log(1 + η)/η` converts reciprocal-slope knots into quantile
//! increments. The cell integrals of the squared quantile error need the
//! moments
//!
//! ```text
//! A(δ) = ∫₀¹ λ Φ(δλ) dλ = ((1 + δ) ℓ − δ) / δ²
//! B(δ) = ∫₀¹ λ² Φ(δλ)² dλ = ((1 + δ) ℓ² − 2 (1 + δ) ℓ + 2δ) / δ³,   ℓ = log(1 + δ)
//! ```
//!
//! The closed forms cancel catastrophically near zero, so all four functions
//! (and their derivatives) switch to a truncated power series for small
//! arguments.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::LazyLock;

use crate::error::{Error, Result};

/// Below this magnitude `Φ` itself is evaluated by series.
const PHI_SERIES_CUTOFF: f64 = 1e-3;
/// Below this magnitude the moments and all derivatives use series.
const MOMENT_SERIES_CUTOFF: f64 = 0.1;
const SERIES_TERMS: usize = 24;

struct SeriesCoefficients {
    // Φ(η) = Σ phi[k] η^k
    phi: [f64; SERIES_TERMS],
    // Φ(η)² = Σ phi_sq[k] η^k
    phi_sq: [f64; SERIES_TERMS],
}

static SERIES: LazyLock<SeriesCoefficients> = LazyLock::new(|| {
    let mut phi = [0.0; SERIES_TERMS];
    for (k, c) in phi.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *c = sign / (k as f64 + 1.0);
    }
    let mut phi_sq = [0.0; SERIES_TERMS];
    for (n, c) in phi_sq.iter_mut().enumerate() {
        *c = (0..=n).map(|j| phi[j] * phi[n - j]).sum();
    }
    SeriesCoefficients { phi, phi_sq }
});

// Σ c_k x^k / (k + shift) and its derivative.
fn series_with_derivative(coef: &[f64], shift: f64, x: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut deriv = 0.0;
    for k in (0..coef.len()).rev() {
        let ck = coef[k] / (k as f64 + shift);
        value = value * x + ck;
        if k > 0 {
            deriv = deriv * x + k as f64 * ck;
        }
    }
    (value, deriv)
}

fn check_domain(x: f64) -> Result<()> {
    if x > -1.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("argument {x} must be finite and greater than -1")))
    }
}

/// `Φ(η) = log(1 + η)/η`, with `Φ(0) = 1`.
pub fn phi(eta: f64) -> Result<f64> {
    check_domain(eta)?;
    Ok(phi_unchecked(eta))
}

pub(crate) fn phi_unchecked(eta: f64) -> f64 {
    if eta.abs() < PHI_SERIES_CUTOFF {
        let c = &SERIES.phi;
        // terms through η⁵
        c[0] + eta * (c[1] + eta * (c[2] + eta * (c[3] + eta * (c[4] + eta * c[5]))))
    } else {
        eta.ln_1p() / eta
    }
}

/// `(Φ(η), Φ′(η))`.
pub(crate) fn phi_with_derivative(eta: f64) -> (f64, f64) {
    if eta.abs() < MOMENT_SERIES_CUTOFF {
        let c = &SERIES.phi;
        let (mut value, mut deriv) = (0.0, 0.0);
        for k in (0..c.len()).rev() {
            value = value * eta + c[k];
            if k > 0 {
                deriv = deriv * eta + k as f64 * c[k];
            }
        }
        (value, deriv)
    } else {
        phi_closed(eta)
    }
}

fn phi_closed(eta: f64) -> (f64, f64) {
    let l = eta.ln_1p();
    (l / eta, (eta / (1.0 + eta) - l) / (eta * eta))
}

/// The moments `(A(δ), B(δ))` of the cell integrals.
pub fn phi_moments(delta: f64) -> Result<(f64, f64)> {
    check_domain(delta)?;
    let m = moments_with_derivatives(delta);
    Ok((m.a, m.b))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Moments {
    pub a: f64,
    pub da: f64,
    pub b: f64,
    pub db: f64,
}

pub(crate) fn moments_with_derivatives(delta: f64) -> Moments {
    if delta.abs() < MOMENT_SERIES_CUTOFF {
        let (a, da) = series_with_derivative(&SERIES.phi, 2.0, delta);
        let (b, db) = series_with_derivative(&SERIES.phi_sq, 3.0, delta);
        Moments { a, da, b, db }
    } else {
        moments_closed(delta)
    }
}

fn moments_closed(d: f64) -> Moments {
    let l = d.ln_1p();
    let d2 = d * d;
    let d3 = d2 * d;
    let a = ((1.0 + d) * l - d) / d2;
    let da = (2.0 * d - (2.0 + d) * l) / d3;
    let nb = (1.0 + d) * l * l - 2.0 * (1.0 + d) * l + 2.0 * d;
    let b = nb / d3;
    let db = (d * l * l - 3.0 * nb) / (d3 * d);
    Moments { a, da, b, db }
}

/// Gauss–Legendre nodes and weights of order 16 mapped to `[0, 1]`.
pub static GAUSS_LEGENDRE_16: LazyLock<[(f64, f64); 16]> = LazyLock::new(gauss_legendre::<16>);

fn gauss_legendre<const N: usize>() -> [(f64, f64); N] {
    let mut out = [(0.0, 0.0); N];
    let n = N as f64;
    for (i, slot) in out.iter_mut().enumerate() {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=N {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        *slot = (0.5 * (1.0 - x), 0.5 * w);
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Fixed-order Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre_16(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let h = b - a;
    GAUSS_LEGENDRE_16.iter().map(|&(t, w)| w * f(a + h * t)).sum::<f64>() * h
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn kronrod15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature with absolute tolerance.
///
/// Nodes never touch the endpoints, so integrable endpoint singularities are
/// handled by repeated bisection.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    const MAX_PIECES: usize = 4000;
    let (value, err) = kronrod15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value, err });
    let mut total_err = err;
    while total_err > abs_tol && heap.len() < MAX_PIECES {
        let mut worst = heap.pop().unwrap();
        if worst.err == 0.0 {
            heap.push(worst);
            break;
        }
        // below about a thousand ulps the Kronrod nodes would round onto
        // the endpoints, where the integrand may be infinite
        let floor = 1024.0 * f64::EPSILON * worst.a.abs().max(worst.b.abs());
        if worst.b - worst.a <= floor {
            total_err -= worst.err;
            worst.err = 0.0;
            heap.push(worst);
            continue;
        }
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = kronrod15(&f, worst.a, mid);
        let (v2, e2) = kronrod15(&f, mid, worst.b);
        total_err += e1 + e2 - worst.err;
        heap.push(Piece { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, err: e2 });
    }
    // Summing left to right makes the result independent of heap order.
    let mut pieces = heap.into_vec();
    pieces.sort_by(|p, q| p.a.total_cmp(&q.a));
    pieces.iter().map(|p| p.value).sum()
}
