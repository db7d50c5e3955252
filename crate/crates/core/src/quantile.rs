//! Quantile-function representations.
//!
//! On the real line a probability measure is identified with its quantile
//! function, and every computation in this crate happens on that side:
//! distances are L^p norms on `(0, 1)`, sampling is `Q(U)` for uniform `U`
//! and affine maps act as `a + b Q(u)` (reflected when `b < 0`).

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::logconcave::q_knots;
use crate::measures::{Partition, StepQuantile};
use crate::numerics::{integrate_adaptive, moments_with_derivatives, phi_unchecked};

/// Continuous piecewise-affine quantile with values `q` at the partition knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub partition: Partition,
    pub q: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(partition: Partition, q: Vec<f64>) -> Result<Self> {
        if q.len() != partition.knots().len() {
            return Err(Error::LengthMismatch { expected: partition.knots().len(), found: q.len() });
        }
        if let Some((index, &value)) = q.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { partition, q })
    }

    pub fn eval(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.partition.locate(u) + 1;
        let knots = self.partition.knots();
        let (lo, hi) = (knots[i - 1], knots[i]);
        let t = (u - lo) / (hi - lo);
        self.q[i - 1] + t * (self.q[i] - self.q[i - 1])
    }

    pub fn mean(&self) -> f64 {
        self.partition.cells().zip(self.q.windows(2)).map(|((lo, hi), w)| 0.5 * (hi - lo) * (w[0] + w[1])).sum()
    }
}

/// Quantile `c + ∫₀ᵘ 1/h(s) ds` with `h` positive, piecewise affine on the
/// partition; `q` caches the knot values.
#[derive(Debug, Clone, PartialEq)]
pub struct LogConcaveQuantile {
    pub partition: Partition,
    pub c: f64,
    pub h: Vec<f64>,
    pub q: Vec<f64>,
}

impl LogConcaveQuantile {
    pub fn new(partition: Partition, c: f64, h: Vec<f64>) -> Result<Self> {
        let q = q_knots(c, &h, &partition)?;
        Ok(Self { partition, c, h, q })
    }

    pub fn eval(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.partition.locate(u) + 1;
        let lo = self.partition.knots()[i - 1];
        let du = self.partition.width(i);
        let delta = self.h[i] / self.h[i - 1] - 1.0;
        let s = u - lo;
        self.q[i - 1] + s / self.h[i - 1] * phi_unchecked(delta * s / du)
    }

    pub fn mean(&self) -> f64 {
        (1..=self.partition.num_cells())
            .map(|i| {
                let du = self.partition.width(i);
                let delta = self.h[i] / self.h[i - 1] - 1.0;
                let m = moments_with_derivatives(delta);
                du * self.q[i - 1] + du * du / self.h[i - 1] * m.a
            })
            .sum()
    }
}

/// A quantile given by an arbitrary function, e.g. a reference distribution.
#[derive(Clone)]
pub struct FunctionQuantile {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl FunctionQuantile {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.f)(u)
    }
}

impl fmt::Debug for FunctionQuantile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionQuantile").field("name", &self.name).finish()
    }
}

/// Any quantile function the crate can evaluate, integrate and sample.
#[derive(Debug, Clone)]
pub enum Quantile {
    Step(StepQuantile),
    Linear(PiecewiseLinear),
    LogConcave(LogConcaveQuantile),
    Function(FunctionQuantile),
}

/// Restriction of a quantile to a sub-interval of one of its cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum CellShape {
    Constant(f64),
    /// Values at the two ends of the sub-interval.
    Affine(f64, f64),
    Curved,
}

impl Quantile {
    pub fn constant(x: f64) -> Self {
        Quantile::Step(StepQuantile { partition: Partition::uniform(1).unwrap(), y: vec![x] })
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Quantile::Step(s) => s.eval(u),
            Quantile::Linear(l) => l.eval(u),
            Quantile::LogConcave(l) => l.eval(u),
            Quantile::Function(f) => f.eval(u),
        }
    }

    /// Knots at which the representation changes form, including 0 and 1.
    pub fn knots(&self) -> &[f64] {
        match self {
            Quantile::Step(s) => s.partition.knots(),
            Quantile::Linear(l) => l.partition.knots(),
            Quantile::LogConcave(l) => l.partition.knots(),
            Quantile::Function(_) => &[0.0, 1.0],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Quantile::Step(s) => s.mean(),
            Quantile::Linear(l) => l.mean(),
            Quantile::LogConcave(l) => l.mean(),
            Quantile::Function(f) => integrate_adaptive(|u| f.eval(u), 0.0, 1.0, 1e-12),
        }
    }

    pub(crate) fn shape_on(&self, lo: f64, hi: f64) -> CellShape {
        let mid = 0.5 * (lo + hi);
        match self {
            Quantile::Step(s) => CellShape::Constant(s.eval(mid)),
            Quantile::Linear(l) => CellShape::Affine(l.eval(lo), l.eval(hi)),
            Quantile::LogConcave(l) => {
                let i = l.partition.locate(mid) + 1;
                if l.h[i] == l.h[i - 1] {
                    CellShape::Affine(l.eval(lo), l.eval(hi))
                } else {
                    CellShape::Curved
                }
            }
            Quantile::Function(_) => CellShape::Curved,
        }
    }

    pub(crate) fn is_function(&self) -> bool {
        matches!(self, Quantile::Function(_))
    }

    /// Quantile of the pushforward under `x ↦ a + b x`.
    ///
    /// For `b < 0` the parameter axis is reflected: `a + b Q(1 − u)`.
    pub fn pushforward_affine(&self, a: f64, b: f64) -> Result<Quantile> {
        if b == 0.0 || !b.is_finite() || !a.is_finite() {
            return Err(Error::invalid("affine map needs finite a and non-zero finite b"));
        }
        let map = |x: f64| a + b * x;
        Ok(match self {
            Quantile::Step(s) => {
                if b > 0.0 {
                    Quantile::Step(StepQuantile {
                        partition: s.partition.clone(),
                        y: s.y.iter().map(|&y| map(y)).collect(),
                    })
                } else {
                    Quantile::Step(StepQuantile {
                        partition: s.partition.reflected(),
                        y: s.y.iter().rev().map(|&y| map(y)).collect(),
                    })
                }
            }
            Quantile::Linear(l) => {
                if b > 0.0 {
                    Quantile::Linear(PiecewiseLinear {
                        partition: l.partition.clone(),
                        q: l.q.iter().map(|&q| map(q)).collect(),
                    })
                } else {
                    Quantile::Linear(PiecewiseLinear {
                        partition: l.partition.reflected(),
                        q: l.q.iter().rev().map(|&q| map(q)).collect(),
                    })
                }
            }
            Quantile::LogConcave(l) => {
                let scale = b.abs();
                if b > 0.0 {
                    let h = l.h.iter().map(|h| h / scale).collect();
                    Quantile::LogConcave(LogConcaveQuantile::new(l.partition.clone(), map(l.c), h)?)
                } else {
                    let h = l.h.iter().rev().map(|h| h / scale).collect();
                    let c = map(*l.q.last().unwrap());
                    Quantile::LogConcave(LogConcaveQuantile::new(l.partition.reflected(), c, h)?)
                }
            }
            Quantile::Function(f) => {
                let inner = f.clone();
                let name = format!("{a} + {b} * {}", f.name());
                if b > 0.0 {
                    Quantile::Function(FunctionQuantile::new(name, move |u| a + b * inner.eval(u)))
                } else {
                    Quantile::Function(FunctionQuantile::new(name, move |u| a + b * inner.eval(1.0 - u)))
                }
            }
        })
    }
}

impl From<StepQuantile> for Quantile {
    fn from(s: StepQuantile) -> Self {
        Quantile::Step(s)
    }
}

impl From<PiecewiseLinear> for Quantile {
    fn from(l: PiecewiseLinear) -> Self {
        Quantile::Linear(l)
    }
}

impl From<LogConcaveQuantile> for Quantile {
    fn from(l: LogConcaveQuantile) -> Self {
        Quantile::LogConcave(l)
    }
}

/// The seedable generator used for all sampling (ChaCha8 seeded from a `u64`).
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on the open interval `(0, 1)`.
pub(crate) fn open_uniform(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws `n` values `Q(Uᵢ)` with `Uᵢ` uniform on `(0, 1)`; deterministic in `seed`.
pub fn sample(q: &Quantile, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| q.eval(open_uniform(&mut rng))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity() -> Quantile {
        Quantile::Linear(PiecewiseLinear::new(Partition::uniform(1).unwrap(), vec![0.0, 1.0]).unwrap())
    }

    #[test]
    fn constant_samples() {
        let s = sample(&Quantile::constant(2.5), 100, 1).unwrap();
        assert!(s.iter().all(|&x| x == 2.5));
        assert!(sample(&Quantile::constant(2.5), 0, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample(&identity(), 50, 42).unwrap();
        let b = sample(&identity(), 50, 42).unwrap();
        let c = sample(&identity(), 50, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_sample_passes_ks() {
        let mut s = sample(&identity(), 100_000, 7).unwrap();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let ks = s
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn affine_examples() {
        let id = identity();
        let same = id.pushforward_affine(0.0, 1.0).unwrap();
        assert_eq!(same.eval(0.3), 0.3);

        let q = Quantile::Linear(PiecewiseLinear::new(Partition::uniform(1).unwrap(), vec![0.0, 1.5]).unwrap());
        let q2 = q.pushforward_affine(0.0, 2.0).unwrap();
        for u in [0.0, 0.25, 0.7, 1.0] {
            assert!((q2.eval(u) - 3.0 * u).abs() < 1e-15);
        }

        let r = id.pushforward_affine(0.0, -1.0).unwrap();
        for u in [0.0, 0.25, 0.7, 1.0] {
            assert!((r.eval(u) - (u - 1.0)).abs() < 1e-15);
        }
        assert!(id.pushforward_affine(1.0, 0.0).is_err());
    }

    #[test]
    fn affine_reflection_of_step() {
        let s = StepQuantile::new(Partition::new(vec![0.0, 0.3, 1.0]).unwrap(), vec![1.0, 2.0]).unwrap();
        let r = Quantile::Step(s).pushforward_affine(1.0, -1.0).unwrap();
        // −X + 1 has atoms −1 (weight 0.7) and 0 (weight 0.3)
        assert_eq!(r.eval(0.5), -1.0);
        assert_eq!(r.eval(0.8), 0.0);
        assert_eq!(r.knots(), &[0.0, 0.7, 1.0]);
    }

    #[test]
    fn logconcave_mean_matches_quadrature() {
        let p = Partition::new(vec![0.0, 0.2, 0.7, 1.0]).unwrap();
        let l = LogConcaveQuantile::new(p, -0.4, vec![0.3, 1.1, 0.9, 0.2]).unwrap();
        let m = l.mean();
        let quad = integrate_adaptive(|u| l.eval(u), 0.0, 1.0, 1e-14);
        assert!((m - quad).abs() < 1e-12);
    }
}
