//! Grenander's estimator of a non-increasing density.
//!
//! On the quantile side it is the greatest convex minorant of the empirical
//! quantile, pinned to 0 at `u = 0`. Its support ends at the largest data
//! value, whereas the Wasserstein projection usually reaches beyond it.

use crate::density::{DensityModel, Segment, SegmentShape};
use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, Partition};
use crate::quantile::{PiecewiseLinear, Quantile};

/// Lower convex hull of points with strictly increasing `u`; collinear
/// interior points are dropped.
pub fn gcm(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (index, p) in points.iter().enumerate() {
        if !p.0.is_finite() || !p.1.is_finite() {
            return Err(Error::NonFinite { index, value: if p.0.is_finite() { p.1 } else { p.0 } });
        }
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::invalid("points must have strictly increasing u"));
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b unless it lies strictly below the chord a-p
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    Ok(hull)
}

fn check_positive(m: &EmpiricalMeasure) -> Result<()> {
    if m.min() <= 0.0 {
        return Err(Error::NonPositiveData(m.min()));
    }
    Ok(())
}

/// Knots of the minorant: the pin `(0, 0)` and the corners `(Fᵢ, xᵢ)` where
/// the left-continuous empirical quantile jumps, ending at `(1, xₙ)`.
fn grenander_knots(m: &EmpiricalMeasure) -> Result<Vec<(f64, f64)>> {
    check_positive(m)?;
    let xs = m.values();
    let cum = m.cumulative_weights();
    let mut pts = Vec::with_capacity(xs.len() + 1);
    pts.push((0.0, 0.0));
    pts.extend(cum.iter().zip(xs).map(|(&f, &x)| (f, x)));
    gcm(&pts)
}

/// Quantile function of Grenander's estimator.
pub fn grenander_quantile(m: &EmpiricalMeasure) -> Result<Quantile> {
    let hull = grenander_knots(m)?;
    let partition = Partition::new(hull.iter().map(|p| p.0).collect())?;
    Ok(Quantile::Linear(PiecewiseLinear::new(partition, hull.iter().map(|p| p.1).collect())?))
}

/// Grenander's density: the reciprocal slopes of the minorant.
pub fn grenander(m: &EmpiricalMeasure) -> Result<DensityModel> {
    let hull = grenander_knots(m)?;
    let mut segments = Vec::with_capacity(hull.len() - 1);
    let mut atoms = Vec::new();
    for w in hull.windows(2) {
        let (du, dx) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
        if dx > 0.0 {
            segments.push(Segment { lo: w[0].1, hi: w[1].1, shape: SegmentShape::Constant { height: du / dx } });
        } else {
            atoms.push((w[0].1, du));
        }
    }
    Ok(DensityModel { segments, atoms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn hull_examples() {
        let line = [(0.0, 0.0), (0.25, 0.5), (1.0, 2.0)];
        assert_eq!(gcm(&line).unwrap(), vec![(0.0, 0.0), (1.0, 2.0)]);
        assert_eq!(gcm(&[(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]).unwrap(), vec![(0.0, 0.0), (1.0, 1.0)]);
        // staircase of δ₁ pinned at the origin
        let stairs = [(0.0, 0.0), (1.0, 1.0)];
        assert_eq!(gcm(&stairs).unwrap(), stairs.to_vec());
        assert!(gcm(&[(0.5, 0.0), (0.2, 1.0)]).is_err());
        assert!(gcm(&[]).is_err());
    }

    // Piecewise-linear interpolation of hull knots.
    fn interp(hull: &[(f64, f64)], u: f64) -> f64 {
        let j = hull.partition_point(|p| p.0 < u).clamp(1, hull.len() - 1);
        let (a, b) = (hull[j - 1], hull[j]);
        a.1 + (b.1 - a.1) * (u - a.0) / (b.0 - a.0)
    }

    #[test]
    fn hull_is_convex_minorant_and_idempotent() {
        let mut rng = crate::quantile::rng_from_seed(31);
        for _ in 0..50 {
            let n = rng.random_range(2..30);
            let mut us: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            us.sort_by(f64::total_cmp);
            us.dedup();
            let pts: Vec<(f64, f64)> = us.iter().map(|&u| (u, rng.random::<f64>() * 3.0)).collect();
            let hull = gcm(&pts).unwrap();
            assert_eq!(hull.first(), pts.first());
            assert_eq!(hull.last(), pts.last());
            for p in &pts {
                assert!(interp(&hull, p.0) <= p.1 + 1e-12);
            }
            let slopes: Vec<f64> = hull.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
            assert!(slopes.windows(2).all(|s| s[1] >= s[0]));
            assert_eq!(gcm(&hull).unwrap(), hull);
        }
    }

    #[test]
    fn grenander_examples() {
        let d = grenander(&EmpiricalMeasure::point_mass(1.0).unwrap()).unwrap();
        assert_eq!(d.segments.len(), 1);
        assert_eq!((d.segments[0].lo, d.segments[0].hi), (0.0, 1.0));
        assert_eq!(d.pdf(0.5), 1.0);

        let d = grenander(&EmpiricalMeasure::from_values(&[1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(d.segments.len(), 1);
        assert_eq!(d.support(), (0.0, 2.0));
        assert_eq!(d.pdf(1.5), 0.5);

        let d3 = grenander(&EmpiricalMeasure::from_values(&[1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(d3, grenander(&EmpiricalMeasure::point_mass(1.0).unwrap()).unwrap());

        assert!(grenander(&EmpiricalMeasure::from_values(&[0.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn grenander_is_monotone_with_support_at_max() {
        let mut rng = crate::quantile::rng_from_seed(37);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..40).map(|_| -rng.random::<f64>().ln() + 1e-6).collect();
            let m = EmpiricalMeasure::from_values(&xs).unwrap();
            let d = grenander(&m).unwrap();
            d.check_monotone(1e-12).unwrap();
            assert_eq!(d.support().1, m.max());
            let q = grenander_quantile(&m).unwrap();
            assert_eq!(q.eval(1.0), m.max());
            // the minorant never exceeds the empirical quantile
            for j in 1..200 {
                let u = j as f64 / 200.0;
                assert!(q.eval(u) <= m.quantile(u).unwrap() + 1e-12);
            }
        }
    }
}
