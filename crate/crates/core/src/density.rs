//! Densities extracted from fitted quantile functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional form of a density on one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentShape {
    Constant {
        height: f64,
    },
    /// `f(x) = exp(alpha + beta (x − lo))`, anchored at the left end of the
    /// segment so that `alpha` stays small for data far from the origin.
    LogAffine {
        alpha: f64,
        beta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    #[serde(flatten)]
    pub shape: SegmentShape,
}

impl Segment {
    pub fn pdf(&self, x: f64) -> f64 {
        match self.shape {
            SegmentShape::Constant { height } => height,
            SegmentShape::LogAffine { alpha, beta } => (alpha + beta * (x - self.lo)).exp(),
        }
    }

    /// Density at the left and right ends.
    pub fn end_values(&self) -> (f64, f64) {
        (self.pdf(self.lo), self.pdf(self.hi))
    }

    pub fn mass(&self) -> f64 {
        let len = self.hi - self.lo;
        match self.shape {
            SegmentShape::Constant { height } => height * len,
            SegmentShape::LogAffine { alpha, beta } => {
                let t = beta * len;
                let ratio = if t.abs() < 1e-12 { 1.0 + 0.5 * t } else { t.exp_m1() / t };
                alpha.exp() * len * ratio
            }
        }
    }

    /// Log-slope; zero for constant pieces.
    pub fn log_slope(&self) -> f64 {
        match self.shape {
            SegmentShape::Constant { .. } => 0.0,
            SegmentShape::LogAffine { beta, .. } => beta,
        }
    }
}

/// Piecewise density on contiguous segments; `atoms` lists point masses
/// `(x, w)` that the density part does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<(f64, f64)>,
}

impl DensityModel {
    pub fn point_mass(x: f64) -> Self {
        Self { segments: Vec::new(), atoms: vec![(x, 1.0)] }
    }

    pub fn is_point_mass(&self) -> bool {
        self.segments.is_empty()
    }

    /// Closed support of the absolutely continuous part, or of the atoms when
    /// there is none.
    pub fn support(&self) -> (f64, f64) {
        match (self.segments.first(), self.segments.last()) {
            (Some(a), Some(b)) => (a.lo, b.hi),
            _ => {
                let lo = self.atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
                let hi = self.atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        }
    }

    /// Density at `x`; segments are half-open `(lo, hi]` except the first,
    /// which includes its left end.
    pub fn pdf(&self, x: f64) -> f64 {
        let Some(first) = self.segments.first() else {
            return 0.0;
        };
        if x < first.lo || x > self.segments.last().unwrap().hi {
            return 0.0;
        }
        let j = self.segments.partition_point(|s| s.hi < x).min(self.segments.len() - 1);
        self.segments[j].pdf(x)
    }

    pub fn total_mass(&self) -> f64 {
        self.segments.iter().map(Segment::mass).sum::<f64>() + self.atoms.iter().map(|a| a.1).sum::<f64>()
    }

    /// `n` equally spaced points across the support with the density there.
    pub fn plot_grid(&self, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.support();
        if n == 0 || !(hi > lo) {
            return Vec::new();
        }
        (0..n)
            .map(|j| {
                let x = if j + 1 == n { hi } else { lo + (hi - lo) * j as f64 / (n - 1).max(1) as f64 };
                (x, self.pdf(x))
            })
            .collect()
    }

    /// Checks the shape of a non-increasing density: contiguous constant
    /// pieces with non-increasing heights and unit mass within `tol`.
    pub fn check_monotone(&self, tol: f64) -> Result<()> {
        self.check_contiguous()?;
        let mut prev = f64::INFINITY;
        for (j, s) in self.segments.iter().enumerate() {
            let SegmentShape::Constant { height } = s.shape else {
                return Err(Error::invalid(format!("segment {j} is not constant")));
            };
            if !(height > 0.0) || height > prev {
                return Err(Error::invalid(format!("height {height} of segment {j} breaks monotonicity")));
            }
            prev = height;
        }
        self.check_mass(tol)
    }

    /// Checks the shape of a log-concave density: contiguous log-affine
    /// pieces that join continuously, non-increasing log-slopes, unit mass.
    pub fn check_logconcave(&self, tol: f64) -> Result<()> {
        self.check_contiguous()?;
        for (j, w) in self.segments.windows(2).enumerate() {
            let (_, left) = w[0].end_values();
            let (right, _) = w[1].end_values();
            if (left - right).abs() > 1e-9 * left.max(right).max(1.0) {
                return Err(Error::invalid(format!("density jumps at joint {j}: {left} vs {right}")));
            }
            let (b0, b1) = (w[0].log_slope(), w[1].log_slope());
            if b1 > b0 + 1e-9 * (1.0 + b0.abs().max(b1.abs())) {
                return Err(Error::invalid(format!("log-slope increases at joint {j}: {b0} then {b1}")));
            }
        }
        self.check_mass(tol)
    }

    fn check_contiguous(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("density has no segments"));
        }
        for (j, s) in self.segments.iter().enumerate() {
            if !(s.hi > s.lo) {
                return Err(Error::invalid(format!("segment {j} is empty")));
            }
        }
        for (j, w) in self.segments.windows(2).enumerate() {
            if w[0].hi != w[1].lo {
                return Err(Error::invalid(format!("gap between segments {j} and {}", j + 1)));
            }
        }
        Ok(())
    }

    fn check_mass(&self, tol: f64) -> Result<()> {
        let mass = self.total_mass();
        if (mass - 1.0).abs() > tol {
            return Err(Error::invalid(format!("total mass {mass} differs from 1")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(lo: f64, hi: f64, height: f64) -> Segment {
        Segment { lo, hi, shape: SegmentShape::Constant { height } }
    }

    #[test]
    fn uniform_density() {
        let d = DensityModel { segments: vec![constant(0.0, 1.5, 2.0 / 3.0)], atoms: vec![] };
        assert!((d.total_mass() - 1.0).abs() < 1e-15);
        assert_eq!(d.support(), (0.0, 1.5));
        assert_eq!(d.pdf(2.0), 0.0);
        assert!((d.pdf(0.7) - 2.0 / 3.0).abs() < 1e-15);
        d.check_monotone(1e-10).unwrap();
    }

    #[test]
    fn log_affine_mass() {
        // e^x on (0, ln 2) has mass 1
        let s = Segment { lo: 0.0, hi: 2f64.ln(), shape: SegmentShape::LogAffine { alpha: 0.0, beta: 1.0 } };
        assert!((s.mass() - 1.0).abs() < 1e-15);
        assert!((s.end_values().1 - 2.0).abs() < 1e-14);
        let flat = Segment { lo: 1.0, hi: 3.0, shape: SegmentShape::LogAffine { alpha: -(2f64.ln()), beta: 0.0 } };
        assert!((flat.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_checks_reject_violations() {
        let up = DensityModel { segments: vec![constant(0.0, 0.5, 0.5), constant(0.5, 1.0, 1.5)], atoms: vec![] };
        assert!(up.check_monotone(1e-10).is_err());
        let gap = DensityModel { segments: vec![constant(0.0, 0.5, 1.0), constant(0.6, 1.1, 1.0)], atoms: vec![] };
        assert!(gap.check_monotone(1e-10).is_err());
        let convex = DensityModel {
            segments: vec![
                Segment { lo: 0.0, hi: 1.0, shape: SegmentShape::LogAffine { alpha: 0.0, beta: -1.0 } },
                Segment { lo: 1.0, hi: 2.0, shape: SegmentShape::LogAffine { alpha: -1.0, beta: 1.0 } },
            ],
            atoms: vec![],
        };
        assert!(convex.check_logconcave(1.0).is_err());
    }

    #[test]
    fn plot_grid_spans_support() {
        let d =
            DensityModel { segments: vec![constant(0.0, 0.25, 2.0), constant(0.25, 1.0, 2.0 / 3.0)], atoms: vec![] };
        let g = d.plot_grid(512);
        assert_eq!(g.len(), 512);
        assert_eq!(g[0].0, 0.0);
        assert_eq!(g[511].0, 1.0);
        assert!(g.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 <= w[0].1));
    }
}
