//! Empirical measures, partitions of the unit interval and piecewise-constant
//! quantile functions.

use crate::error::{Error, Result};

/// Knots closer than this are treated as the same point of `[0, 1]`.
pub const KNOT_MERGE_TOL: f64 = 1e-14;

/// A discrete probability measure `Σ wᵢ δ_{xᵢ}` with strictly increasing atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    xs: Vec<f64>,
    ws: Vec<f64>,
    // cum[k] = w_0 + ... + w_k, with cum[last] == 1 exactly.
    cum: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds the measure from raw values and optional positive weights.
    ///
    /// Values are sorted, equal values are merged by summing their weights
    /// and the weights are normalized to one. Without weights every value
    /// gets unit weight.
    pub fn new(values: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(w) = weights {
            if w.len() != values.len() {
                return Err(Error::LengthMismatch { expected: values.len(), found: w.len() });
            }
        }
        let mut pairs = Vec::with_capacity(values.len());
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            let w = match weights {
                Some(w) => {
                    let wi = w[index];
                    if !wi.is_finite() {
                        return Err(Error::NonFinite { index, value: wi });
                    }
                    if wi <= 0.0 {
                        return Err(Error::NonPositiveWeight { index, value: wi });
                    }
                    wi
                }
                None => 1.0,
            };
            pairs.push((value, w));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut xs: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut raw: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            match xs.last() {
                Some(&last) if last == x => *raw.last_mut().unwrap() += w,
                _ => {
                    xs.push(x);
                    raw.push(w);
                }
            }
        }

        // Compensated prefix sums: with unit weights the partial sums are
        // integers, so cumulative weights come out as correctly rounded k/n.
        let mut prefix = Vec::with_capacity(raw.len());
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &w in &raw {
            let t = sum + w;
            if sum.abs() >= w.abs() {
                comp += (sum - t) + w;
            } else {
                comp += (w - t) + sum;
            }
            sum = t;
            prefix.push(sum + comp);
        }
        let total = sum + comp;
        let ws: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut cum: Vec<f64> = prefix.iter().map(|p| (p / total).min(1.0)).collect();
        *cum.last_mut().unwrap() = 1.0;
        Ok(Self { xs, ws, cum })
    }

    /// Uniform weights on the given values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(values, None)
    }

    pub fn point_mass(x: f64) -> Result<Self> {
        Self::new(&[x], None)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.xs
    }

    pub fn weights(&self) -> &[f64] {
        &self.ws
    }

    /// Cumulative weights; the last entry is exactly one.
    pub fn cumulative_weights(&self) -> &[f64] {
        &self.cum
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ws.iter().copied())
    }

    pub fn min(&self) -> f64 {
        self.xs[0]
    }

    pub fn max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(x, w)| x * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms().map(|(x, w)| w * (x - m) * (x - m)).sum()
    }

    /// True when the measure has a single atom.
    pub fn is_point_mass(&self) -> bool {
        self.xs.len() == 1
    }

    /// Left-continuous quantile `inf{x : μ((−∞, x]) ≥ u}` for `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!("quantile level {u} outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        let k = self.cum.partition_point(|&c| c < u);
        self.xs[k.min(self.xs.len() - 1)]
    }

    /// The quantile function as an exact step function on the cumulative
    /// weights.
    pub fn step_quantile(&self) -> StepQuantile {
        let mut u = Vec::with_capacity(self.cum.len() + 1);
        u.push(0.0);
        u.extend_from_slice(&self.cum);
        let u = dedup_knots(u);
        let partition = Partition { u };
        self.step_on(&partition)
    }

    /// Discretizes the quantile function on the union of the cumulative
    /// weights and the uniform grid `{j / k}`, so the result is exactly
    /// piecewise constant.
    pub fn discretize(&self, k: usize) -> Result<StepQuantile> {
        if k < 1 {
            return Err(Error::invalid("grid size must be at least 1"));
        }
        let mut u: Vec<f64> = Vec::with_capacity(self.cum.len() + k + 1);
        u.push(0.0);
        u.extend_from_slice(&self.cum[..self.cum.len() - 1]);
        u.extend((1..k).map(|j| j as f64 / k as f64));
        u.push(1.0);
        u.sort_by(f64::total_cmp);
        let partition = Partition { u: dedup_knots(u) };
        Ok(self.step_on(&partition))
    }

    /// Step values of the quantile at the midpoint of every cell of `partition`.
    pub fn step_on(&self, partition: &Partition) -> StepQuantile {
        let y = partition.cells().map(|(lo, hi)| self.quantile_unchecked(0.5 * (lo + hi))).collect();
        StepQuantile { partition: partition.clone(), y }
    }
}

/// Free-function form of [`EmpiricalMeasure::new`].
pub fn build_empirical(values: &[f64], weights: Option<&[f64]>) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::new(values, weights)
}

// Sorted input; keeps the first of any run of points closer than the merge
// tolerance and pins the endpoints to exactly 0 and 1.
fn dedup_knots(sorted: Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(sorted.len());
    for v in sorted {
        let v = v.clamp(0.0, 1.0);
        match out.last() {
            Some(&last) if v - last <= KNOT_MERGE_TOL => {}
            _ => out.push(v),
        }
    }
    out[0] = 0.0;
    let last = out.len() - 1;
    if last > 0 && out[last] >= 1.0 - KNOT_MERGE_TOL {
        out[last] = 1.0;
    } else {
        out.push(1.0);
    }
    out
}

/// A partition `0 = u₀ < u₁ < … < u_K = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    u: Vec<f64>,
}

impl Partition {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if u.len() < 2 {
            return Err(Error::invalid("a partition needs at least two knots"));
        }
        if u[0] != 0.0 || *u.last().unwrap() != 1.0 {
            return Err(Error::invalid("partition must start at 0 and end at 1"));
        }
        if u.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("partition knots must be strictly increasing"));
        }
        Ok(Self { u })
    }

    /// The uniform partition with `k` cells.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::invalid("grid size must be at least 1"));
        }
        let mut u: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();
        u[k] = 1.0;
        Ok(Self { u })
    }

    /// Union of two partitions, merging knots closer than the tolerance.
    pub fn merge(&self, other: &Partition) -> Partition {
        let mut u = Vec::with_capacity(self.u.len() + other.u.len());
        u.extend_from_slice(&self.u);
        u.extend_from_slice(&other.u);
        u.sort_by(f64::total_cmp);
        Partition { u: dedup_knots(u) }
    }

    pub fn knots(&self) -> &[f64] {
        &self.u
    }

    /// Number of cells `K`.
    pub fn num_cells(&self) -> usize {
        self.u.len() - 1
    }

    /// Width of cell `i` (1-based, matching `Δuᵢ = uᵢ − uᵢ₋₁`).
    pub fn width(&self, i: usize) -> f64 {
        self.u[i] - self.u[i - 1]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.u.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.u.windows(2).map(|w| (w[0], w[1]))
    }

    /// Index (0-based) of the cell containing `u`, treating cells as `(lo, hi]`
    /// except that `u = 0` maps to the first cell.
    pub fn locate(&self, u: f64) -> usize {
        let k = self.u.partition_point(|&x| x < u);
        k.saturating_sub(1).min(self.num_cells() - 1)
    }

    /// The mirrored partition `{1 − u}` used for reflections.
    pub fn reflected(&self) -> Partition {
        let u: Vec<f64> = self.u.iter().rev().map(|&x| 1.0 - x).collect();
        Partition { u: dedup_knots(u) }
    }
}

/// Piecewise-constant quantile: value `y[i]` on cell `i` of the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepQuantile {
    pub partition: Partition,
    pub y: Vec<f64>,
}

impl StepQuantile {
    pub fn new(partition: Partition, y: Vec<f64>) -> Result<Self> {
        if y.len() != partition.num_cells() {
            return Err(Error::LengthMismatch { expected: partition.num_cells(), found: y.len() });
        }
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        if y.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("step quantile values must be non-decreasing"));
        }
        Ok(Self { partition, y })
    }

    pub fn num_cells(&self) -> usize {
        self.y.len()
    }

    /// Left-continuous evaluation.
    pub fn eval(&self, u: f64) -> f64 {
        self.y[self.partition.locate(u)]
    }

    pub fn mean(&self) -> f64 {
        self.partition.cells().zip(&self.y).map(|((lo, hi), y)| (hi - lo) * y).sum()
    }

    pub fn min(&self) -> f64 {
        self.y[0]
    }

    pub fn max(&self) -> f64 {
        *self.y.last().unwrap()
    }

    /// True when all step values coincide up to a relative `1e-12`.
    pub fn is_constant(&self) -> bool {
        let (lo, hi) = (self.min(), self.max());
        hi - lo <= 1e-12 * hi.abs().max(1.0)
    }

    /// Re-expresses the step function on a finer partition.
    pub fn refine(&self, partition: &Partition) -> StepQuantile {
        let y = partition.cells().map(|(lo, hi)| self.eval(0.5 * (lo + hi))).collect();
        StepQuantile { partition: partition.clone(), y }
    }
}
