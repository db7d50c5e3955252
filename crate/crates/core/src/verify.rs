//! Certificates and experiments for fitted projections.
//!
//! A projection `Q̂` of `Q₀` onto a convex cone satisfies
//! `∫ (Q̂ − Q₀) G du ≥ 0` for every feasible direction `G` at `Q̂`.
//! [`first_order_residual`] evaluates this over a finite generator set on the
//! fit's partition, so a non-negative value certifies optimality on the grid
//! only, not over the whole model.
//!
//! Generators are scaled to the data range `R` and the integral is divided by
//! `R²`, which makes the residual dimensionless:
//!
//! * monotone: the ramps `R (u − u_j)₊` (the first is the identity), their
//!   negatives where the fit's slope increases at `u_j`, and `±Q̂` rescaled
//!   to norm `R`;
//! * log-concave: translations `±R`, dilations about the mean rescaled to
//!   norm `R`, and for every knot a tent in `h` of height `1/R` between the
//!   neighbouring kinks of `ĥ`, mapped to quantile space by linearization.
//!   Tents peaked at a kink or at an end knot are used with both signs;
//!   directions that push `h` below its floor or `c` below zero (when the
//!   support is restricted) are skipped.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_step, FitSettings};
use crate::logconcave::logconcave_gradient;
use crate::measures::{EmpiricalMeasure, Partition, StepQuantile};
use crate::quantile::{sample, Quantile};
use crate::transport::w2_distance;
use crate::truth::TruthSpec;
use crate::Model;

/// Cells of the fine discretization used when the truth is outside the model.
pub const REFERENCE_CELLS: usize = 4000;

const FEASIBILITY_REL: f64 = 1e-8;

fn same_partition(a: &Partition, b: &Partition) -> Result<()> {
    if a.knots() != b.knots() {
        return Err(Error::invalid("fit and data must share a partition"));
    }
    Ok(())
}

/// Most violated first-order inequality; `≥ −tol` certifies the fit.
pub fn first_order_residual(fit: &Quantile, data: &StepQuantile, model: Model) -> Result<f64> {
    first_order_residual_with(fit, data, model, false)
}

/// As [`first_order_residual`], for log-concave fits whose support was
/// restricted to `[0, ∞)`.
pub fn first_order_residual_with(
    fit: &Quantile,
    data: &StepQuantile,
    model: Model,
    nonneg_support: bool,
) -> Result<f64> {
    match (model, fit) {
        (Model::Monotone, Quantile::Linear(l)) => {
            same_partition(&l.partition, &data.partition)?;
            monotone_residual(&l.partition, &l.q, &data.y)
        }
        (Model::LogConcave, Quantile::LogConcave(l)) => {
            same_partition(&l.partition, &data.partition)?;
            logconcave_residual(&l.partition, l.c, &l.h, &data.y, nonneg_support)
        }
        (Model::LogConcave, Quantile::Step(s)) if s.is_constant() => point_mass_residual(s.y[0], data),
        _ => Err(Error::invalid(format!("quantile representation does not match the {model:?} model"))),
    }
}

fn monotone_residual(part: &Partition, q: &[f64], y: &[f64]) -> Result<f64> {
    let k = y.len();
    let widths = part.widths();
    let slopes: Vec<f64> = (0..k).map(|i| (q[i + 1] - q[i]) / widths[i]).collect();
    let smax = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if q[0].abs() > FEASIBILITY_REL * qmax {
        return Err(Error::Infeasible(format!("quantile starts at {} instead of 0", q[0])));
    }
    let mut prev = 0.0;
    for (i, &s) in slopes.iter().enumerate() {
        if s < prev - FEASIBILITY_REL * smax {
            return Err(Error::Infeasible(format!("slope decreases in cell {}", i + 1)));
        }
        prev = s;
    }
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }

    // per-cell ∫ r and ∫ u r with r = Q̂ − Q₀, then suffix sums
    let knots = part.knots();
    let mut m0 = vec![0.0; k + 1];
    let mut m1 = vec![0.0; k + 1];
    let (mut cross, mut norm2) = (0.0, 0.0);
    for i in (0..k).rev() {
        let (lo, d) = (knots[i], widths[i]);
        let (qa, qb) = (q[i], q[i + 1]);
        let int_r = d * (0.5 * (qa + qb) - y[i]);
        let int_ur = d * (lo * 0.5 * (qa + qb) + d * (qa / 6.0 + qb / 3.0)) - y[i] * d * (lo + 0.5 * d);
        m0[i] = m0[i + 1] + int_r;
        m1[i] = m1[i + 1] + int_ur;
        let sq = d * (qa * qa + qa * qb + qb * qb) / 3.0;
        norm2 += sq;
        cross += sq - d * y[i] * 0.5 * (qa + qb);
    }
    let mut worst = f64::INFINITY;
    let mut prev_slope = 0.0;
    for j in 0..k {
        let g = (m1[j] - knots[j] * m0[j]) / scale;
        worst = worst.min(g);
        if slopes[j] - prev_slope > FEASIBILITY_REL * smax {
            worst = worst.min(-g);
        }
        prev_slope = slopes[j];
    }
    if norm2 > 0.0 {
        let v = cross / (norm2.sqrt() * scale);
        worst = worst.min(v).min(-v);
    }
    Ok(worst)
}

fn point_mass_residual(x: f64, data: &StepQuantile) -> Result<f64> {
    let range = data.max() - data.min();
    let scale = if range > 0.0 { range } else { x.abs().max(1.0) };
    let widths = data.partition.widths();
    let knots = data.partition.knots();
    // translations ±R and the spreading direction R √12 (u − ½)
    let shift: f64 = widths.iter().zip(&data.y).map(|(d, yi)| d * (x - yi)).sum::<f64>() / scale;
    let spread: f64 = -(12f64).sqrt()
        * (0..data.y.len()).map(|i| data.y[i] * widths[i] * (0.5 * (knots[i] + knots[i + 1]) - 0.5)).sum::<f64>()
        / scale;
    Ok(shift.min(-shift).min(spread))
}

fn logconcave_residual(part: &Partition, c: f64, h: &[f64], y: &[f64], nonneg: bool) -> Result<f64> {
    let k = y.len();
    let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = ymax - ymin;
    if range <= 0.0 {
        return Err(Error::invalid("log-concave residual of constant data needs a point-mass fit"));
    }
    let eps = 1e-8 / range;
    let knots = part.knots();
    let widths = part.widths();
    let hmax = h.iter().fold(0.0f64, |m, &v| m.max(v));
    if let Some(i) = h.iter().position(|&v| v < eps * (1.0 - 1e-9)) {
        return Err(Error::Infeasible(format!("h below its floor at knot {i}")));
    }
    if nonneg && c < 0.0 {
        return Err(Error::Infeasible("negative support with a non-negative restriction".into()));
    }
    // slope changes of h at interior knots; roundoff level is about
    // ε·hmax/min width, so anything below that is not a kink
    let min_width = widths.iter().fold(f64::INFINITY, |m, &w| m.min(w));
    let kink_tol = 1e-10 * hmax / min_width;
    let mut kinks = vec![0];
    for j in 1..k {
        let change = (h[j + 1] - h[j]) / widths[j] - (h[j] - h[j - 1]) / widths[j - 1];
        if change > FEASIBILITY_REL * hmax / min_width {
            return Err(Error::Infeasible(format!("h is not concave at knot {j}")));
        }
        if change < -kink_tol {
            kinks.push(j);
        }
    }
    kinks.push(k);

    let grad = logconcave_gradient(c, h, part, y)?;
    let (gc, gh) = (grad[0], &grad[1..]);
    let r3 = range * range * range;
    let mut worst = f64::INFINITY;

    // translations
    let t = gc / (2.0 * range);
    worst = worst.min(t);
    if !(nonneg && c <= 0.0) {
        worst = worst.min(-t);
    }

    // dilations about the fitted mean: dc = c − m, dh = −h, normalized by sd
    let fitted = Quantile::LogConcave(crate::quantile::LogConcaveQuantile::new(part.clone(), c, h.to_vec())?);
    let mean = fitted.mean();
    let sd = w2_distance(&fitted, &Quantile::constant(mean));
    if sd > 0.0 {
        let dir = 0.5 * (gc * (c - mean) - gh.iter().zip(h).map(|(g, v)| g * v).sum::<f64>());
        let v = dir / (sd * range);
        for sign in [1.0, -1.0] {
            if nonneg && c <= 0.0 && sign * (c - mean) < 0.0 {
                continue;
            }
            worst = worst.min(sign * v);
        }
    }

    // tents between neighbouring kinks
    let at_floor = |i: usize| h[i] <= 2.0 * eps;
    for j in 0..=k {
        // first kink at or after j; the list holds 0 and k
        let pos = kinks.partition_point(|&v| v < j);
        let is_kink = kinks[pos] == j;
        let a = if j == 0 { 0 } else { kinks[pos - 1] };
        let b = if j == k {
            k
        } else if is_kink {
            kinks[pos + 1]
        } else {
            kinks[pos]
        };
        let mut dot = 0.0;
        let mut touches_floor = false;
        for i in a..=b {
            let w = if i == j {
                1.0
            } else if i < j {
                (knots[i] - knots[a]) / (knots[j] - knots[a])
            } else {
                (knots[b] - knots[i]) / (knots[b] - knots[j])
            };
            if w > 0.0 {
                dot += gh[i] * w;
                touches_floor |= at_floor(i);
            }
        }
        let v = dot / (2.0 * r3);
        worst = worst.min(v);
        if is_kink && !touches_floor {
            worst = worst.min(-v);
        }
    }
    Ok(worst)
}

/// `W₂(Q₀(ma), Q₀(mb)) − W₂(fit(ma), fit(mb))` with both measures
/// discretized on one common partition; non-negative for a projection.
pub fn nonexpansiveness_gap(
    ma: &EmpiricalMeasure,
    mb: &EmpiricalMeasure,
    model: Model,
    k: usize,
    settings: &FitSettings,
) -> Result<f64> {
    let pa = ma.discretize(k)?;
    let pb = mb.discretize(k)?;
    let common = pa.partition.merge(&pb.partition);
    let (qa, qb) = (pa.refine(&common), pb.refine(&common));
    let fa = fit_step(&qa, model, settings)?;
    let fb = fit_step(&qb, model, settings)?;
    let data = w2_distance(&Quantile::Step(qa), &Quantile::Step(qb));
    Ok(data - w2_distance(&fa.quantile(), &fb.quantile()))
}

/// Monte-Carlo consistency experiment, also the `simulate` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub truth: TruthSpec,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub model: Model,
    #[serde(default = "default_grid", alias = "k")]
    pub grid_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_grid() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub median: f64,
    /// 10% and 90% quantiles over repetitions.
    pub lower: f64,
    pub upper: f64,
    pub min: f64,
    pub max: f64,
    /// Median of `W₂(empirical, truth)`, which bounds the fit's error up to
    /// discretization when the reference is the truth.
    pub median_empirical: f64,
    /// `W₂(fit, reference)` by repetition.
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub truth: String,
    pub model: Model,
    /// `truth` when the law lies in the model, else `projection`.
    pub reference: String,
    pub rows: Vec<ConsistencyRow>,
}

/// Seed of repetition `rep` at sample size `n` (SplitMix64 finalizer).
pub fn repetition_seed(seed: u64, n: usize, rep: usize) -> u64 {
    let mut z = seed
        .wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((n as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Type-7 sample quantile of sorted values.
fn sorted_quantile(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

/// Runs `f(job)` for `0..jobs` on all available cores; results by job index.
fn run_parallel<T: Send>(jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.max(1));
    let counter = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let job = counter.fetch_add(1, Ordering::Relaxed);
                if job >= jobs {
                    break;
                }
                let out = f(job);
                slots.lock().unwrap()[job] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job runs")).collect()
}

pub fn consistency_experiment(cfg: &ExperimentConfig, settings: &FitSettings) -> Result<ConsistencyReport> {
    cfg.truth.validate()?;
    if cfg.reps == 0 || cfg.ns.is_empty() || cfg.ns.contains(&0) {
        return Err(Error::invalid("experiment needs reps ≥ 1 and sample sizes ≥ 1"));
    }
    if cfg.grid_size == 0 {
        return Err(Error::invalid("grid size must be positive"));
    }
    let truth = cfg.truth.quantile()?;
    let in_model = cfg.truth.in_model(cfg.model);
    let reference = if in_model {
        truth.clone()
    } else {
        let part = Partition::uniform(REFERENCE_CELLS)?;
        let y = part.cells().map(|(lo, hi)| truth.eval(0.5 * (lo + hi))).collect();
        fit_step(&StepQuantile::new(part, y)?, cfg.model, settings)?.quantile()
    };

    let jobs = cfg.ns.len() * cfg.reps;
    let results = run_parallel(jobs, |job| {
        let (n, rep) = (cfg.ns[job / cfg.reps], job % cfg.reps);
        let xs = sample(&truth, n, repetition_seed(cfg.seed, n, rep))?;
        let m = EmpiricalMeasure::from_values(&xs)?;
        let fit = fit_step(&m.discretize(cfg.grid_size)?, cfg.model, settings)?;
        let empirical = Quantile::Step(m.step_quantile());
        Ok((w2_distance(&fit.quantile(), &reference), w2_distance(&empirical, &truth)))
    })?;

    let rows = cfg
        .ns
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let chunk = &results[idx * cfg.reps..(idx + 1) * cfg.reps];
            let distances: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let mut sorted = distances.clone();
            sorted.sort_by(f64::total_cmp);
            let mut emp: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            emp.sort_by(f64::total_cmp);
            ConsistencyRow {
                n,
                median: sorted_quantile(&sorted, 0.5),
                lower: sorted_quantile(&sorted, 0.1),
                upper: sorted_quantile(&sorted, 0.9),
                min: sorted[0],
                max: sorted[sorted.len() - 1],
                median_empirical: sorted_quantile(&emp, 0.5),
                distances,
            }
        })
        .collect();
    Ok(ConsistencyReport {
        truth: cfg.truth.name(),
        model: cfg.model,
        reference: if in_model { "truth" } else { "projection" }.into(),
        rows,
    })
}
