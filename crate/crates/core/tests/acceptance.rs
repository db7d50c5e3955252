//! Acceptance criteria 1-11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use wproj::baselines::grenander;
use wproj::density::{Segment, SegmentShape};
use wproj::fit::{fit_measure, fit_step, FitSettings, ModelFit};
use wproj::io::{read_fit, FitDocument};
use wproj::logconcave::{logconcave_gradient, logconcave_objective};
use wproj::measures::{EmpiricalMeasure, Partition, StepQuantile};
use wproj::monotone::{fit_monotone_step, monotone_objective};
use wproj::numerics::integrate_adaptive;
use wproj::quantile::{rng_from_seed, LogConcaveQuantile, PiecewiseLinear, Quantile};
use wproj::truth::TruthSpec;
use wproj::verify::{consistency_experiment, first_order_residual, nonexpansiveness_gap, ExperimentConfig};
use wproj::{Model, SolverConfig, SolverStatus};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_wproj")
}

fn run_cli(args: &[&str]) -> Result<f64, String> {
    let start = Instant::now();
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return Err(format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(secs)
}

fn sup_distance(a: impl Fn(f64) -> f64, b: impl Fn(f64) -> f64, knots: &[f64]) -> f64 {
    let mut us: Vec<f64> = (0..=4000).map(|j| j as f64 / 4000.0).collect();
    us.extend_from_slice(knots);
    us.iter().map(|&u| (a(u) - b(u)).abs()).fold(0.0, f64::max)
}

fn random_values(rng: &mut ChaCha8Rng, n: usize, positive: bool) -> Vec<f64> {
    let kind = rng.random_range(0..3);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(1e-12);
            let v = match kind {
                0 => 3.0 * u - 1.0,
                1 => -u.ln(),
                _ => {
                    let w: f64 = rng.random();
                    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * w).cos()
                }
            };
            if positive {
                v.abs() + 0.01
            } else {
                v
            }
        })
        .collect()
}

fn random_measure(rng: &mut ChaCha8Rng, max_n: usize, positive: bool) -> EmpiricalMeasure {
    let n = rng.random_range(2..=max_n);
    let xs = random_values(rng, n, positive);
    if rng.random_bool(0.3) {
        let ws: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
        EmpiricalMeasure::new(&xs, Some(&ws)).unwrap()
    } else {
        EmpiricalMeasure::from_values(&xs).unwrap()
    }
}

fn criterion_1(dir: &Path) -> Check {
    let data = dir.join("delta1.txt");
    let out = dir.join("delta1.json");
    std::fs::write(&data, "1\n").unwrap();
    let secs = run_cli(&[
        "fit-monotone",
        "--input",
        data.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--grid-size",
        "200",
    ])?;
    let doc = read_fit(&out).map_err(|e| e.to_string())?;
    let q = doc.quantile().map_err(|e| e.to_string())?;
    let sup = sup_distance(|u| q.eval(u), |u| 1.5 * u, &doc.partition);
    let density = doc.density();
    let dens_err = (1..1500).map(|j| (density.pdf(j as f64 * 1e-3) - 2.0 / 3.0).abs()).fold(0.0, f64::max);
    let msg = format!("sup |Q - 1.5u| = {sup:.2e}, W2 = {:.6}, density error {dens_err:.2e}, {secs:.3} s", doc.w2);
    ensure(sup <= 0.02 && (doc.w2 - 0.5).abs() <= 1e-3 && dens_err <= 0.02 && secs < 1.0, msg)
}

fn criterion_2(dir: &Path) -> Check {
    let data = dir.join("two.csv");
    let out = dir.join("two.json");
    std::fs::write(&data, "-1,0.5\n1,0.5\n").unwrap();
    let secs = run_cli(&[
        "fit-logconcave",
        "--input",
        data.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--grid-size",
        "200",
    ])?;
    let doc = read_fit(&out).map_err(|e| e.to_string())?;
    let q = doc.quantile().map_err(|e| e.to_string())?;
    let sup = sup_distance(|u| q.eval(u), |u| -1.5 + 3.0 * u, &doc.partition);
    let (lo, hi) = (doc.q[0], *doc.q.last().unwrap());
    let msg = format!("sup |Q - (3u - 1.5)| = {sup:.2e}, support [{lo:.4}, {hi:.4}], {secs:.3} s");
    ensure(sup <= 0.05 && (lo + 1.5).abs() <= 0.05 && (hi - 1.5).abs() <= 0.05 && secs < 5.0, msg)
}

fn criterion_3() -> Check {
    let mut rng = rng_from_seed(301);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = random_measure(&mut rng, 50, false);
        let fit = fit_measure(&m, Model::LogConcave, 64, &FitSettings::default()).map_err(|e| e.to_string())?;
        worst = worst.max((fit.quantile().mean() - m.mean()).abs());
    }
    ensure(worst <= 1e-6, format!("max |mean(fit) - mean(data)| = {worst:.2e} over 100 fits"))
}

fn criterion_4() -> Check {
    let mut rng = rng_from_seed(401);
    let mut parts = Vec::new();
    let mut ok = true;
    for model in [Model::Monotone, Model::LogConcave] {
        let mut worst = f64::INFINITY;
        for _ in 0..200 {
            let positive = model == Model::Monotone;
            let ma = random_measure(&mut rng, 30, positive);
            // every other pair is a small perturbation, where the gap nears zero
            let mb = if rng.random_bool(0.5) {
                let xs: Vec<f64> = ma
                    .values()
                    .iter()
                    .map(|x| x + 1e-3 * (rng.random::<f64>() - 0.5))
                    .map(|x| if positive { x.abs() } else { x })
                    .collect();
                EmpiricalMeasure::new(&xs, Some(ma.weights())).unwrap()
            } else {
                random_measure(&mut rng, 30, positive)
            };
            let gap = nonexpansiveness_gap(&ma, &mb, model, 64, &FitSettings::default()).map_err(|e| e.to_string())?;
            worst = worst.min(gap);
        }
        ok &= worst >= -1e-8;
        parts.push(format!("{model:?}: min gap {worst:.2e}"));
    }
    ensure(ok, parts.join(", "))
}

fn criterion_5() -> Check {
    let mut rng = rng_from_seed(501);
    let settings = FitSettings::default();
    let mut worst_mono = 0.0f64;
    for _ in 0..20 {
        let m = random_measure(&mut rng, 40, true);
        let base = fit_measure(&m, Model::Monotone, 64, &settings).map_err(|e| e.to_string())?;
        let scale = base.knots().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for b in [0.5, 2.0, 10.0] {
            let xs: Vec<f64> = m.values().iter().map(|x| b * x).collect();
            let mb = EmpiricalMeasure::new(&xs, Some(m.weights())).unwrap();
            let fit = fit_measure(&mb, Model::Monotone, 64, &settings).map_err(|e| e.to_string())?;
            let err = fit.knots().iter().zip(base.knots()).map(|(qb, q)| (qb - b * q).abs()).fold(0.0, f64::max);
            worst_mono = worst_mono.max(err / (b * scale));
        }
    }
    let mut worst_lc = 0.0f64;
    for _ in 0..20 {
        let m = random_measure(&mut rng, 40, false);
        let base = fit_measure(&m, Model::LogConcave, 64, &settings).map_err(|e| e.to_string())?.quantile();
        for (a, b) in [(1.0, 2.0), (-3.0, 0.5), (0.0, -1.0), (2.0, -3.0)] {
            let xs: Vec<f64> = m.values().iter().map(|x| a + b * x).collect();
            let mb = EmpiricalMeasure::new(&xs, Some(m.weights())).unwrap();
            let fit = fit_measure(&mb, Model::LogConcave, 64, &settings).map_err(|e| e.to_string())?.quantile();
            let pushed = base.pushforward_affine(a, b).map_err(|e| e.to_string())?;
            worst_lc = worst_lc.max(sup_distance(|u| fit.eval(u), |u| pushed.eval(u), fit.knots()));
        }
    }
    let msg =
        format!("monotone max relative knot error {worst_mono:.2e}, log-concave max sup-norm error {worst_lc:.2e}");
    ensure(worst_mono <= 1e-6 && worst_lc <= 1e-5, msg)
}

fn slope_knots(part: &Partition, z: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0];
    let mut slope = 0.0;
    for (i, zi) in z.iter().enumerate() {
        slope += zi;
        q.push(q[i] + slope * part.width(i + 1));
    }
    q
}

/// Shrinking grid search over slope increments `z ≥ 0`.
fn grid_search(part: &Partition, y: &[f64]) -> f64 {
    let k = y.len();
    let min_w = part.widths().iter().fold(f64::INFINITY, |a, &w| a.min(w));
    let ymax = y.iter().fold(0.0f64, |a, &v| a.max(v));
    let mut center = vec![0.0; k];
    let mut radius = 4.0 * ymax / min_w;
    let mut best = monotone_objective(&slope_knots(part, &center), part, y).unwrap();
    let n = 30usize;
    for _ in 0..60 {
        let axes: Vec<Vec<f64>> = center
            .iter()
            .map(|&c| {
                let lo = (c - radius).max(0.0);
                (0..=n).map(|j| lo + (c + radius - lo) * j as f64 / n as f64).collect()
            })
            .collect();
        let mut idx = vec![0usize; k];
        let mut best_z = center.clone();
        loop {
            let z: Vec<f64> = idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect();
            let f = monotone_objective(&slope_knots(part, &z), part, y).unwrap();
            if f < best {
                best = f;
                best_z = z;
            }
            let mut d = 0;
            while d < k {
                idx[d] += 1;
                if idx[d] <= n {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == k {
                break;
            }
        }
        center = best_z;
        radius *= 0.7;
    }
    best
}

fn random_partition(rng: &mut ChaCha8Rng, k: usize) -> Partition {
    let mut u: Vec<f64> = (0..k - 1).map(|_| rng.random_range(0.05..0.95)).collect();
    u.sort_by(f64::total_cmp);
    let mut knots = vec![0.0];
    for v in u {
        if v - knots.last().unwrap() > 0.02 {
            knots.push(v);
        }
    }
    if 1.0 - knots.last().unwrap() < 0.02 {
        knots.pop();
    }
    knots.push(1.0);
    Partition::new(knots).unwrap()
}

/// Concave positive `h`: the minimum of a few random lines plus a floor.
fn random_lc_point(rng: &mut ChaCha8Rng) -> (Partition, f64, Vec<f64>, Vec<f64>) {
    let k = rng.random_range(1..=8);
    let part = random_partition(rng, k);
    let lines: Vec<(f64, f64)> =
        (0..rng.random_range(1..=3)).map(|_| (rng.random_range(0.2..3.0), rng.random_range(-3.0..3.0))).collect();
    let h: Vec<f64> = part
        .knots()
        .iter()
        .map(|&u| {
            lines.iter().map(|(a, s)| a + s * (u - 0.5)).fold(f64::INFINITY, f64::min).max(0.05 + 0.1 * u * (1.0 - u))
        })
        .collect();
    // the floor can break concavity; restore it
    let h = concave_majorant(&part, &h);
    let c = rng.random_range(-2.0..2.0);
    let mut y: Vec<f64> = (0..part.num_cells()).map(|_| rng.random_range(-2.0..4.0)).collect();
    y.sort_by(f64::total_cmp);
    (part, c, h, y)
}

// Least concave majorant of the points (u, h), evaluated at the knots.
fn concave_majorant(part: &Partition, h: &[f64]) -> Vec<f64> {
    let pts: Vec<(f64, f64)> = part.knots().iter().copied().zip(h.iter().copied()).collect();
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    pts.iter()
        .map(|&(u, _)| {
            let j = hull.partition_point(|p| p.0 < u).clamp(1, hull.len() - 1);
            let (a, b) = (hull[j - 1], hull[j]);
            if u == a.0 {
                a.1
            } else {
                a.1 + (b.1 - a.1) * (u - a.0) / (b.0 - a.0)
            }
        })
        .collect()
}

fn criterion_6() -> Check {
    let mut rng = rng_from_seed(601);
    let mut worst_qp = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(1..=3);
        let part = random_partition(&mut rng, k);
        let mut y: Vec<f64> = (0..part.num_cells()).map(|_| rng.random_range(0.05..3.0)).collect();
        y.sort_by(f64::total_cmp);
        let q0 = StepQuantile::new(part.clone(), y.clone()).unwrap();
        let fit = fit_monotone_step(&q0, &SolverConfig::default()).map_err(|e| e.to_string())?;
        let f = monotone_objective(&fit.q, &part, &y).unwrap();
        worst_qp = worst_qp.max((f - grid_search(&part, &y)).abs());
    }
    let mut worst_quad = 0.0f64;
    for _ in 0..100 {
        let (part, c, h, y) = random_lc_point(&mut rng);
        let f = logconcave_objective(c, &h, &part, &y).map_err(|e| e.to_string())?;
        let lc = LogConcaveQuantile::new(part.clone(), c, h).unwrap();
        let quad: f64 = part
            .cells()
            .zip(&y)
            .map(|((a, b), &yi)| integrate_adaptive(|u| (lc.eval(u) - yi).powi(2), a, b, 1e-15))
            .sum();
        worst_quad = worst_quad.max((f - quad).abs());
    }
    let msg = format!("monotone K<=3 objective gap {worst_qp:.2e}, log-concave quadrature gap {worst_quad:.2e}");
    ensure(worst_qp <= 1e-6 && worst_quad <= 1e-10, msg)
}

fn criterion_7() -> Check {
    let mut rng = rng_from_seed(701);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (part, c, h, y) = random_lc_point(&mut rng);
        let g = logconcave_gradient(c, &h, &part, &y).map_err(|e| e.to_string())?;
        let mut x = vec![c];
        x.extend_from_slice(&h);
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for j in 0..x.len() {
            let step = 1e-5 * x[j].abs().max(0.1);
            let f = |s: f64| {
                let mut z = x.clone();
                z[j] += s;
                logconcave_objective(z[0], &z[1..], &part, &y).unwrap()
            };
            let fd = (f(step) - f(-step)) / (2.0 * step);
            worst = worst.max((g[j] - fd).abs() / gmax.max(f64::MIN_POSITIVE));
        }
    }
    ensure(worst <= 1e-6, format!("max |g - fd| / |g|_inf = {worst:.2e} over 100 points"))
}

fn criterion_8() -> Check {
    let mut rng = rng_from_seed(801);
    let mut checked = 0;
    let mut mass_err = 0.0f64;
    for _ in 0..60 {
        for model in [Model::Monotone, Model::LogConcave] {
            let m = random_measure(&mut rng, 60, model == Model::Monotone);
            let fit = fit_measure(&m, model, 64, &FitSettings::default()).map_err(|e| e.to_string())?;
            let d = fit.density().map_err(|e| e.to_string())?;
            match model {
                Model::Monotone => d.check_monotone(1e-10),
                Model::LogConcave => d.check_logconcave(1e-10),
            }
            .map_err(|e| format!("{model:?} fit: {e}"))?;
            mass_err = mass_err.max((d.total_mass() - 1.0).abs());
            checked += 1;
        }
    }
    ensure(mass_err <= 1e-10, format!("{checked} densities pass the shape checks, max mass error {mass_err:.2e}"))
}

fn criterion_9() -> Check {
    let mut rng = rng_from_seed(901);
    let mut worst = f64::INFINITY;
    let mut worst_perturbed = f64::NEG_INFINITY;
    let mut optimal = 0;
    let mut total = 0;
    for trial in 0..60 {
        for model in [Model::Monotone, Model::LogConcave] {
            let max_n = if trial % 10 == 0 { 1000 } else { 80 };
            let m = random_measure(&mut rng, max_n, model == Model::Monotone);
            let k = if trial % 3 == 0 { 200 } else { 64 };
            let q0 = m.discretize(k).unwrap();
            let fit = fit_step(&q0, model, &FitSettings::default()).map_err(|e| e.to_string())?;
            total += 1;
            if fit.report().status != SolverStatus::Optimal {
                continue;
            }
            optimal += 1;
            let r = first_order_residual(&fit.quantile(), &q0, model).map_err(|e| e.to_string())?;
            worst = worst.min(r);
            let perturbed = match &fit {
                ModelFit::Monotone(f) => Quantile::Linear(
                    PiecewiseLinear::new(f.partition.clone(), f.q.iter().map(|v| 1.2 * v).collect()).unwrap(),
                ),
                ModelFit::LogConcave(f) if f.is_point_mass() => continue,
                ModelFit::LogConcave(f) => Quantile::LogConcave(
                    LogConcaveQuantile::new(f.partition.clone(), f.c, f.h.iter().map(|v| v / 1.2).collect()).unwrap(),
                ),
            };
            let rp = first_order_residual(&perturbed, &q0, model).map_err(|e| e.to_string())?;
            worst_perturbed = worst_perturbed.max(rp);
        }
    }
    let msg = format!(
        "{optimal}/{total} fits optimal, min residual {worst:.2e}, max perturbed residual {worst_perturbed:.2e}"
    );
    ensure(worst >= -1e-7 && worst_perturbed < -1e-3, msg)
}

fn criterion_10() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    let cases = [
        (TruthSpec::Exponential { rate: 1.0 }, Model::Monotone),
        (TruthSpec::Normal { mean: 0.0, sd: 1.0 }, Model::LogConcave),
    ];
    for (truth, model) in cases {
        let cfg = ExperimentConfig { truth, ns: vec![100, 1000, 10_000], reps: 20, model, grid_size: 200, seed: 1001 };
        let report = consistency_experiment(&cfg, &FitSettings::default()).map_err(|e| e.to_string())?;
        let medians: Vec<f64> = report.rows.iter().map(|r| r.median).collect();
        let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
        let last = *medians.last().unwrap();
        ok &= decreasing && last <= 0.05 && report.reference == "truth";
        parts.push(format!("{}: medians {:.4?}", report.truth, medians));
    }
    ensure(ok, parts.join("; "))
}

fn criterion_11() -> Check {
    let d = grenander(&EmpiricalMeasure::point_mass(1.0).unwrap()).map_err(|e| e.to_string())?;
    let unif = vec![Segment { lo: 0.0, hi: 1.0, shape: SegmentShape::Constant { height: 1.0 } }];
    if d.segments != unif || !d.atoms.is_empty() {
        return Err(format!("Grenander of a point mass is {d:?}"));
    }
    let mut parts = Vec::new();
    for lambda in [0.2, 0.5, 0.8, 1.0] {
        let m = if lambda == 1.0 {
            EmpiricalMeasure::point_mass(1.0).unwrap()
        } else {
            EmpiricalMeasure::new(&[0.2, 1.0], Some(&[1.0 - lambda, lambda])).unwrap()
        };
        let g_end = grenander(&m).map_err(|e| e.to_string())?.support().1;
        let fit = fit_measure(&m, Model::Monotone, 200, &FitSettings::default()).map_err(|e| e.to_string())?;
        let w_end = *fit.knots().last().unwrap();
        if g_end != m.max() || w_end <= g_end {
            return Err(format!("lambda {lambda}: Grenander end {g_end}, projection end {w_end}"));
        }
        parts.push(format!("{lambda}: {g_end} < {w_end:.4}"));
    }
    let doc = FitDocument::grenander(&EmpiricalMeasure::point_mass(1.0).unwrap()).map_err(|e| e.to_string())?;
    ensure(doc.segments == unif, format!("point mass gives Unif(0,1]; support ends {}", parts.join(", ")))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(usize, Box<dyn Fn() -> Check>)> = vec![
        (1, Box::new(|| criterion_1(dir.path()))),
        (2, Box::new(|| criterion_2(dir.path()))),
        (3, Box::new(criterion_3)),
        (4, Box::new(criterion_4)),
        (5, Box::new(criterion_5)),
        (6, Box::new(criterion_6)),
        (7, Box::new(criterion_7)),
        (8, Box::new(criterion_8)),
        (9, Box::new(criterion_9)),
        (10, Box::new(criterion_10)),
        (11, Box::new(criterion_11)),
    ];
    let mut failed = 0;
    for (n, run) in &criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n:>2}: PASS ({msg}; {secs:.1} s)"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL ({msg}; {secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
