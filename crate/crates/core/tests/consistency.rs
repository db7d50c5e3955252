use wproj::fit::{fit_measure, FitSettings};
use wproj::quantile::{sample, Quantile};
use wproj::truth::TruthSpec;
use wproj::verify::{consistency_experiment, ExperimentConfig};
use wproj::{w2_distance, EmpiricalMeasure, Model};

fn normal() -> TruthSpec {
    TruthSpec::Normal { mean: 0.0, sd: 1.0 }
}

#[test]
fn normal_logconcave_median_within_log_envelope() {
    let n = 1000;
    let cfg =
        ExperimentConfig { truth: normal(), ns: vec![n], reps: 7, model: Model::LogConcave, grid_size: 200, seed: 17 };
    let report = consistency_experiment(&cfg, &FitSettings::default()).unwrap();
    assert_eq!(report.reference, "truth");
    let median = report.rows[0].median;
    let envelope = 5.0 * (n as f64).ln() / n as f64;
    assert!(median * median <= envelope, "median W2² {} > {envelope}", median * median);
}

#[test]
fn experiment_is_deterministic_given_seed() {
    let cfg = ExperimentConfig {
        truth: TruthSpec::Exponential { rate: 1.0 },
        ns: vec![50, 200],
        reps: 1,
        model: Model::Monotone,
        grid_size: 100,
        seed: 5,
    };
    let settings = FitSettings::default();
    let a = consistency_experiment(&cfg, &settings).unwrap();
    let b = consistency_experiment(&cfg, &settings).unwrap();
    assert_eq!(a, b);
    let other = consistency_experiment(&ExperimentConfig { seed: 6, ..cfg }, &settings).unwrap();
    assert_ne!(a.rows[0].distances, other.rows[0].distances);
}

#[test]
fn sampling_is_deterministic_given_seed() {
    let q = normal().quantile().unwrap();
    assert_eq!(sample(&q, 100, 3).unwrap(), sample(&q, 100, 3).unwrap());
    assert_ne!(sample(&q, 100, 3).unwrap(), sample(&q, 100, 4).unwrap());
}

// For a truth inside the model the projection is non-expansive, so
// W₂(fit, truth) ≤ W₂(discretized, truth) ≤ W₂(empirical, truth) + W₂(discretized, empirical).
// The discretization merges the data's quantile levels, so the last term is
// zero; the grids 50 | 200 | 800 are nested, so the fit's distance to the data
// cannot grow with K.
#[test]
fn fit_error_sandwiched_by_empirical_error_plus_slack() {
    let settings = FitSettings::default();
    for (truth, model) in [(TruthSpec::Exponential { rate: 1.0 }, Model::Monotone), (normal(), Model::LogConcave)] {
        let q = truth.quantile().unwrap();
        for seed in 0..3 {
            let m = EmpiricalMeasure::from_values(&sample(&q, 400, 100 + seed).unwrap()).unwrap();
            let empirical = Quantile::Step(m.step_quantile());
            let data_err = w2_distance(&empirical, &q);
            let mut to_data = Vec::new();
            for k in [50, 200, 800] {
                let fit = fit_measure(&m, model, k, &settings).unwrap();
                let slack = w2_distance(&Quantile::Step(m.discretize(k).unwrap()), &empirical);
                let err = w2_distance(&fit.quantile(), &q);
                assert!(err <= data_err + slack + 1e-6, "{model:?} K={k}: {err} > {data_err} + {slack}");
                to_data.push(fit.w2());
            }
            assert!(to_data.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{model:?}: {to_data:?}");
        }
    }
}
