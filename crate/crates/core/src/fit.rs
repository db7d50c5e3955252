//! Model-agnostic entry points over the two projections.

use crate::density::DensityModel;
use crate::error::Result;
use crate::logconcave::{fit_logconcave_step, logconcave_density, LogConcaveConfig, LogConcaveFit};
use crate::measures::{EmpiricalMeasure, Partition, StepQuantile};
use crate::monotone::{fit_monotone_step, monotone_density, MonotoneFit};
use crate::qp::{SolverConfig, SolverReport};
use crate::quantile::Quantile;
use crate::Model;

/// Solver settings for both models.
#[derive(Debug, Clone, Default)]
pub struct FitSettings {
    pub monotone: SolverConfig,
    pub logconcave: LogConcaveConfig,
}

impl FitSettings {
    /// Overrides the tolerance of both solvers.
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.monotone.tol = tol;
        self.logconcave.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.monotone.max_iter = max_iter;
        self.logconcave.max_iter = max_iter;
        self
    }

    pub fn tol(&self, model: Model) -> f64 {
        match model {
            Model::Monotone => self.monotone.tol,
            Model::LogConcave => self.logconcave.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFit {
    Monotone(MonotoneFit),
    LogConcave(LogConcaveFit),
}

impl ModelFit {
    pub fn model(&self) -> Model {
        match self {
            ModelFit::Monotone(_) => Model::Monotone,
            ModelFit::LogConcave(_) => Model::LogConcave,
        }
    }

    pub fn quantile(&self) -> Quantile {
        match self {
            ModelFit::Monotone(f) => f.quantile(),
            ModelFit::LogConcave(f) => f.quantile(),
        }
    }

    pub fn partition(&self) -> &Partition {
        match self {
            ModelFit::Monotone(f) => &f.partition,
            ModelFit::LogConcave(f) => &f.partition,
        }
    }

    /// Quantile values at the partition knots.
    pub fn knots(&self) -> &[f64] {
        match self {
            ModelFit::Monotone(f) => &f.q,
            ModelFit::LogConcave(f) => &f.q,
        }
    }

    pub fn report(&self) -> &SolverReport {
        match self {
            ModelFit::Monotone(f) => &f.report,
            ModelFit::LogConcave(f) => &f.report,
        }
    }

    pub fn w2(&self) -> f64 {
        match self {
            ModelFit::Monotone(f) => f.w2,
            ModelFit::LogConcave(f) => f.w2,
        }
    }

    pub fn density(&self) -> Result<DensityModel> {
        match self {
            ModelFit::Monotone(f) => monotone_density(f),
            ModelFit::LogConcave(f) => logconcave_density(f),
        }
    }
}

/// Projects a step quantile onto the model, on the step's partition.
pub fn fit_step(q0: &StepQuantile, model: Model, settings: &FitSettings) -> Result<ModelFit> {
    Ok(match model {
        Model::Monotone => ModelFit::Monotone(fit_monotone_step(q0, &settings.monotone)?),
        Model::LogConcave => ModelFit::LogConcave(fit_logconcave_step(q0, &settings.logconcave)?),
    })
}

/// Projects an empirical measure discretized with `k` uniform cells.
pub fn fit_measure(m: &EmpiricalMeasure, model: Model, k: usize, settings: &FitSettings) -> Result<ModelFit> {
    fit_step(&m.discretize(k)?, model, settings)
}
