//! Shape-constrained density estimation on the real line by projecting the
//! empirical quantile function onto closed convex sets of quantile functions in L²(0, 1).
//!
//! Two models are supported:
//!
//! * non-increasing densities on the half line ([`monotone`]), fitted as a
//!   nonnegative least-squares problem over ramp functions;
//! * log-concave densities ([`logconcave`]), fitted in the reciprocal-slope
//!   parametrization `h = 1/Q'` by an active set over the kinks of `h`.
//!
//! Every fit is a 2-Wasserstein projection of the data, because on the line
//! the 2-Wasserstein distance is the L² distance between quantile functions.
//! The [`verify`] module certifies fits through their first-order
//! conditions and runs Monte-Carlo consistency experiments, and
//! [`baselines`] provides Grenander's estimator for comparison. [`fit`]
//! dispatches over the two models and [`io`] reads data and writes fits.

pub mod baselines;
pub mod density;
pub mod error;
pub mod fit;
pub mod io;
pub mod logconcave;
pub mod measures;
pub mod monotone;
pub mod numerics;
pub mod qp;
pub mod quantile;
pub mod transport;
pub mod truth;
pub mod verify;

pub use density::{DensityModel, Segment, SegmentShape};
pub use error::{Error, Result};
pub use logconcave::{fit_logconcave, LogConcaveConfig, LogConcaveFit};
pub use measures::{EmpiricalMeasure, Partition, StepQuantile};
pub use monotone::{fit_monotone, MonotoneFit};
pub use qp::{solve_qp, QuadraticProgram, SolverConfig, SolverReport, SolverStatus};
pub use quantile::Quantile;
pub use transport::{w2_distance, wp_distance};

use serde::{Deserialize, Serialize};

/// Shape constraint a fit projects onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Monotone,
    LogConcave,
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "monotone" => Ok(Model::Monotone),
            "logconcave" | "log-concave" => Ok(Model::LogConcave),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}
