//! Known distributions for simulation: sampling sources and references for
//! consistency experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Exp, Gamma, Normal, Uniform};

use crate::error::{Error, Result};
use crate::quantile::{FunctionQuantile, Quantile};
use crate::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    PointMass {
        x: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Exponential {
        rate: f64,
    },
    /// Shape and rate.
    Gamma {
        shape: f64,
        rate: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub dist: TruthSpec,
}

// Validated form used for evaluation.
#[derive(Debug, Clone)]
enum Dist {
    Point(f64),
    Uniform(Uniform),
    Exp(Exp),
    Gamma(Gamma),
    Normal(Normal),
    Mixture(Vec<(f64, Dist)>),
}

const BISECTION_STEPS: usize = 200;

impl Dist {
    fn cdf(&self, x: f64) -> f64 {
        match self {
            Dist::Point(p) => {
                if x >= *p {
                    1.0
                } else {
                    0.0
                }
            }
            Dist::Uniform(d) => d.cdf(x),
            Dist::Exp(d) => d.cdf(x),
            Dist::Gamma(d) => d.cdf(x),
            Dist::Normal(d) => d.cdf(x),
            Dist::Mixture(c) => c.iter().map(|(w, d)| w * d.cdf(x)).sum(),
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        match self {
            Dist::Point(p) => *p,
            Dist::Uniform(d) => d.inverse_cdf(u),
            Dist::Exp(d) => d.inverse_cdf(u),
            Dist::Gamma(d) => d.inverse_cdf(u),
            Dist::Normal(d) => d.inverse_cdf(u),
            Dist::Mixture(c) => {
                // the mixture quantile lies between the component quantiles
                let qs: Vec<f64> = c.iter().map(|(_, d)| d.quantile(u)).collect();
                let mut lo = qs.iter().copied().fold(f64::INFINITY, f64::min);
                let mut hi = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if self.cdf(lo) >= u {
                    return lo;
                }
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.cdf(mid) >= u {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        }
    }

    fn density(&self, x: f64) -> Option<f64> {
        match self {
            Dist::Point(_) => None,
            Dist::Uniform(d) => Some(d.pdf(x)),
            Dist::Exp(d) => Some(d.pdf(x)),
            Dist::Gamma(d) => Some(d.pdf(x)),
            Dist::Normal(d) => Some(d.pdf(x)),
            Dist::Mixture(c) => c.iter().map(|(w, d)| d.density(x).map(|f| w * f)).sum(),
        }
    }
}

fn bad(msg: impl std::fmt::Display) -> Error {
    Error::invalid(format!("invalid truth specification: {msg}"))
}

impl TruthSpec {
    fn build(&self) -> Result<Dist> {
        Ok(match self {
            TruthSpec::PointMass { x } if x.is_finite() => Dist::Point(*x),
            TruthSpec::PointMass { x } => return Err(bad(format!("point {x}"))),
            TruthSpec::Uniform { lo, hi } => Dist::Uniform(Uniform::new(*lo, *hi).map_err(bad)?),
            TruthSpec::Exponential { rate } => Dist::Exp(Exp::new(*rate).map_err(bad)?),
            TruthSpec::Gamma { shape, rate } => Dist::Gamma(Gamma::new(*shape, *rate).map_err(bad)?),
            TruthSpec::Normal { mean, sd } => Dist::Normal(Normal::new(*mean, *sd).map_err(bad)?),
            TruthSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(bad("mixture has no components"));
                }
                if components.iter().any(|c| !(c.weight > 0.0) || !c.weight.is_finite()) {
                    return Err(bad("mixture weights must be positive"));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let parts =
                    components.iter().map(|c| Ok((c.weight / total, c.dist.build()?))).collect::<Result<_>>()?;
                Dist::Mixture(parts)
            }
        })
    }

    /// Checks the parameters.
    pub fn validate(&self) -> Result<()> {
        self.build().map(|_| ())
    }

    pub fn quantile(&self) -> Result<Quantile> {
        let d = self.build()?;
        Ok(Quantile::Function(FunctionQuantile::new(self.name(), move |u| d.quantile(u))))
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(self.build()?.cdf(x))
    }

    /// Density at `x`; `None` when the law has an atom.
    pub fn density(&self, x: f64) -> Result<Option<f64>> {
        Ok(self.build()?.density(x))
    }

    pub fn name(&self) -> String {
        match self {
            TruthSpec::PointMass { x } => format!("delta({x})"),
            TruthSpec::Uniform { lo, hi } => format!("uniform({lo}, {hi})"),
            TruthSpec::Exponential { rate } => format!("exp({rate})"),
            TruthSpec::Gamma { shape, rate } => format!("gamma({shape}, {rate})"),
            TruthSpec::Normal { mean, sd } => format!("normal({mean}, {sd})"),
            TruthSpec::Mixture { components } => {
                let parts: Vec<String> = components.iter().map(|c| format!("{} {}", c.weight, c.dist.name())).collect();
                parts.join(" + ")
            }
        }
    }

    /// Whether the law is known to lie in the model, so that it is its own
    /// projection. Mixtures are never claimed.
    pub fn in_model(&self, model: Model) -> bool {
        match (self, model) {
            (TruthSpec::PointMass { .. }, Model::LogConcave) => true,
            (TruthSpec::Uniform { .. }, Model::LogConcave) => true,
            (TruthSpec::Uniform { lo, .. }, Model::Monotone) => *lo == 0.0,
            (TruthSpec::Exponential { .. }, _) => true,
            (TruthSpec::Gamma { shape, .. }, Model::LogConcave) => *shape >= 1.0,
            (TruthSpec::Gamma { shape, .. }, Model::Monotone) => *shape == 1.0,
            (TruthSpec::Normal { .. }, Model::LogConcave) => true,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate_adaptive;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn quantiles_match_closed_forms() {
        let q = TruthSpec::Exponential { rate: 2.0 }.quantile().unwrap();
        assert!(close(q.eval(0.5), 2f64.ln() / 2.0, 1e-12));
        let q = TruthSpec::Uniform { lo: 1.0, hi: 3.0 }.quantile().unwrap();
        assert!(close(q.eval(0.25), 1.5, 1e-12));
        let q = TruthSpec::Normal { mean: 1.0, sd: 2.0 }.quantile().unwrap();
        assert!(close(q.eval(0.5), 1.0, 1e-12));
        assert!(close(q.eval(0.975), 1.0 + 2.0 * 1.959963984540054, 1e-8));
        assert_eq!(TruthSpec::PointMass { x: 4.0 }.quantile().unwrap().eval(0.3), 4.0);
    }

    #[test]
    fn mixture_quantile_inverts_the_cdf() {
        let spec = TruthSpec::Mixture {
            components: vec![
                MixtureComponent { weight: 0.6, dist: TruthSpec::Gamma { shape: 5.0, rate: 1.5 } },
                MixtureComponent { weight: 0.4, dist: TruthSpec::Gamma { shape: 22.0, rate: 1.5 } },
            ],
        };
        let q = spec.quantile().unwrap();
        for j in 1..50 {
            let u = j as f64 / 50.0;
            assert!(close(spec.cdf(q.eval(u)).unwrap(), u, 1e-10));
        }
        // the density integrates to one
        let mass = integrate_adaptive(|x| spec.density(x).unwrap().unwrap(), 0.0, 60.0, 1e-10);
        assert!(close(mass, 1.0, 1e-8));
    }

    #[test]
    fn mixture_with_atom_is_left_continuous() {
        let spec = TruthSpec::Mixture {
            components: vec![
                MixtureComponent { weight: 0.5, dist: TruthSpec::PointMass { x: 0.2 } },
                MixtureComponent { weight: 0.5, dist: TruthSpec::PointMass { x: 1.0 } },
            ],
        };
        let q = spec.quantile().unwrap();
        assert_eq!(q.eval(0.5), 0.2);
        assert_eq!(q.eval(0.75), 1.0);
        assert_eq!(spec.density(0.5).unwrap(), None);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TruthSpec::Exponential { rate: -1.0 }.validate().is_err());
        assert!(TruthSpec::Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(TruthSpec::Normal { mean: 0.0, sd: 0.0 }.validate().is_err());
        assert!(TruthSpec::Mixture { components: vec![] }.validate().is_err());
    }

    #[test]
    fn serde_form() {
        let spec: TruthSpec = serde_json::from_str(r#"{"kind":"gamma","shape":5,"rate":1.5}"#).unwrap();
        assert_eq!(spec, TruthSpec::Gamma { shape: 5.0, rate: 1.5 });
        let back: TruthSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(TruthSpec::Exponential { rate: 1.0 }.in_model(Model::Monotone));
        assert!(TruthSpec::Normal { mean: 0.0, sd: 1.0 }.in_model(Model::LogConcave));
        assert!(!TruthSpec::Normal { mean: 0.0, sd: 1.0 }.in_model(Model::Monotone));
    }
}
