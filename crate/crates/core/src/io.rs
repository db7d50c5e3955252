//! Dataset ingestion, fit documents and plot data.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{grenander, grenander_quantile};
use crate::density::{DensityModel, Segment};
use crate::error::{Error, Result};
use crate::fit::ModelFit;
use crate::logconcave::LogConcaveFit;
use crate::measures::{build_empirical, EmpiricalMeasure, Partition};
use crate::monotone::MonotoneFit;
use crate::qp::SolverReport;
use crate::quantile::{LogConcaveQuantile, PiecewiseLinear, Quantile};
use crate::Model;

pub const SCHEMA_VERSION: u32 = 1;

/// Points in an emitted density plot.
pub const PLOT_POINTS: usize = 512;

/// Parses one value per line, or `value,weight` per line. A first line that
/// does not parse as numbers is taken as a header. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_dataset(text: &str) -> Result<EmpiricalMeasure> {
    let mut values = Vec::new();
    let mut weights = Vec::new();
    let mut columns = None;
    let mut seen_row = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let nums = match parsed {
            Ok(nums) => nums,
            Err(_) if !seen_row && columns.is_none() => {
                // header
                columns = Some(fields.len());
                continue;
            }
            Err(e) => return Err(Error::Parse { line, msg: format!("`{row}`: {e}") }),
        };
        seen_row = true;
        if nums.is_empty() || nums.len() > 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected `value` or `value,weight`, got {} fields", nums.len()),
            });
        }
        match columns {
            Some(c) if c != nums.len() => {
                return Err(Error::Parse { line, msg: format!("expected {c} fields, got {}", nums.len()) })
            }
            _ => columns = Some(nums.len()),
        }
        if let Some(v) = nums.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse { line, msg: format!("non-finite value {v}") });
        }
        values.push(nums[0]);
        if nums.len() == 2 {
            if nums[1] < 0.0 {
                return Err(Error::Parse { line, msg: format!("negative weight {}", nums[1]) });
            }
            weights.push(nums[1]);
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if weights.is_empty() {
        return build_empirical(&values, None);
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::invalid("all weights are zero"));
    }
    // zero-weight rows carry no mass
    let (v, w): (Vec<f64>, Vec<f64>) = values.into_iter().zip(weights).filter(|p| p.1 > 0.0).unzip();
    build_empirical(&v, Some(&w))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EmpiricalMeasure> {
    parse_dataset(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentModel {
    Monotone,
    LogConcave,
    Grenander,
}

/// Summary of the data a fit was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl InputDigest {
    pub fn of(m: &EmpiricalMeasure) -> Self {
        Self { count: m.len(), min: m.min(), max: m.max(), mean: m.mean() }
    }
}

/// Serialized fit. Reals are written as shortest round-trip decimals, so a
/// document reads back bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema_version: u32,
    pub model: DocumentModel,
    /// Knots of the partition of `(0, 1)`.
    pub partition: Vec<f64>,
    /// Quantile values at the knots.
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(default)]
    pub nonneg_support: bool,
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<(f64, f64)>,
    pub w2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SolverReport>,
    pub input: InputDigest,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitDocument {
    /// Document of a projection. `nonneg_support` records a restricted
    /// log-concave fit.
    pub fn from_fit(fit: &ModelFit, input: &EmpiricalMeasure, nonneg_support: bool) -> Result<Self> {
        let density = fit.density()?;
        let (c, h, warnings) = match fit {
            ModelFit::Monotone(f) => (None, None, f.warnings.clone()),
            ModelFit::LogConcave(f) => (Some(f.c), Some(f.h.clone()), Vec::new()),
        };
        let model = match fit.model() {
            Model::Monotone => DocumentModel::Monotone,
            Model::LogConcave => DocumentModel::LogConcave,
        };
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            model,
            partition: fit.partition().knots().to_vec(),
            q: fit.knots().to_vec(),
            c,
            h,
            nonneg_support: nonneg_support && model == DocumentModel::LogConcave,
            segments: density.segments,
            atoms: density.atoms,
            w2: fit.w2(),
            report: Some(fit.report().clone()),
            input: InputDigest::of(input),
            warnings,
        })
    }

    /// Document of Grenander's estimator; `w2` is its distance to the data.
    pub fn grenander(input: &EmpiricalMeasure) -> Result<Self> {
        let density = grenander(input)?;
        let Quantile::Linear(l) = grenander_quantile(input)? else { unreachable!("the minorant is piecewise linear") };
        let w2 = crate::transport::w2_distance(&Quantile::Linear(l.clone()), &Quantile::Step(input.step_quantile()));
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            model: DocumentModel::Grenander,
            partition: l.partition.knots().to_vec(),
            q: l.q,
            c: None,
            h: None,
            nonneg_support: false,
            segments: density.segments,
            atoms: density.atoms,
            w2,
            report: None,
            input: InputDigest::of(input),
            warnings: Vec::new(),
        })
    }

    pub fn density(&self) -> DensityModel {
        DensityModel { segments: self.segments.clone(), atoms: self.atoms.clone() }
    }

    fn missing(field: &str) -> Error {
        Error::invalid(format!("fit document lacks `{field}`"))
    }

    /// Rebuilds the projection; Grenander documents have none.
    pub fn to_fit(&self) -> Result<ModelFit> {
        let partition = Partition::new(self.partition.clone())?;
        let report = self.report.clone().ok_or_else(|| Self::missing("report"))?;
        match self.model {
            DocumentModel::Monotone => Ok(ModelFit::Monotone(MonotoneFit {
                partition,
                q: self.q.clone(),
                report,
                w2: self.w2,
                warnings: self.warnings.clone(),
            })),
            DocumentModel::LogConcave => Ok(ModelFit::LogConcave(LogConcaveFit {
                partition,
                c: self.c.ok_or_else(|| Self::missing("c"))?,
                h: self.h.clone().ok_or_else(|| Self::missing("h"))?,
                q: self.q.clone(),
                report,
                w2: self.w2,
            })),
            DocumentModel::Grenander => Err(Error::invalid("a Grenander document is not a projection")),
        }
    }

    pub fn quantile(&self) -> Result<Quantile> {
        let partition = Partition::new(self.partition.clone())?;
        match (self.model, &self.h) {
            (DocumentModel::LogConcave, Some(h)) if h.is_empty() => Ok(Quantile::constant(self.c.unwrap_or(self.q[0]))),
            (DocumentModel::LogConcave, Some(h)) => Ok(Quantile::LogConcave(LogConcaveQuantile::new(
                partition,
                self.c.ok_or_else(|| Self::missing("c"))?,
                h.clone(),
            )?)),
            (DocumentModel::LogConcave, None) => Err(Self::missing("h")),
            _ => Ok(Quantile::Linear(PiecewiseLinear::new(partition, self.q.clone())?)),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("schema_version").and_then(serde_json::Value::as_u64).unwrap_or(0);
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion { expected: SCHEMA_VERSION, found: found as u32 });
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn write_fit(doc: &FitDocument, path: impl AsRef<Path>) -> Result<()> {
    let mut text = doc.to_json()?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_fit(path: impl AsRef<Path>) -> Result<FitDocument> {
    FitDocument::from_json(&fs::read_to_string(path)?)
}

/// Plot CSV `x,density` on [`PLOT_POINTS`] points across the support.
pub fn plot_csv(density: &DensityModel) -> String {
    let mut out = String::from("x,density\n");
    for (x, f) in density.plot_grid(PLOT_POINTS) {
        out.push_str(&format!("{x},{f}\n"));
    }
    out
}

pub fn write_plot(density: &DensityModel, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(plot_csv(density).as_bytes())?;
    Ok(())
}
