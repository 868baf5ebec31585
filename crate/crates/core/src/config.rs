//! Run configuration read from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::action::ActionOptions;
use crate::asymptotics::AsymptoticOptions;
use crate::bvsolve::SolveOptions;
use crate::error::{Error, Result};
use crate::fio::FioOptions;
use crate::flow::{FlowTolerances, HamiltonianSystem};
use crate::oracle::OracleOptions;
use crate::potential::{Extrapolation, PotentialModel};
use crate::relation::SampleOptions;

/// Potential block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialConfig {
    Zero,
    Gaussian {
        amplitude: f64,
        #[serde(default = "one")]
        width: f64,
        #[serde(default = "two")]
        rho: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    CompactBump {
        amplitude: f64,
        radius: f64,
        #[serde(default = "two")]
        rho: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    YukawaSmoothed {
        amplitude: f64,
        length: f64,
        smoothing: f64,
        #[serde(default = "two")]
        rho: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    Tabulated {
        table: PathBuf,
        #[serde(default = "two")]
        rho: f64,
        #[serde(default)]
        extrapolation: Extrapolation,
    },
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl PotentialConfig {
    /// Builds the model; relative table paths resolve against `base`.
    pub fn build(&self, dimension: usize, base: &Path) -> Result<PotentialModel> {
        let field = |e: Error| Error::Config { field: "potential".into(), message: e.to_string() };
        let (model, center) = match self {
            Self::Zero => (PotentialModel::zero(dimension), None),
            Self::Gaussian { amplitude, width, rho, center } => {
                (PotentialModel::gaussian(dimension, *amplitude, *width, *rho), center.as_ref())
            }
            Self::CompactBump { amplitude, radius, rho, center } => {
                (PotentialModel::compact_bump(dimension, *amplitude, *radius, *rho), center.as_ref())
            }
            Self::YukawaSmoothed { amplitude, length, smoothing, rho, center } => (
                PotentialModel::yukawa_smoothed(dimension, *amplitude, *length, *smoothing, *rho),
                center.as_ref(),
            ),
            Self::Tabulated { table, rho, extrapolation } => {
                let text = std::fs::read_to_string(base.join(table)).map_err(|e| Error::Config {
                    field: "potential.table".into(),
                    message: format!("{}: {e}", table.display()),
                })?;
                (PotentialModel::tabulated_from_text(dimension, &text, *rho, *extrapolation), None)
            }
        };
        let model = model.map_err(field)?;
        match center {
            Some(c) => model.centered_at(c).map_err(field),
            None => Ok(model),
        }
    }
}

/// Closed interval with a point count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Range {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        (0..self.count).map(|i| self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64).collect()
    }
}

/// Direction and impact grids. Angles are polar angles in radians (`n = 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub omega: Range,
    pub theta: Range,
    pub z: Range,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            omega: Range { min: -0.05, max: 0.05, count: 3 },
            theta: Range { min: 0.8, max: 2.0, count: 13 },
            z: Range { min: 0.2, max: 1.9, count: 41 },
        }
    }
}

/// Tolerances block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub flow: FlowTolerances,
    pub asymptotic: AsymptoticOptions,
    pub solve: SolveOptions,
    pub action: ActionOptions,
    pub oracle: OracleOptions,
}

/// Torus order test block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FioConfig {
    pub resolution: usize,
    pub options: FioOptions,
    /// Impact range and count per incoming angle of the relation sample.
    pub relation_z: Range,
    pub relation_omega: Range,
}

impl Default for FioConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            options: FioOptions::default(),
            relation_z: Range { min: 0.15, max: 2.2, count: 206 },
            relation_omega: Range { min: -0.45, max: 0.45, count: 91 },
        }
    }
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub lambda: f64,
    /// Seeds every randomized sampling order.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub h_values: Vec<f64>,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub fio: FioConfig,
}

fn default_dimension() -> usize {
    2
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

/// Configuration shipped with the tool.
pub const DEFAULT_CONFIG: &str = r#"dimension = 2
lambda = 0.5
seed = 7
output = "output"
h_values = [0.2, 0.14, 0.1, 0.07, 0.05]

[potential]
kind = "gaussian"
amplitude = 1.0
width = 1.0
rho = 2.0

[grid]
omega = { min = -0.05, max = 0.05, count = 3 }
theta = { min = 0.8, max = 2.0, count = 13 }
z = { min = 0.2, max = 1.9, count = 41 }
"#;

fn check(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config { field: field.into(), message: message.into() })
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("shipped configuration is valid")
    }
}

impl RunConfig {
    /// Parses and validates TOML text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            field: e.span().map_or_else(|| "config".to_string(), |s| locate(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { field: "config".into(), message: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        check(self.dimension == 2 || self.dimension == 3, "dimension", "must be 2 or 3")?;
        check(self.lambda > 0.0 && self.lambda.is_finite(), "lambda", "must be positive")?;
        check(!self.h_values.is_empty(), "h_values", "must not be empty")?;
        check(self.h_values.iter().all(|h| *h > 0.0 && h.is_finite()), "h_values", "must be positive")?;
        check(self.h_values.windows(2).all(|w| w[1] < w[0]), "h_values", "must be strictly decreasing")?;
        for (name, r) in [("grid.omega", &self.grid.omega), ("grid.theta", &self.grid.theta), ("grid.z", &self.grid.z)]
            .into_iter()
            .chain([("fio.relation_z", &self.fio.relation_z), ("fio.relation_omega", &self.fio.relation_omega)])
        {
            check(r.count >= 1, name, "count must be at least 1")?;
            check(r.min.is_finite() && r.max.is_finite(), name, "bounds must be finite")?;
            check(r.max > r.min || (r.count == 1 && r.max == r.min), name, "range is empty")?;
        }
        check(self.fio.resolution >= 8, "fio.resolution", "must be at least 8")?;
        Ok(())
    }

    pub fn potential_model(&self, base: &Path) -> Result<PotentialModel> {
        self.potential.build(self.dimension, base)
    }

    pub fn system(&self, base: &Path) -> Result<HamiltonianSystem> {
        HamiltonianSystem::with_tolerances(self.potential_model(base)?, self.lambda, self.tolerances.flow)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { asymptotic: self.tolerances.asymptotic, ..self.tolerances.solve }
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions { asymptotic: self.tolerances.asymptotic, ..Default::default() }
    }
}

/// `line N` plus the key being parsed at byte offset `pos`.
fn locate(text: &str, pos: usize) -> String {
    let pos = pos.min(text.len());
    let line = text[..pos].matches('\n').count() + 1;
    let key = text
        .lines()
        .nth(line - 1)
        .and_then(|l| l.split('=').next())
        .map(str::trim)
        .filter(|k| !k.is_empty() && !k.starts_with('['))
        .unwrap_or("");
    if key.is_empty() {
        format!("line {line}")
    } else {
        format!("line {line}: {key}")
    }
}
