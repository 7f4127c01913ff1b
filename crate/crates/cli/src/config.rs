//! Run configuration: JSON schema, defaults, and construction of the model
//! and lattice it describes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use liqsolve_core::{
    GeneratorSpec, Lattice, Model, Penalty, StateGrid, StepScheme, TerminalSpec, TimeGrid,
    TruncationLadder, UncertaintySet,
};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// A number given either as a JSON number or as a decimal string; `"inf"`
/// stands for `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct NumVisitor;
        impl Visitor<'_> for NumVisitor {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, a decimal string or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
                match v.trim() {
                    "inf" | "+inf" | "infinity" => Ok(Num(f64::INFINITY)),
                    s => s
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .map(Num)
                        .ok_or_else(|| E::custom(format!("invalid number {v:?}"))),
                }
            }
        }
        d.deserialize_any(NumVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Coefficients {
    /// Constant `η` and `γ`.
    Constant { eta: f64, gamma: f64 },
    /// `η = η₀ exp(x - a_max t / 2)`, `γ = 0`.
    GeometricEta { eta0: f64 },
    /// Constant `η`, `γ = g0 + g1 x²`.
    QuadraticRisk { eta: f64, g0: f64, g1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    /// Penalty off the singular set; `"inf"` makes it singular everywhere.
    pub penalty: Num,
    /// Interval `[lo, hi]` of states where the penalty is `+∞`.
    #[serde(default)]
    pub singular_set: Option<[f64; 2]>,
}

impl Default for TerminalConfig {
    fn default() -> Self {
        Self {
            penalty: Num(f64::INFINITY),
            singular_set: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Cost exponent, greater than 1.
    pub theta: Num,
    pub coefficients: Coefficients,
    #[serde(default)]
    pub terminal: TerminalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub vol_grid: Vec<f64>,
    #[serde(default)]
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_points: usize,
    /// Explicit state bounds; without them the grid is centred at
    /// `center` with the smallest stable spacing.
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub center: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            n_steps: 200,
            n_points: 101,
            x_min: None,
            x_max: None,
            center: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    /// Initial inventory.
    pub x0: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            seed: 0,
            x0: 1.0,
        }
    }
}

/// Barrier `level + call_weight (x - strike)⁺ + time_weight (T - t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbsdeConfig {
    pub level: f64,
    pub call_weight: f64,
    pub strike: f64,
    pub time_weight: f64,
    /// Index into the volatility grid.
    pub vol: usize,
}

impl Default for RbsdeConfig {
    fn default() -> Self {
        Self {
            level: 0.0,
            call_weight: 1.0,
            strike: 0.0,
            time_weight: 0.0,
            vol: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MollifyConfig {
    pub levels: Vec<u32>,
    pub lq: f64,
    /// Output covers `[-range, range]`.
    pub range: f64,
    pub samples: usize,
}

impl Default for MollifyConfig {
    fn default() -> Self {
        Self {
            levels: vec![8, 32, 128],
            lq: 1.0,
            range: 2.0,
            samples: 401,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelConfig,
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub scheme: StepScheme,
    #[serde(default)]
    pub ladder: TruncationLadder,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub rbsde: RbsdeConfig,
    #[serde(default)]
    pub mollify: MollifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "run".into()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn model(&self) -> Result<Model, CliError> {
        let m = &self.model;
        let theta = m.theta.0;
        let unc = UncertaintySet::with_constant_drift(
            self.uncertainty.vol_grid.clone(),
            self.uncertainty.drift,
        )?;
        let a_max = unc.max_vol();
        let generator = match m.coefficients {
            Coefficients::Constant { eta, gamma } => GeneratorSpec::liquidation(
                theta,
                Arc::new(move |_, _, _| eta),
                Arc::new(move |_, _, _| gamma),
            )?,
            Coefficients::GeometricEta { eta0 } => GeneratorSpec::liquidation(
                theta,
                Arc::new(move |t, x, _| eta0 * (x - 0.5 * a_max * t).exp()),
                Arc::new(|_, _, _| 0.0),
            )?,
            Coefficients::QuadraticRisk { eta, g0, g1 } => GeneratorSpec::liquidation(
                theta,
                Arc::new(move |_, _, _| eta),
                Arc::new(move |_, x, _| g0 + g1 * x * x),
            )?,
        };
        let penalty = if m.terminal.penalty.0.is_infinite() {
            Penalty::Infinite
        } else {
            Penalty::Finite(m.terminal.penalty.0)
        };
        let set = m.terminal.singular_set;
        let terminal = TerminalSpec::new(Arc::new(move |x| match set {
            Some([lo, hi]) if (lo..=hi).contains(&x) => Penalty::Infinite,
            _ => penalty,
        }));
        Ok(Model {
            name: self.name.clone(),
            generator,
            terminal,
            uncertainty: unc,
        })
    }

    /// Lattice for the configured grid; stability and model invariants are
    /// checked on every node before returning.
    pub fn lattice(&self, model: &Model) -> Result<Lattice, CliError> {
        let g = &self.grid;
        let lat = match (g.x_min, g.x_max) {
            (Some(lo), Some(hi)) => {
                if !(hi > lo) || g.n_points < 2 {
                    return Err(CliError::Validation(format!(
                        "state bounds [{lo}, {hi}] with {} points",
                        g.n_points
                    )));
                }
                let time = TimeGrid::new(g.horizon, g.n_steps)?;
                let state = StateGrid::new(lo, hi, g.n_points)?;
                Lattice::new(time, state, &model.uncertainty)?
            }
            (None, None) => Lattice::saturated(
                &model.uncertainty,
                g.horizon,
                g.n_steps,
                g.n_points,
                g.center,
            )?,
            _ => {
                return Err(CliError::Validation(
                    "give both x_min and x_max or neither".into(),
                ))
            }
        };
        let report = model.validate(lat.time(), lat.state());
        if !report.is_valid() {
            return Err(CliError::Validation(report.messages().join("; ")));
        }
        Ok(lat)
    }

    pub fn has_singular_terminal(&self) -> bool {
        self.model.terminal.penalty.0.is_infinite() || self.model.terminal.singular_set.is_some()
    }

    pub fn has_partial_singular_set(&self) -> bool {
        self.model.terminal.singular_set.is_some()
    }
}
