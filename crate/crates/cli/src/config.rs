//! Run configuration: parsing, defaults and whole-file validation.

use std::path::{Path, PathBuf};

use merm::correction::{CorrectionScheme, Regime};
use merm::gmm::{OptimizerSettings, WeightingPolicy};
use merm::model::{BasisKind, ColumnRoles, InstrumentBasis};
use merm::simulation::{DesignTag, EstimatorSpec, McDesign, TableFormat};
use serde::{Deserialize, Serialize};

use crate::expr::Formula;

/// Schema version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Estimate,
    Simulate,
    BiasBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    pub columns: ColumnRoles,
}

/// Regression function `ρ` of the moments `(y − ρ(x, w, θ)) φ(x, z, extras)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressionSpec {
    Polynomial { degree: usize },
    RationalFraction,
    Probit,
    /// A formula in `x`, the side roles and `theta1..thetap`.
    Expression { formula: String, parameters: usize },
}

impl RegressionSpec {
    pub fn dim_theta(&self) -> usize {
        match self {
            RegressionSpec::Polynomial { degree } => degree + 1,
            RegressionSpec::RationalFraction => 3,
            RegressionSpec::Probit => 2,
            RegressionSpec::Expression { parameters, .. } => *parameters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub regression: RegressionSpec,
    #[serde(default = "default_basis")]
    pub basis: BasisKind,
    /// Divides `x` inside the instrument basis.
    #[serde(default)]
    pub x_scale: Option<f64>,
    /// Side roles appended to the instruments as-is.
    #[serde(default)]
    pub extra_instruments: Vec<String>,
}

fn default_basis() -> BasisKind {
    BasisKind::K2
}

impl ModelSpec {
    pub fn instrument_basis(&self) -> InstrumentBasis {
        let b = InstrumentBasis::new(self.basis);
        match self.x_scale {
            Some(s) => b.with_x_scale(s),
            None => b,
        }
    }

    /// Number of moment conditions.
    pub fn m(&self) -> usize {
        self.instrument_basis().len() + self.extra_instruments.len()
    }
}

/// An average effect `mean λ(x, w, θ)` to report with its corrected version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectConfig {
    pub name: String,
    pub formula: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteName {
    Gaussian,
    #[default]
    APriori,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasBoundConfig {
    /// Direction `v` of the bounded linear combination `v'β`.
    pub v: Vec<f64>,
    /// Bound on the standardized moment of the error of order `K̄`.
    pub kurtosis_bound: f64,
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default)]
    pub route: RouteName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub design: DesignTag,
    pub reps: usize,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorSpec>>,
    #[serde(default)]
    pub optimizer: Option<OptimizerSettings>,
    #[serde(default = "default_table_format")]
    pub table_format: TableFormat,
}

fn default_table_format() -> TableFormat {
    TableFormat::Text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory receiving all artifacts; created if missing.
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mode: Mode,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub scheme: Option<Regime>,
    #[serde(default)]
    pub weighting: WeightingPolicy,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub theta_start: Option<Vec<f64>>,
    #[serde(default)]
    pub effects: Vec<EffectConfig>,
    #[serde(default)]
    pub bias_bound: Option<BiasBoundConfig>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Parses a config; syntax and type errors carry line and column.
pub fn parse_config(text: &str) -> Result<RunConfig, String> {
    serde_json::from_str(text).map_err(|e| format!("config: {e}"))
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text)
}

/// Side roles a data source provides, in storage order.
pub fn side_names(data: &DataSource) -> Vec<String> {
    data.columns.side_roles().into_iter().map(|(role, _)| role).collect()
}

impl RunConfig {
    /// Applies command-line overrides.
    pub fn with_overrides(mut self, reps: Option<usize>, seed: Option<u64>) -> Self {
        if let (Some(r), Some(sim)) = (reps, self.simulation.as_mut()) {
            sim.reps = r;
        }
        if seed.is_some() {
            self.seed = seed;
        }
        self
    }

    /// Optimizer settings with the run seed applied.
    pub fn resolved_optimizer(&self) -> OptimizerSettings {
        let mut o = self.optimizer.clone();
        if let Some(s) = self.seed {
            o.seed = s;
        }
        o
    }

    /// The simulation design with defaults filled in from its tag.
    pub fn resolved_design(&self) -> Option<McDesign> {
        let sim = self.simulation.as_ref()?;
        let mut d = McDesign::new(sim.design);
        if let Some(n) = sim.n {
            d.n = n;
        }
        if let Some(t) = sim.tau {
            d.tau = t;
        }
        if let Some(t) = &sim.theta0 {
            d.theta0 = t.clone();
        }
        if let Some(e) = &sim.estimators {
            d.estimators = e.clone();
        }
        if let Some(o) = &sim.optimizer {
            d.optimizer = o.clone();
        }
        if let Some(s) = self.seed {
            d.seed = s;
        }
        Some(d)
    }

    /// Every violation in the config; empty means runnable.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!(
                "schema_version: {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        check_output(&self.output.dir, &mut out);
        match self.mode {
            Mode::Estimate | Mode::BiasBound => self.estimation_diagnostics(&mut out),
            Mode::Simulate => self.simulation_diagnostics(&mut out),
        }
        out
    }

    fn estimation_diagnostics(&self, out: &mut Vec<String>) {
        let data = match &self.data {
            Some(d) => {
                if !d.path.is_file() {
                    out.push(format!("data.path: {} is not a readable file", d.path.display()));
                }
                if d.columns.x.len() != 1 {
                    out.push(format!(
                        "data.columns.x: regression models take exactly one mismeasured covariate, got {}",
                        d.columns.x.len()
                    ));
                }
                if d.columns.y.is_none() {
                    out.push("data.columns.y: the outcome column is required".into());
                }
                if d.columns.z.is_none() {
                    out.push("data.columns.z: the instrument column is required".into());
                }
                Some(d)
            }
            None => {
                out.push(format!("data: required in {} mode", self.mode_name()));
                None
            }
        };
        let scheme = match &self.scheme {
            Some(r) => {
                let k = r.k();
                if k < 2 {
                    out.push(format!("scheme.k: K must be ≥ 2, got {k}"));
                    None
                } else {
                    match CorrectionScheme::new(r.clone()) {
                        Ok(s) => {
                            if s.d() != 1 {
                                out.push(format!(
                                    "scheme: regression models are scalar in x, but the scheme has d = {}",
                                    s.d()
                                ));
                            }
                            Some(s)
                        }
                        Err(e) => {
                            out.push(format!("scheme: {e}"));
                            None
                        }
                    }
                }
            }
            None => {
                out.push(format!("scheme: required in {} mode", self.mode_name()));
                None
            }
        };
        let Some(model) = &self.model else {
            out.push(format!("model: required in {} mode", self.mode_name()));
            return;
        };
        let p = model.regression.dim_theta();
        if p == 0 {
            out.push("model.regression: at least one parameter is required".into());
        }
        if let Some(s) = model.x_scale {
            if !(s.is_finite() && s > 0.0) {
                out.push(format!("model.x_scale: must be positive, got {s}"));
            }
        }
        if let Some(s) = &scheme {
            let params = p + s.nuisance_dim();
            let m = model.m();
            if m < params {
                out.push(format!(
                    "model: overidentification fails: m = {m} moments but dim(theta) + {} nuisance = {params} parameters; \
                     corrected moments identify theta only when m ≥ dim(theta) + K − 1 (use a larger basis or extra instruments)",
                    s.nuisance_dim()
                ));
            }
        }
        if let Some(t) = &self.theta_start {
            if t.len() != p {
                out.push(format!("theta_start: expected {p} values, got {}", t.len()));
            }
        }
        let names = data.map(side_names).unwrap_or_default();
        if data.is_some() {
            for e in &model.extra_instruments {
                if !names.contains(e) || e == "y" {
                    out.push(format!("model.extra_instruments: '{e}' is not a side role of the data"));
                }
            }
            if let RegressionSpec::Polynomial { degree } = model.regression {
                if degree == 0 {
                    out.push("model.regression.degree: must be at least 1".into());
                }
            }
            if let RegressionSpec::Expression { formula, .. } = &model.regression {
                if let Err(e) = Formula::parse(formula, &names, p) {
                    out.push(format!("model.regression.formula: {e}"));
                }
            }
            for (i, eff) in self.effects.iter().enumerate() {
                if let Err(e) = Formula::parse(&eff.formula, &names, p) {
                    out.push(format!("effects[{i}].formula: {e}"));
                }
            }
        }
        if self.mode == Mode::BiasBound {
            match &self.bias_bound {
                Some(b) => {
                    if let Some(s) = &scheme {
                        if !s.is_classical() || s.d() != 1 {
                            out.push("bias_bound: requires the classical scalar regime".into());
                        }
                        let dim = p + s.nuisance_dim();
                        if b.v.len() != dim {
                            out.push(format!("bias_bound.v: expected {dim} entries (theta then nuisance), got {}", b.v.len()));
                        }
                    }
                    if !(b.kurtosis_bound >= 1.0) {
                        out.push(format!("bias_bound.kurtosis_bound: must be at least 1, got {}", b.kurtosis_bound));
                    }
                }
                None => out.push("bias_bound: required in bias-bound mode".into()),
            }
        }
        if self.simulation.is_some() {
            out.push(format!("simulation: not used in {} mode", self.mode_name()));
        }
    }

    fn simulation_diagnostics(&self, out: &mut Vec<String>) {
        let Some(sim) = &self.simulation else {
            out.push("simulation: required in simulate mode".into());
            return;
        };
        if sim.reps < 2 {
            out.push(format!("simulation.reps: at least 2 replications are required, got {}", sim.reps));
        }
        if let Some(es) = &sim.estimators {
            if es.is_empty() {
                out.push("simulation.estimators: at least one estimator is required".into());
            }
            for (i, e) in es.iter().enumerate() {
                if let EstimatorSpec::Merm { k, .. } = e {
                    if *k < 2 {
                        out.push(format!("simulation.estimators[{i}].k: K must be ≥ 2, got {k}"));
                    }
                }
            }
        }
        if let Some(d) = self.resolved_design() {
            let has_bad_k = d.estimators.iter().any(|e| matches!(e, EstimatorSpec::Merm { k, .. } if *k < 2));
            if !has_bad_k && !d.estimators.is_empty() {
                if let Err(e) = d.validate() {
                    out.push(format!("simulation: {e}"));
                }
            }
        }
        for (field, set) in [
            ("data", self.data.is_some()),
            ("model", self.model.is_some()),
            ("scheme", self.scheme.is_some()),
            ("bias_bound", self.bias_bound.is_some()),
            ("effects", !self.effects.is_empty()),
        ] {
            if set {
                out.push(format!("{field}: not used in simulate mode"));
            }
        }
    }

    fn mode_name(&self) -> &'static str {
        match self.mode {
            Mode::Estimate => "estimate",
            Mode::Simulate => "simulate",
            Mode::BiasBound => "bias-bound",
        }
    }
}

/// The output directory must exist as a directory or be creatable under an existing one.
fn check_output(dir: &Path, out: &mut Vec<String>) {
    if dir.as_os_str().is_empty() {
        out.push("output.dir: must not be empty".into());
        return;
    }
    if dir.exists() {
        if !dir.is_dir() {
            out.push(format!("output.dir: {} exists and is not a directory", dir.display()));
        } else if std::fs::metadata(dir).map(|m| m.permissions().readonly()).unwrap_or(true) {
            out.push(format!("output.dir: {} is not writable", dir.display()));
        }
        return;
    }
    let parent = dir
        .ancestors()
        .skip(1)
        .find(|a| !a.as_os_str().is_empty() && a.exists())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    if !parent.is_dir() {
        out.push(format!("output.dir: cannot create {} under {}", dir.display(), parent.display()));
    }
}
