//! Execution of a validated config and the artifacts each mode writes.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use merm::correction::CorrectionScheme;
use merm::effects::{average_effect_corrected, bias_bound, rank_diagnostics, BiasBoundReport, BoundRoute, EffectSpec, RankDiagnostics};
use merm::gmm::{estimate, EstimateConfig, EstimationReport, Problem};
use merm::model::{read_csv, regression_moments, PolynomialRegression, ProbitRegression, RationalRegression, Regression};
use merm::simulation::{emit_table, run_replications, McDesign, McResult, TableFormat};
use merm::MermError;
use serde::Serialize;

use crate::config::{side_names, Mode, RegressionSpec, RouteName, RunConfig, SCHEMA_VERSION};
use crate::expr::Formula;

/// A failed run and the exit code it maps to.
#[derive(Debug)]
pub enum RunError {
    /// Malformed config or input data (exit 2).
    Validation(Vec<String>),
    /// Estimation or simulation failed numerically (exit 3).
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }

    pub fn messages(&self) -> Vec<String> {
        match self {
            RunError::Validation(v) => v.clone(),
            RunError::Numerical(m) => vec![m.clone()],
        }
    }
}

impl From<MermError> for RunError {
    fn from(e: MermError) -> Self {
        if e.is_numerical() {
            RunError::Numerical(e.to_string())
        } else {
            RunError::Validation(vec![e.to_string()])
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Validation(vec![format!("{}: {e}", path.display())])
}

/// A reported average effect.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectReport {
    pub name: String,
    pub merm: f64,
    pub merm_se: f64,
    pub naive: f64,
    pub naive_se: f64,
}

/// JSON report of estimate and bias-bound runs.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub schema_version: u32,
    pub config: RunConfig,
    pub estimation: EstimationReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub effects: Vec<EffectReport>,
    pub rank: Option<RankDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_bound: Option<BiasBoundReport>,
}

/// JSON report of simulate runs.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    pub schema_version: u32,
    pub config: RunConfig,
    pub design: McDesign,
    pub result: McResult,
}

/// Paths written by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

/// Validates and runs a config, writing its artifacts.
pub fn run(config: &RunConfig) -> Result<Artifacts, RunError> {
    let diags = config.diagnostics();
    if !diags.is_empty() {
        return Err(RunError::Validation(diags));
    }
    let dir = &config.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    match config.mode {
        Mode::Estimate | Mode::BiasBound => {
            let report = run_estimate(config)?;
            let path = dir.join("report.json");
            write_json(&path, &report)?;
            Ok(Artifacts { files: vec![path] })
        }
        Mode::Simulate => run_simulate(config),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    serde_json::to_writer_pretty(file, value).map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn missing(field: &str) -> RunError {
    RunError::Validation(vec![format!("{field}: required")])
}

fn regression(spec: &RegressionSpec, side: &[String]) -> Result<Arc<dyn Regression>, RunError> {
    Ok(match spec {
        RegressionSpec::Polynomial { degree } => Arc::new(PolynomialRegression { degree: *degree }),
        RegressionSpec::RationalFraction => Arc::new(RationalRegression),
        RegressionSpec::Probit => Arc::new(ProbitRegression),
        RegressionSpec::Expression { formula, parameters } => {
            let f = Formula::parse(formula, side, *parameters).map_err(|e| RunError::Validation(vec![e]))?;
            Arc::new(f.into_regression(*parameters))
        }
    })
}

fn effect_spec(formula: &str, side: &[String], p: usize) -> Result<EffectSpec, RunError> {
    let f = Formula::parse(formula, side, p).map_err(|e| RunError::Validation(vec![e]))?;
    Ok(EffectSpec::new(1, move |obs, theta, out| {
        out[0] = f.eval(obs.x0(), obs.s, theta).unwrap_or(f64::NAN);
    }))
}

fn run_estimate(config: &RunConfig) -> Result<EstimateOutput, RunError> {
    let source = config.data.as_ref().ok_or_else(|| missing("data"))?;
    let model = config.model.as_ref().ok_or_else(|| missing("model"))?;
    let regime = config.scheme.clone().ok_or_else(|| missing("scheme"))?;
    let file = File::open(&source.path).map_err(|e| io_error(&source.path, e))?;
    let data = read_csv(file, &source.columns)?;
    let side = side_names(source);
    let extras: Vec<&str> = model.extra_instruments.iter().map(String::as_str).collect();
    let g = regression_moments(
        regression(&model.regression, &side)?,
        model.instrument_basis(),
        data.side_names(),
        "y",
        "z",
        &extras,
    )?;
    let scheme = CorrectionScheme::new(regime)?;
    let problem = Problem::new(Arc::new(g), scheme, &data)?;
    let est_config = EstimateConfig {
        policy: config.weighting.clone(),
        optimizer: config.resolved_optimizer(),
        theta_start: config.theta_start.clone(),
        ..EstimateConfig::default()
    };
    let result = estimate(&problem, &est_config)?;
    let p = result.theta.len();
    let effects = config
        .effects
        .iter()
        .map(|e| {
            let spec = effect_spec(&e.formula, &side, p)?;
            let a = average_effect_corrected(&spec, &result, &problem)?;
            Ok(EffectReport {
                name: e.name.clone(),
                merm: a.merm[0],
                merm_se: a.merm_se[0],
                naive: a.naive[0],
                naive_se: a.naive_se[0],
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let bound = match (config.mode, &config.bias_bound) {
        (Mode::BiasBound, Some(b)) => {
            let route = match b.route {
                RouteName::Gaussian => BoundRoute::Gaussian,
                RouteName::APriori => BoundRoute::APriori,
            };
            Some(bias_bound(&result, &problem, &b.v, b.kurtosis_bound, b.symmetric, route)?)
        }
        _ => None,
    };
    Ok(EstimateOutput {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        estimation: result.to_report(),
        effects,
        rank: rank_diagnostics(&problem, &result, None).ok(),
        bias_bound: bound,
    })
}

fn table_extension(format: TableFormat) -> &'static str {
    match format {
        TableFormat::Text => "txt",
        TableFormat::Csv => "table.csv",
        TableFormat::Markdown => "md",
    }
}

fn run_simulate(config: &RunConfig) -> Result<Artifacts, RunError> {
    let sim = config.simulation.as_ref().ok_or_else(|| missing("simulation"))?;
    let design = config.resolved_design().ok_or_else(|| missing("simulation"))?;
    let result = run_replications(&design, sim.reps)?;
    let dir = &config.output.dir;
    let csv = dir.join("results.csv");
    let json = dir.join("results.json");
    let table = dir.join(format!("table.{}", table_extension(sim.table_format)));
    write_text(&csv, &emit_table(&result, TableFormat::Csv))?;
    write_json(
        &json,
        &SimulateOutput {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            design,
            result: result.clone(),
        },
    )?;
    write_text(&table, &emit_table(&result, sim.table_format))?;
    Ok(Artifacts {
        files: vec![csv, json, table],
    })
}
