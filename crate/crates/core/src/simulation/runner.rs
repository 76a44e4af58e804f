//! Replication campaigns: per-replication estimation and aggregation.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{calibrated_model, multinomial_model, DesignTag, EstimatorSpec, McDesign};
use super::naive::{logit_mle, nlls, ols_polynomial, NaiveFit};
use crate::correction::CorrectionScheme;
use crate::effects::{delta_method_at, NORMAL_975};
use crate::error::{MermError, Result};
use crate::gmm::{estimate, EstimateConfig, Problem};
use crate::model::dataset::Dataset;
use crate::model::moment::MomentFunction;
use crate::model::residual::{regression_moments, PolynomialRegression, ProbitRegression, RationalRegression, Regression};
use crate::model::{BasisKind, InstrumentBasis};

/// Environment variable holding the worker count of replication campaigns.
pub const WORKERS_ENV: &str = "MERM_WORKERS";

/// Point estimates and standard errors of every target in one replication.
pub type Outcome = Vec<(f64, f64)>;

fn regression(tag: DesignTag) -> Arc<dyn Regression> {
    match tag {
        DesignTag::Polynomial => Arc::new(PolynomialRegression { degree: 3 }),
        DesignTag::RationalFraction => Arc::new(RationalRegression),
        DesignTag::Probit => Arc::new(ProbitRegression),
        _ => Arc::new(PolynomialRegression { degree: 1 }),
    }
}

/// K2 basis for second-order corrections, the full cubic K4 basis otherwise.
pub fn basis_for_order(k: usize) -> BasisKind {
    if k <= 2 {
        BasisKind::K2
    } else {
        BasisKind::K4
    }
}

/// The uncorrected moment function a design uses with a correction of order `k`.
///
/// The linear design keeps `g` cubic in `x` below order 4 (full quadratic
/// basis), so a second-order correction is exact under symmetric errors.
pub fn design_moments(design: &McDesign, data: &Dataset, k: usize) -> Result<Arc<dyn MomentFunction>> {
    let kind = match design.tag {
        DesignTag::LinearAttenuation if k < 4 => BasisKind::Custom {
            degree: 2,
            interactions: true,
        },
        _ => basis_for_order(k),
    };
    Ok(match design.tag {
        DesignTag::MultinomialLogit => Arc::new(multinomial_model(kind)?),
        DesignTag::CalibratedLogit => Arc::new(calibrated_model(kind)?),
        tag => Arc::new(regression_moments(
            regression(tag),
            InstrumentBasis::new(kind),
            data.side_names(),
            "y",
            "z",
            &[],
        )?),
    })
}

/// The design's naive estimator on one sample.
pub fn naive_fit(design: &McDesign, data: &Dataset) -> Result<NaiveFit> {
    let p = design.theta0.len();
    match design.tag {
        DesignTag::Polynomial => ols_polynomial(data, "y", 3),
        DesignTag::LinearAttenuation => ols_polynomial(data, "y", 1),
        DesignTag::RationalFraction | DesignTag::Probit => nlls(regression(design.tag).as_ref(), data, "y", &vec![0.0; p], 200),
        DesignTag::MultinomialLogit => logit_mle(&multinomial_model(BasisKind::K2)?, data, &vec![0.0; p], 100),
        DesignTag::CalibratedLogit => logit_mle(&calibrated_model(BasisKind::K2)?, data, &vec![0.0; p], 100),
    }
}

/// Estimates and standard errors of all targets from `(θ̂, Σ̂_θ)`.
fn outcome(design: &McDesign, theta: &[f64], sigma: &nalgebra::DMatrix<f64>, n: usize) -> Result<Outcome> {
    let p = theta.len();
    let mut out: Outcome = (0..p).map(|j| (theta[j], (sigma[(j, j)].max(0.0) / n as f64).sqrt())).collect();
    if design.tag.is_logit() {
        let f = |t: &[f64]| design.effects(t);
        let eff = delta_method_at(theta, sigma, n, &f, None)?;
        out.extend(eff.iter().map(|e| (e.point, e.se)));
    }
    if let Some(i) = out.iter().position(|(e, s)| !e.is_finite() || !s.is_finite() || *s <= 0.0) {
        return Err(MermError::NonFinite {
            what: "estimate or standard error".into(),
            row: i,
        });
    }
    Ok(out)
}

/// Runs one estimator on one sample.
pub fn run_estimator(design: &McDesign, spec: &EstimatorSpec, data: &Dataset) -> Result<Outcome> {
    let naive = naive_fit(design, data)?;
    match spec {
        EstimatorSpec::Naive => outcome(design, &naive.theta, &naive.sigma, naive.n),
        EstimatorSpec::Merm { k, policy } => {
            let model = design_moments(design, data, *k)?;
            let problem = Problem::new(model, CorrectionScheme::classical_scalar(*k)?, data)?;
            let config = EstimateConfig {
                policy: policy.clone(),
                optimizer: design.optimizer.clone(),
                pilot: Some(naive.theta.clone()),
                ..EstimateConfig::default()
            };
            let r = estimate(&problem, &config)?;
            let p = r.theta.len();
            let sigma_theta = r.sigma.view((0, 0), (p, p)).into_owned();
            outcome(design, &r.theta, &sigma_theta, r.n)
        }
    }
}

/// All estimators on replication `rep`; the naive fit is shared.
pub fn run_replication(design: &McDesign, rep: u64) -> Vec<Option<Outcome>> {
    let data = match design.generate(rep) {
        Ok(d) => d,
        Err(_) => return vec![None; design.estimators.len()],
    };
    design
        .estimators
        .iter()
        .map(|spec| run_estimator(design, spec, &data).ok())
        .collect()
}

/// Monte Carlo summary of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: String,
    pub truth: f64,
    pub bias: f64,
    pub std: f64,
    pub rmse: f64,
    /// Rejection rate of the nominal 5% two-sided t-test of the truth.
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub successes: usize,
    pub failures: usize,
    pub targets: Vec<TargetSummary>,
}

impl EstimatorSummary {
    /// Monte Carlo standard error of the bias of target `j`.
    pub fn bias_se(&self, j: usize) -> f64 {
        self.targets[j].std / (self.successes as f64).sqrt()
    }

    pub fn target(&self, name: &str) -> Option<&TargetSummary> {
        self.targets.iter().find(|t| t.target == name)
    }
}

/// Aggregated campaign results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub design: String,
    pub reps: usize,
    /// Display scale of bias, std and RMSE in rendered tables.
    pub scale: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl McResult {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == label)
    }
}

/// Summarizes the successful replications of one estimator. Moments use the
/// divisor `R`, so `rmse² = bias² + std²`.
pub fn aggregate(label: &str, targets: &[(String, f64)], outcomes: &[Option<Outcome>]) -> EstimatorSummary {
    let ok: Vec<&Outcome> = outcomes.iter().flatten().collect();
    let r = ok.len() as f64;
    let summaries = targets
        .iter()
        .enumerate()
        .map(|(j, (name, truth))| {
            let mean = ok.iter().map(|o| o[j].0).sum::<f64>() / r;
            let var = ok.iter().map(|o| (o[j].0 - mean).powi(2)).sum::<f64>() / r;
            let bias = mean - truth;
            let rejections = ok.iter().filter(|o| ((o[j].0 - truth) / o[j].1).abs() > NORMAL_975).count();
            TargetSummary {
                target: name.clone(),
                truth: *truth,
                bias,
                std: var.sqrt(),
                rmse: (bias * bias + var).sqrt(),
                size: rejections as f64 / r,
            }
        })
        .collect();
    EstimatorSummary {
        estimator: label.to_string(),
        successes: ok.len(),
        failures: outcomes.len() - ok.len(),
        targets: summaries,
    }
}

/// Worker count from `MERM_WORKERS`, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&w| w > 0)
}

/// Runs `reps` replications with the worker count from the environment.
pub fn run_replications(design: &McDesign, reps: usize) -> Result<McResult> {
    run_replications_with_workers(design, reps, workers_from_env())
}

/// Runs `reps` replications on `workers` threads (default: rayon's).
/// Replication `r` always uses stream `r` of the design seed and results
/// are aggregated in replication order, so output does not depend on the
/// worker count.
pub fn run_replications_with_workers(design: &McDesign, reps: usize, workers: Option<usize>) -> Result<McResult> {
    design.validate()?;
    if reps < 2 {
        return Err(MermError::invalid(format!("need at least 2 replications, got {reps}")));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| MermError::invalid(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<Vec<Option<Outcome>>> =
        pool.install(|| (0..reps as u64).into_par_iter().map(|r| run_replication(design, r)).collect());
    let targets = design.targets();
    let estimators: Vec<EstimatorSummary> = design
        .estimators
        .iter()
        .enumerate()
        .map(|(e, spec)| {
            let col: Vec<Option<Outcome>> = rows.iter().map(|row| row[e].clone()).collect();
            aggregate(&spec.label(design.tag), &targets, &col)
        })
        .collect();
    if estimators.iter().all(|e| e.successes == 0) {
        return Err(MermError::AllReplicationsFailed(reps));
    }
    Ok(McResult {
        design: design.tag.name().to_string(),
        reps,
        scale: design.tag.table_scale(),
        estimators,
    })
}
