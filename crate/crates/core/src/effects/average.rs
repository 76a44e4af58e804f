use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MermError, Result};
use crate::gmm::{EstimationResult, Problem};
use crate::linalg::inverse_spd;
use crate::model::dataset::Observation;
use crate::model::multi_index::MultiIndex;
use crate::model::numdiff::{self, StepPolicy};

type LambdaFn = dyn Fn(&Observation<'_>, &[f64], &mut [f64]) + Send + Sync;
type LambdaDerivFn = dyn Fn(&Observation<'_>, &[f64], &MultiIndex, &mut [f64]) + Send + Sync;

/// A per-observation quantity `λ(x, s, θ)` whose sample mean is the target.
#[derive(Clone)]
pub struct EffectSpec {
    dim: usize,
    lambda: Arc<LambdaFn>,
    x_derivative: Option<Arc<LambdaDerivFn>>,
    max_order: usize,
    step: StepPolicy,
}

impl std::fmt::Debug for EffectSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EffectSpec")
            .field("dim", &self.dim)
            .field("analytic_x_derivatives", &self.x_derivative.is_some())
            .field("max_order", &self.max_order)
            .finish()
    }
}

impl EffectSpec {
    /// `lambda` writes the `dim` outputs; x-derivatives default to finite differences.
    pub fn new<F>(dim: usize, lambda: F) -> Self
    where
        F: Fn(&Observation<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            lambda: Arc::new(lambda),
            x_derivative: None,
            max_order: crate::model::moment::MAX_NUMERIC_ORDER,
            step: StepPolicy::default(),
        }
    }

    /// Analytic `∂_κ λ` for `|κ| ≤ max_order`.
    pub fn with_x_derivatives<F>(mut self, max_order: usize, f: F) -> Self
    where
        F: Fn(&Observation<'_>, &[f64], &MultiIndex, &mut [f64]) + Send + Sync + 'static,
    {
        self.x_derivative = Some(Arc::new(f));
        self.max_order = max_order;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, obs: &Observation<'_>, theta: &[f64], out: &mut [f64]) {
        (self.lambda)(obs, theta, out)
    }

    pub fn x_derivative(&self, obs: &Observation<'_>, theta: &[f64], kappa: &MultiIndex, out: &mut [f64]) -> Result<()> {
        if kappa.order() > self.max_order {
            return Err(MermError::UnsupportedOrder {
                requested: kappa.order(),
                supported: self.max_order,
            });
        }
        match &self.x_derivative {
            Some(f) => {
                f(obs, theta, kappa, out);
                Ok(())
            }
            None => numdiff::partial(
                |x, o| {
                    (self.lambda)(&Observation { x, s: obs.s }, theta, o);
                    Ok(())
                },
                obs.x,
                &kappa.0,
                self.dim,
                &self.step,
                out,
            ),
        }
    }
}

/// Corrected and naive sample averages of an effect with delta-method errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageEffect {
    pub merm: Vec<f64>,
    pub merm_se: Vec<f64>,
    pub naive: Vec<f64>,
    pub naive_se: Vec<f64>,
}

/// Per-row `λ − Σ_j c_j ∂_{κ_j} λ` (corrected) or `λ` (naive), n x dim.
fn effect_rows(effect: &EffectSpec, problem: &Problem<'_>, beta: &[f64], corrected: bool) -> Result<DMatrix<f64>> {
    let p = problem.p();
    let (theta, nuisance) = beta.split_at(p);
    let scheme = problem.scheme();
    let kappas = scheme.kappas();
    let data = problem.data();
    let k = effect.dim();
    let mut rows = DMatrix::zeros(data.n(), k);
    let mut v = vec![0.0; k];
    let mut dv = vec![0.0; k];
    let mut c = vec![0.0; kappas.len()];
    for i in 0..data.n() {
        let obs = data.obs(i);
        effect.value(&obs, theta, &mut v);
        if corrected {
            scheme.coefficients(obs.x, obs.s, nuisance, &mut c, None);
            for (kappa, cj) in kappas.iter().zip(&c) {
                if *cj == 0.0 {
                    continue;
                }
                effect.x_derivative(&obs, theta, kappa, &mut dv)?;
                for (a, b) in v.iter_mut().zip(&dv) {
                    *a -= cj * b;
                }
            }
        }
        if let Some(j) = v.iter().position(|x| !x.is_finite()) {
            return Err(MermError::NonFinite {
                what: format!("effect component {j}"),
                row: i,
            });
        }
        for (j, x) in v.iter().enumerate() {
            rows[(i, j)] = *x;
        }
    }
    Ok(rows)
}

fn mean_rows(rows: &DMatrix<f64>) -> DVector<f64> {
    crate::linalg::column_means(rows)
}

/// Standard errors of `mean h(W, β̂)` from the influence function
/// `h_i − λ̂ + H·IF_i`, with `H = ∂ mean h/∂β` and
/// `IF_i = −(Ψ'ΞΨ)⁻¹Ψ'Ξψ_i`.
fn influence_se(
    effect: &EffectSpec,
    problem: &Problem<'_>,
    result: &EstimationResult,
    corrected: bool,
    influence: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let beta = result.beta();
    let rows = effect_rows(effect, problem, &beta, corrected)?;
    let mean = mean_rows(&rows);
    let k = effect.dim();
    let dim = beta.len();
    let mut h = vec![0.0; k * dim];
    numdiff::jacobian_5pt(
        |b, o| {
            let m = mean_rows(&effect_rows(effect, problem, b, corrected)?);
            o.copy_from_slice(m.as_slice());
            Ok(())
        },
        &beta,
        k,
        &mut h,
    )?;
    let h = DMatrix::from_row_slice(k, dim, &h);
    let n = rows.nrows();
    let mut var = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let e = rows.row(i).transpose() - &mean + &h * influence.row(i).transpose();
        var += &e * e.transpose();
    }
    var /= n as f64;
    let se = (0..k).map(|j| (var[(j, j)].max(0.0) / n as f64).sqrt()).collect();
    Ok((mean.iter().copied().collect(), se))
}

/// `λ̂_MERM = mean{λ(X, S, θ̂) − Σ_j ĉ_j ∂_{κ_j} λ(X, S, θ̂)}` next to the
/// naive `mean λ(X, S, θ̂)`, both with standard errors that account for
/// estimation of β.
pub fn average_effect_corrected(effect: &EffectSpec, result: &EstimationResult, problem: &Problem<'_>) -> Result<AverageEffect> {
    let order = problem.scheme().order();
    if effect.x_derivative.is_some() && effect.max_order < order {
        return Err(MermError::UnsupportedOrder {
            requested: order,
            supported: effect.max_order,
        });
    }
    if result.dim_beta() != problem.dim_beta() {
        return Err(MermError::dim("estimate for this problem", problem.dim_beta(), result.dim_beta()));
    }
    let psi = problem.psi_rows(&result.theta, &result.nuisance)?;
    let a = result.psi_jacobian.transpose() * &result.weighting;
    let bread = inverse_spd(&(&a * &result.psi_jacobian), "Ψ'ΞΨ (effect influence)")?;
    let influence = -(psi * (bread * a).transpose());
    let (merm, merm_se) = influence_se(effect, problem, result, true, &influence)?;
    let (naive, naive_se) = influence_se(effect, problem, result, false, &influence)?;
    Ok(AverageEffect {
        merm,
        merm_se,
        naive,
        naive_se,
    })
}
