use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MermError, Result};
use crate::gmm::EstimationResult;
use crate::model::numdiff::jacobian_5pt;

/// Two-sided 97.5% standard normal quantile.
pub const NORMAL_975: f64 = 1.959964;

/// Point estimate of a smooth functional with normal-approximation inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaInference {
    pub point: f64,
    pub se: f64,
    /// `point / se`.
    pub t_stat: f64,
    pub ci: [f64; 2],
}

impl DeltaInference {
    pub fn new(point: f64, se: f64) -> Self {
        Self {
            point,
            se,
            t_stat: point / se,
            ci: [point - NORMAL_975 * se, point + NORMAL_975 * se],
        }
    }

    /// `|point − null| / se > 1.959964`.
    pub fn rejects(&self, null: f64) -> bool {
        ((self.point - null) / self.se).abs() > NORMAL_975
    }
}

/// Vector functional of β with an optional analytic Jacobian
/// (row-major `out_dim x dim β`).
pub type Functional<'f> = &'f dyn Fn(&[f64]) -> Vec<f64>;
pub type FunctionalJacobian<'f> = &'f dyn Fn(&[f64]) -> Vec<f64>;

/// Delta method at `β̂` with asymptotic variance `Σ` from a sample of size `n`:
/// `se = sqrt(∇f' Σ ∇f / n)`. Without an analytic Jacobian the five-point rule is used.
pub fn delta_method_at(
    beta: &[f64],
    sigma: &DMatrix<f64>,
    n: usize,
    f: Functional<'_>,
    jacobian: Option<FunctionalJacobian<'_>>,
) -> Result<Vec<DeltaInference>> {
    let p = beta.len();
    if sigma.nrows() != p || sigma.ncols() != p {
        return Err(MermError::dim("variance matrix", p, sigma.nrows()));
    }
    let point = f(beta);
    let k = point.len();
    let jac = match jacobian {
        Some(j) => j(beta),
        None => {
            let mut out = vec![0.0; k * p];
            jacobian_5pt(
                |b, o| {
                    o.copy_from_slice(&f(b));
                    Ok(())
                },
                beta,
                k,
                &mut out,
            )?;
            out
        }
    };
    if jac.len() != k * p {
        return Err(MermError::dim("functional jacobian", k * p, jac.len()));
    }
    if let Some(i) = jac.iter().position(|v| !v.is_finite()) {
        return Err(MermError::NonFinite {
            what: "functional gradient".into(),
            row: i / p,
        });
    }
    let g = DMatrix::from_row_slice(k, p, &jac);
    let v = &g * sigma * g.transpose();
    Ok((0..k)
        .map(|r| DeltaInference::new(point[r], (v[(r, r)].max(0.0) / n as f64).sqrt()))
        .collect())
}

/// Delta method on the full parameter `β = (θ, nuisance)` of an estimate.
pub fn delta_method(result: &EstimationResult, f: Functional<'_>, jacobian: Option<FunctionalJacobian<'_>>) -> Result<Vec<DeltaInference>> {
    delta_method_at(&result.beta(), &result.sigma, result.n, f, jacobian)
}
