use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gmm::{EstimationResult, Problem};
use crate::linalg::{singular_values, sqrt_psd};
use crate::model::residual::Residual;

/// Relative singular-value threshold below which `Ψ̂` is flagged.
pub const RANK_TOLERANCE: f64 = 1e-6;

/// Residual and degree of a second-measurement moment system, for the
/// sufficient identification condition `E[u_x (1, X, …, X^{J−1})'] ≠ 0`.
#[derive(Clone)]
pub struct SecondMeasurementCheck {
    pub residual: Arc<dyn Residual>,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    /// Singular values of `Ξ̂^{1/2} Ψ̂` with unit-norm columns, decreasing.
    pub singular_values: Vec<f64>,
    /// `σ_min / σ_max`.
    pub ratio: f64,
    pub full_rank: bool,
    /// Sample `mean u_x^{(1)}(X, S, θ̂) X^j`, `j = 0..J−1`.
    pub condition_vector: Option<Vec<f64>>,
    /// True when the condition vector is numerically zero.
    pub condition_vector_zero: Option<bool>,
}

/// Singular values of the weighted Jacobian and, for second-measurement
/// systems, the sample analog of the sufficient rank condition.
///
/// Columns of `Ξ̂^{1/2}Ψ̂` are normalized so that the flag does not depend on
/// parameter units; with efficient weighting it is also invariant to
/// rescaling individual moments.
pub fn rank_diagnostics(problem: &Problem<'_>, result: &EstimationResult, second: Option<&SecondMeasurementCheck>) -> Result<RankDiagnostics> {
    let mut a = sqrt_psd(&result.weighting) * &result.psi_jacobian;
    for mut col in a.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let sv = singular_values(&a);
    let (smax, smin) = (sv.first().copied().unwrap_or(0.0), sv.last().copied().unwrap_or(0.0));
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    let (condition_vector, condition_vector_zero) = match second {
        None => (None, None),
        Some(check) => {
            let data = problem.data();
            let mut acc = vec![0.0; check.j];
            let mut u = [0.0; 2];
            let mut scale = 0.0;
            for i in 0..data.n() {
                let obs = data.obs(i);
                check.residual.jet(&obs, &result.theta, 1, &mut u, None)?;
                scale += u[0].abs();
                let x = obs.x0();
                let mut pow = 1.0;
                for a in acc.iter_mut() {
                    *a += u[1] * pow;
                    pow *= x;
                }
            }
            let n = data.n() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            let tol = 1e-8 * (1.0 + scale / n);
            let zero = acc.iter().all(|a| a.abs() <= tol);
            (Some(acc), Some(zero))
        }
    };
    Ok(RankDiagnostics {
        singular_values: sv,
        ratio,
        full_rank: ratio >= RANK_TOLERANCE,
        condition_vector,
        condition_vector_zero,
    })
}
