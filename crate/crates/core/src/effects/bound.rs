use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::correction::{gamma_from_moments, gaussian_moments, moments_from_gamma, Regime};
use crate::error::{MermError, Result};
use crate::gmm::{EstimationResult, Problem};
use crate::linalg::inverse_spd;
use crate::model::multi_index::MultiIndex;

/// How the leading neglected coefficient `γ_K̄` is pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundRoute {
    /// Gaussian ε with the variance implied by `γ̂`: a point value.
    Gaussian,
    /// A priori bound on the standardized moment `E[(ε/σ)^K̄]`.
    APriori,
}

/// Range of the leading higher-order bias of `v'β̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasBoundReport {
    /// `b̄_v = −v'(Ψ̂'Ξ̂Ψ̂)⁻¹Ψ̂'Ξ̂ mean g_x^{(K̄)}(X, S, θ̂)`.
    pub b_v: f64,
    pub kbar: usize,
    pub interval: [f64; 2],
    /// `interval / se(v'β̂)`.
    pub ratio_to_se: [f64; 2],
    pub kurtosis_bound: f64,
    /// `Some(±1)` when the interval excludes zero on one side (sign known).
    pub sign: Option<i8>,
}

/// `K̄ = K + 2` for even `K` and symmetric ε, otherwise `K + 1`.
pub fn effective_order(k: usize, symmetric_eps: bool) -> usize {
    if k % 2 == 0 && symmetric_eps {
        k + 2
    } else {
        k + 1
    }
}

/// Closed-form interval for `K = 2`, symmetric ε:
/// `γ₄ ∈ [−5γ₂²/6, γ₂²(κ̄ − 6)/6]`, scaled by `b̄` (mirrored for `b̄ < 0`).
pub fn k2_interval(b: f64, gamma2: f64, kurtosis_bound: f64) -> Result<[f64; 2]> {
    if !(kurtosis_bound >= 1.0) {
        return Err(MermError::invalid(format!(
            "kurtosis bound {kurtosis_bound} is below 1, the floor implied by E[e^4] >= E[e^2]^2"
        )));
    }
    let g2 = gamma2 * gamma2;
    let (lo, hi) = (-5.0 * g2 / 6.0, g2 * (kurtosis_bound - 6.0) / 6.0);
    Ok(if b >= 0.0 { [b * lo, b * hi] } else { [b * hi, b * lo] })
}

/// Range of `γ_K̄` given `γ̂₂..γ̂_K`: lower moments are recovered from `γ̂`,
/// odd moments above `K` vanish under symmetry, and `μ_K̄` ranges over
/// `[σ^K̄, κ̄σ^K̄]` (even `K̄`) or `[−κ̄σ^K̄, κ̄σ^K̄]` (odd `K̄`).
fn gamma_kbar_range(gamma: &[f64], kbar: usize, kurtosis_bound: f64, route: BoundRoute) -> Result<[f64; 2]> {
    let sigma2 = 2.0 * gamma[0];
    if sigma2 < 0.0 {
        return Err(MermError::invalid("estimated error variance is negative; no bias bound"));
    }
    let sigma = sigma2.sqrt();
    if route == BoundRoute::Gaussian {
        let mu = gaussian_moments(sigma, kbar);
        let g = gamma_from_moments(&mu, kbar)?[kbar - 2];
        return Ok([g, g]);
    }
    let mut mu = moments_from_gamma(gamma);
    mu.resize(kbar - 1, 0.0);
    let sk = sigma.powi(kbar as i32);
    let (lo, hi) = if kbar % 2 == 0 { (sk, kurtosis_bound * sk) } else { (-kurtosis_bound * sk, kurtosis_bound * sk) };
    let at = |v: f64| -> Result<f64> {
        let mut m = mu.clone();
        m[kbar - 2] = v;
        Ok(gamma_from_moments(&m, kbar)?[kbar - 2])
    };
    // γ_K̄ is increasing in μ_K̄ with slope 1/K̄!.
    Ok([at(lo)?, at(hi)?])
}

/// Leading higher-order bias of `v'β̂` for a classical scalar scheme.
pub fn bias_bound(
    result: &EstimationResult,
    problem: &Problem<'_>,
    v: &[f64],
    kurtosis_bound: f64,
    symmetric_eps: bool,
    route: BoundRoute,
) -> Result<BiasBoundReport> {
    if !(kurtosis_bound >= 1.0) {
        return Err(MermError::invalid(format!(
            "kurtosis bound {kurtosis_bound} is below 1, the floor implied by E[e^4] >= E[e^2]^2"
        )));
    }
    let k = match problem.scheme().regime() {
        Regime::ClassicalScalar { k } => *k,
        _ => return Err(MermError::invalid("bias bounds need a classical scalar scheme")),
    };
    let dim = result.dim_beta();
    if v.len() != dim {
        return Err(MermError::dim("bias direction v", dim, v.len()));
    }
    let kbar = effective_order(k, symmetric_eps);
    let model = problem.moment().model();
    if model.max_order() < kbar {
        return Err(MermError::UnsupportedOrder {
            requested: kbar,
            supported: model.max_order(),
        });
    }
    let data = problem.data();
    let m = problem.m();
    let mut gk = DVector::<f64>::zeros(m);
    let mut buf = vec![0.0; m];
    let kappa = [MultiIndex::scalar(kbar as u32)];
    for i in 0..data.n() {
        model.x_derivatives(&data.obs(i), &result.theta, &kappa, &mut buf)?;
        for (a, b) in gk.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    gk /= data.n() as f64;
    let a = result.psi_jacobian.transpose() * &result.weighting;
    let bread = inverse_spd(&(&a * &result.psi_jacobian), "Ψ'ΞΨ (bias bound)")?;
    let vv = DVector::from_column_slice(v);
    let b_v = -(vv.transpose() * bread * a * gk)[(0, 0)];
    let interval = if k == 2 && symmetric_eps && route == BoundRoute::APriori {
        k2_interval(b_v, result.nuisance[0], kurtosis_bound)?
    } else {
        let [lo, hi] = gamma_kbar_range(&result.nuisance, kbar, kurtosis_bound, route)?;
        if b_v >= 0.0 { [b_v * lo, b_v * hi] } else { [b_v * hi, b_v * lo] }
    };
    let se = ((vv.transpose() * &result.sigma * &vv)[(0, 0)].max(0.0) / result.n as f64).sqrt();
    Ok(BiasBoundReport {
        b_v,
        kbar,
        interval,
        ratio_to_se: [interval[0] / se, interval[1] / se],
        kurtosis_bound,
        sign: interval_sign(interval),
    })
}

/// `Some(1)` if the interval lies in `[0, ∞)` and is not `{0}`, `Some(−1)` for
/// `(−∞, 0]`, `None` when it straddles zero or is degenerate at zero.
pub fn interval_sign(interval: [f64; 2]) -> Option<i8> {
    if interval[0] >= 0.0 && interval[1] > 0.0 {
        Some(1)
    } else if interval[1] <= 0.0 && interval[0] < 0.0 {
        Some(-1)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_example() {
        let [lo, hi] = k2_interval(1.0, 0.125, 10.0).unwrap();
        assert_relative_eq!(lo, -0.013020833333333334, epsilon = 1e-15);
        assert_relative_eq!(hi, 0.010416666666666666, epsilon = 1e-15);
        let six = k2_interval(1.0, 0.125, 6.0).unwrap();
        assert_eq!(six[1], 0.0);
        assert_eq!(interval_sign(six), Some(-1));
        assert_eq!(k2_interval(1.0, 0.0, 10.0).unwrap(), [0.0, 0.0]);
        let mirrored = k2_interval(-2.0, 0.125, 10.0).unwrap();
        assert_relative_eq!(mirrored[0], -2.0 * hi);
        assert_relative_eq!(mirrored[1], -2.0 * lo);
        assert!(k2_interval(1.0, 0.125, 0.5).is_err());
    }

    #[test]
    fn recursion_route_matches_closed_form_for_k2() {
        let gamma = [0.125];
        let [lo, hi] = gamma_kbar_range(&gamma, 4, 10.0, BoundRoute::APriori).unwrap();
        let closed = k2_interval(1.0, 0.125, 10.0).unwrap();
        assert_relative_eq!(lo, closed[0], epsilon = 1e-15);
        assert_relative_eq!(hi, closed[1], epsilon = 1e-15);
        let [g, h] = gamma_kbar_range(&gamma, 4, 10.0, BoundRoute::Gaussian).unwrap();
        assert_eq!(g, h);
        assert_relative_eq!(g, -0.0078125, epsilon = 1e-15);
    }

    #[test]
    fn effective_orders() {
        assert_eq!(effective_order(2, true), 4);
        assert_eq!(effective_order(2, false), 3);
        assert_eq!(effective_order(3, true), 4);
        assert_eq!(effective_order(4, true), 6);
    }
}
