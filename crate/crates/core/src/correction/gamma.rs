//! The triangular map between moments of the measurement error and the
//! nuisance coefficients γ of the corrected moment.
//!
//! Scalar case, with `μ₁ = 0`:
//! `γ₂ = μ₂/2`, `γ₃ = μ₃/6` and, for `k ≥ 4`,
//! `γ_k = μ_k/k! − Σ_{ℓ=2}^{k−2} μ_{k−ℓ}/(k−ℓ)! · γ_ℓ`.
//! The multivariate version replaces powers by multi-indices and sums over
//! `κ̃ ≤ κ` with `|κ̃| = ℓ`.

use std::collections::BTreeMap;

use crate::error::{MermError, Result};
use crate::model::multi_index::{factorial, multi_index_range, MultiIndex};

/// `γ₂..γ_K` from `μ₂..μ_K` (slice index `k − 2`).
pub fn gamma_from_moments(mu: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(MermError::InvalidOrder(k));
    }
    if mu.len() < k - 1 {
        return Err(MermError::MissingMoment(vec![(mu.len() + 2) as u32]));
    }
    let m = |j: usize| mu[j - 2];
    let mut gamma = vec![0.0; k - 1];
    for kk in 2..=k {
        let mut g = m(kk) / factorial(kk);
        for l in 2..=kk.saturating_sub(2) {
            g -= m(kk - l) / factorial(kk - l) * gamma[l - 2];
        }
        gamma[kk - 2] = g;
    }
    Ok(gamma)
}

/// Inverse of [`gamma_from_moments`]: `μ₂..μ_K` from `γ₂..γ_K`.
pub fn moments_from_gamma(gamma: &[f64]) -> Vec<f64> {
    let k = gamma.len() + 1;
    let mut mu = vec![0.0; gamma.len()];
    for kk in 2..=k {
        let mut acc = gamma[kk - 2];
        for l in 2..=kk.saturating_sub(2) {
            acc += mu[kk - l - 2] / factorial(kk - l) * gamma[l - 2];
        }
        mu[kk - 2] = factorial(kk) * acc;
    }
    mu
}

/// Cross moments `μ_κ = E[Π ε_j^{κ_j}]` keyed by multi-index.
pub type MomentMap = BTreeMap<MultiIndex, f64>;

/// Multivariate `γ_κ` for all `2 ≤ |κ| ≤ K`, in graded lexicographic order.
///
/// Moments of masked indices may be omitted (they are taken as zero, as
/// implied by the independence pattern that masks them); any other missing
/// moment is an error. Masked `γ_κ` are returned as exact zeros.
pub fn gamma_multivariate(mu: &MomentMap, k: usize, d: usize, zero_mask: &[MultiIndex]) -> Result<MomentMap> {
    if k < 2 {
        return Err(MermError::InvalidOrder(k));
    }
    let get = |kappa: &MultiIndex| -> Result<f64> {
        match mu.get(kappa) {
            Some(v) => Ok(*v),
            None if zero_mask.contains(kappa) => Ok(0.0),
            None => Err(MermError::MissingMoment(kappa.0.clone())),
        }
    };
    let mut gamma = MomentMap::new();
    for kappa in multi_index_range(d, 2, k) {
        let order = kappa.order();
        let mut g = get(&kappa)? / kappa.factorial();
        for l in 2..=order.saturating_sub(2) {
            for sub in kappa.sub_indices(l) {
                let rest = kappa.sub(&sub);
                g -= get(&rest)? / rest.factorial() * gamma[&sub];
            }
        }
        if zero_mask.contains(&kappa) {
            g = 0.0;
        }
        gamma.insert(kappa, g);
    }
    Ok(gamma)
}

/// Inverse of [`gamma_multivariate`] (without a mask).
pub fn moments_from_gamma_multivariate(gamma: &MomentMap, d: usize) -> MomentMap {
    let k = gamma.keys().map(|g| g.order()).max().unwrap_or(0);
    let mut mu = MomentMap::new();
    for kappa in multi_index_range(d, 2, k) {
        let mut acc = gamma.get(&kappa).copied().unwrap_or(0.0);
        for l in 2..=kappa.order().saturating_sub(2) {
            for sub in kappa.sub_indices(l) {
                let rest = kappa.sub(&sub);
                acc += mu[&rest] / rest.factorial() * gamma.get(&sub).copied().unwrap_or(0.0);
            }
        }
        let value = kappa.factorial() * acc;
        mu.insert(kappa, value);
    }
    mu
}

/// Raw moments `E[ε^k]`, `k = 2..=kmax`, of `N(0, σ²)`.
pub fn gaussian_moments(sigma: f64, kmax: usize) -> Vec<f64> {
    (2..=kmax)
        .map(|k| {
            if k % 2 == 1 {
                0.0
            } else {
                // (k−1)!! σ^k
                let dfact: f64 = (1..k).step_by(2).map(|i| i as f64).product();
                dfact * sigma.powi(k as i32)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex(v.to_vec())
    }

    #[test]
    fn no_error_no_correction() {
        assert_eq!(gamma_from_moments(&[0.0; 5], 6).unwrap(), vec![0.0; 5]);
        assert_eq!(moments_from_gamma(&[0.0; 3]), vec![0.0; 3]);
    }

    #[test]
    fn quadratic_scheme() {
        assert_eq!(gamma_from_moments(&[0.25], 2).unwrap(), vec![0.125]);
        assert_eq!(moments_from_gamma(&[0.125]), vec![0.25]);
    }

    #[test]
    fn gaussian_fourth_order() {
        let mu = gaussian_moments(0.5, 4);
        assert_eq!(mu, vec![0.25, 0.0, 0.1875]);
        let gamma = gamma_from_moments(&mu, 4).unwrap();
        assert_eq!(gamma, vec![0.125, 0.0, -0.0078125]);
        assert_eq!(moments_from_gamma(&gamma), mu);
    }

    #[test]
    fn order_below_two_is_rejected() {
        assert_eq!(gamma_from_moments(&[], 1), Err(MermError::InvalidOrder(1)));
    }

    #[test]
    fn bivariate_fourth_order_table() {
        let mut mu = MomentMap::new();
        let vals = [
            (vec![2, 0], 0.3),
            (vec![1, 1], 0.1),
            (vec![0, 2], 0.2),
            (vec![3, 0], 0.05),
            (vec![2, 1], -0.02),
            (vec![1, 2], 0.03),
            (vec![0, 3], 0.01),
            (vec![4, 0], 0.4),
            (vec![3, 1], 0.06),
            (vec![2, 2], 0.09),
            (vec![1, 3], 0.02),
            (vec![0, 4], 0.15),
        ];
        for (k, v) in vals {
            mu.insert(MultiIndex(k), v);
        }
        let g = gamma_multivariate(&mu, 4, 2, &[]).unwrap();
        assert_relative_eq!(g[&mi(&[2, 2])], (0.09 - 2.0 * 0.3 * 0.2 - 4.0 * 0.1 * 0.1) / 4.0, epsilon = 1e-15);
        assert_relative_eq!(g[&mi(&[4, 0])], (0.4 - 6.0 * 0.09) / 24.0, epsilon = 1e-15);
        assert_relative_eq!(g[&mi(&[1, 1])], 0.1, epsilon = 1e-15);
        let back = moments_from_gamma_multivariate(&g, 2);
        for (k, v) in &mu {
            assert_relative_eq!(back[k], *v, epsilon = 1e-15);
        }
    }

    #[test]
    fn independence_zeroes_cross_terms() {
        let mut mu = MomentMap::new();
        for (k, v) in [
            (vec![2, 0], 0.3),
            (vec![0, 2], 0.2),
            (vec![3, 0], 0.0),
            (vec![0, 3], 0.0),
            (vec![4, 0], 0.27),
            (vec![2, 2], 0.06),
            (vec![0, 4], 0.12),
        ] {
            mu.insert(MultiIndex(k), v);
        }
        let mask: Vec<MultiIndex> = [[1, 1], [2, 1], [1, 2], [3, 1], [1, 3]].iter().map(|v| mi(v)).collect();
        let g = gamma_multivariate(&mu, 4, 2, &mask).unwrap();
        for k in &mask {
            assert_eq!(g[k], 0.0);
        }
        assert_relative_eq!(g[&mi(&[2, 2])], (0.06 - 2.0 * 0.06) / 4.0, epsilon = 1e-15);
        mu.remove(&mi(&[2, 2]));
        assert_eq!(gamma_multivariate(&mu, 4, 2, &mask), Err(MermError::MissingMoment(vec![2, 2])));
    }

    #[test]
    fn scalar_and_one_dimensional_multivariate_agree() {
        let mu = [0.3, 0.1, 0.5, -0.2, 1.1];
        let g = gamma_from_moments(&mu, 6).unwrap();
        let map: MomentMap = mu.iter().enumerate().map(|(i, v)| (MultiIndex::scalar(i as u32 + 2), *v)).collect();
        let gm = gamma_multivariate(&map, 6, 1, &[]).unwrap();
        for (i, v) in g.iter().enumerate() {
            assert_eq!(gm[&MultiIndex::scalar(i as u32 + 2)], *v);
        }
    }
}
