//! Oracles and property checks shared by the integration and acceptance suites.
#![allow(dead_code)]

use std::sync::Arc;

use merm::correction::{gamma_from_moments, gaussian_moments, moments_from_gamma, CorrectionScheme, MomentMap};
use merm::gmm::{estimate, sandwich_variance, EstimateConfig, EstimationResult, Problem, WeightingPolicy};
use merm::linalg::inverse_spd;
use merm::model::{regression_moments, BasisKind, Dataset, InstrumentBasis, MultiIndex, PolynomialRegression};
use merm::simulation::{DesignTag, McDesign};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Raw moments `μ₂..μ_K` of `σ·s` for a random unit-variance shape `s`
/// with `E[s] = 0`; odd moments are zero when `symmetric`.
pub fn random_moments(rng: &mut ChaCha8Rng, k: usize, symmetric: bool) -> (f64, Vec<f64>) {
    let sigma: f64 = rng.random_range(0.05..2.0);
    let mut shape = vec![1.0];
    for j in 3..=k {
        let v = if j % 2 == 1 {
            if symmetric {
                0.0
            } else {
                rng.random_range(-2.0..2.0)
            }
        } else {
            rng.random_range(1.0..3.0f64).powi(j as i32 / 2)
        };
        shape.push(v);
    }
    let mu = shape.iter().enumerate().map(|(i, s)| s * sigma.powi(i as i32 + 2)).collect();
    (sigma, mu)
}

/// Brute-force γ: solves the lower-triangular system `B a = c` in the
/// standardized moments `m_j = E[(ε/σ)^j]` with a dense LU, then
/// `γ_k = σ^k a_k`. Row `k`, column `ℓ` of `B` is `m_{k−ℓ}/(k−ℓ)!` and
/// `c_k = m_k/k!`, for `2 ≤ ℓ ≤ k ≤ K`.
pub fn gamma_oracle(sigma: f64, mu: &[f64], k: usize) -> Vec<f64> {
    let dim = k - 1;
    let m = |j: usize| match j {
        0 => 1.0,
        1 => 0.0,
        _ => mu[j - 2] / sigma.powi(j as i32),
    };
    let b = DMatrix::from_fn(dim, dim, |r, c| {
        let (kk, l) = (r + 2, c + 2);
        if l <= kk {
            m(kk - l) / factorial(kk - l)
        } else {
            0.0
        }
    });
    let rhs = DVector::from_fn(dim, |r, _| m(r + 2) / factorial(r + 2));
    let a = b.lu().solve(&rhs).expect("unit lower-triangular system");
    a.iter().enumerate().map(|(i, v)| v * sigma.powi(i as i32 + 2)).collect()
}

/// Largest error of `got` against `want`, relative to `max(|want_k|, σ^k)`.
pub fn scaled_error(got: &[f64], want: &[f64], sigma: f64) -> f64 {
    got.iter()
        .zip(want)
        .enumerate()
        .map(|(i, (g, w))| (g - w).abs() / w.abs().max(sigma.powi(i as i32 + 2)))
        .fold(0.0, f64::max)
}

/// Worst oracle mismatch over `sets` random moment sets with `K ≤ 6`.
pub fn recursion_vs_oracle(sets: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..sets)
        .map(|i| {
            let k = 2 + i % 5;
            let (sigma, mu) = random_moments(&mut r, k, false);
            let got = gamma_from_moments(&mu, k).unwrap();
            scaled_error(&got, &gamma_oracle(sigma, &mu, k), sigma)
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of `moments → γ → moments` over random sets with `K ≤ 6`.
pub fn round_trip_error(sets: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..sets)
        .map(|i| {
            let k = 2 + i % 5;
            let (sigma, mu) = random_moments(&mut r, k, i % 2 == 0);
            let back = moments_from_gamma(&gamma_from_moments(&mu, k).unwrap());
            scaled_error(&back, &mu, sigma)
        })
        .fold(0.0, f64::max)
}

/// True when every odd-order γ vanishes exactly for symmetric errors.
pub fn odd_gammas_vanish(sets: usize, seed: u64) -> bool {
    let mut r = rng(seed);
    (0..sets).all(|i| {
        let k = 3 + i % 4;
        let (_, mu) = random_moments(&mut r, k, true);
        let g = gamma_from_moments(&mu, k).unwrap();
        g.iter().enumerate().all(|(j, v)| (j + 2) % 2 == 0 || *v == 0.0)
    })
}

fn mi(a: u32, b: u32) -> MultiIndex {
    MultiIndex(vec![a, b])
}

/// Random bivariate cross moments of order 2..=4.
pub fn random_bivariate_moments(rng: &mut ChaCha8Rng) -> MomentMap {
    let mut mu = MomentMap::new();
    for k in 2..=4u32 {
        for a in (0..=k).rev() {
            let v = if k == 2 && a != 1 {
                rng.random_range(0.05..1.5)
            } else {
                rng.random_range(-1.0..1.0)
            };
            mu.insert(mi(a, k - a), v);
        }
    }
    mu
}

/// The closed-form fourth-order bivariate γ's.
pub fn bivariate_table(mu: &MomentMap) -> Vec<(MultiIndex, f64)> {
    let m = |a, b| mu[&mi(a, b)];
    vec![
        (mi(4, 0), (m(4, 0) - 6.0 * m(2, 0).powi(2)) / 24.0),
        (mi(3, 1), (m(3, 1) - 6.0 * m(2, 0) * m(1, 1)) / 6.0),
        (mi(2, 2), (m(2, 2) - 2.0 * m(2, 0) * m(0, 2) - 4.0 * m(1, 1).powi(2)) / 4.0),
        (mi(1, 3), (m(1, 3) - 6.0 * m(0, 2) * m(1, 1)) / 6.0),
        (mi(0, 4), (m(0, 4) - 6.0 * m(0, 2).powi(2)) / 24.0),
    ]
}

/// Polynomial-design sample number `rep` with `n` rows.
pub fn polynomial_sample(n: usize, rep: u64) -> (McDesign, Dataset) {
    let mut design = McDesign::new(DesignTag::Polynomial);
    design.n = n;
    let data = design.generate(rep).unwrap();
    (design, data)
}

/// Cubic regression moments with the full cubic basis scaled by `x_scale`.
pub fn cubic_moments(data: &Dataset, x_scale: f64) -> Arc<dyn merm::model::MomentFunction> {
    Arc::new(
        regression_moments(
            Arc::new(PolynomialRegression { degree: 3 }),
            InstrumentBasis::new(BasisKind::K4).with_x_scale(x_scale),
            data.side_names(),
            "y",
            "z",
            &[],
        )
        .unwrap(),
    )
}

/// `‖ψ̃(cx, θ̃, γ̃) − ψ(x, θ, γ)‖∞ / ‖ψ‖∞` where `θ̃_j = θ_j/c^{j−1}` and
/// `γ̃_k = c^k γ_k` describe the same model in rescaled units.
pub fn scale_equivariance_error(c: f64) -> f64 {
    let (_, data) = polynomial_sample(300, 11);
    let scheme = CorrectionScheme::classical_scalar(4).unwrap();
    let theta = [0.7, 1.1, -0.2, -0.45];
    let gamma = [0.06, 0.01, -0.003];
    let base = Problem::new(cubic_moments(&data, 1.0), scheme.clone(), &data).unwrap();
    let scaled_data = data.map_x(|x| c * x).unwrap();
    let scaled = Problem::new(cubic_moments(&scaled_data, c), scheme, &scaled_data).unwrap();
    let theta_c: Vec<f64> = theta.iter().enumerate().map(|(j, t)| t / c.powi(j as i32)).collect();
    let gamma_c: Vec<f64> = gamma.iter().enumerate().map(|(j, g)| g * c.powi(j as i32 + 2)).collect();
    let a = base.psi_rows(&theta, &gamma).unwrap();
    let b = scaled.psi_rows(&theta_c, &gamma_c).unwrap();
    (a - b).amax() / base.psi_rows(&theta, &gamma).unwrap().amax()
}

pub fn polynomial_problem(data: &Dataset, k: usize) -> Problem<'_> {
    Problem::new(cubic_moments(data, 1.0), CorrectionScheme::classical_scalar(k).unwrap(), data).unwrap()
}

fn fit(problem: &Problem<'_>, profile: bool) -> EstimationResult {
    let config = EstimateConfig {
        policy: WeightingPolicy::gmm1_then_efficient(),
        profile,
        ..EstimateConfig::default()
    };
    estimate(problem, &config).unwrap()
}

/// `(|Q_profiled − Q_joint|, ‖θ̂_profiled − θ̂_joint‖∞)` on a polynomial sample.
pub fn profiled_vs_joint(rep: u64) -> (f64, f64) {
    let (_, data) = polynomial_sample(1000, rep);
    let problem = polynomial_problem(&data, 2);
    let a = fit(&problem, true);
    let b = fit(&problem, false);
    let dtheta = a.theta.iter().zip(&b.theta).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ((a.objective - b.objective).abs(), dtheta)
}

/// `‖Ψ̂ − FD(ψ̄)‖∞` at an off-truth β on a polynomial sample.
pub fn jacobian_fd_error(k: usize) -> f64 {
    let (_, data) = polynomial_sample(500, 5);
    let problem = polynomial_problem(&data, k);
    let mut beta = vec![0.9, 1.2, 0.1, -0.4];
    beta.extend((0..k - 1).map(|j| 0.05 / (j + 1) as f64));
    let p = 4;
    let split = |b: &[f64]| (b[..p].to_vec(), b[p..].to_vec());
    let (t, g) = split(&beta);
    let analytic = problem.jacobian_psi(&t, &g).unwrap();
    let mut fd = DMatrix::zeros(analytic.nrows(), beta.len());
    for j in 0..beta.len() {
        let h = 1e-6 * beta[j].abs().max(1.0);
        let (mut up, mut dn) = (beta.clone(), beta.clone());
        up[j] += h;
        dn[j] -= h;
        let (tu, gu) = split(&up);
        let (td, gd) = split(&dn);
        let col = (problem.psi_bar(&tu, &gu).unwrap() - problem.psi_bar(&td, &gd).unwrap()) / (2.0 * h);
        fd.set_column(j, &col);
    }
    (analytic - fd).amax()
}

/// Relative gap between the sandwich with `Ξ = Ω̂⁻¹` and `(Ψ̂'Ω̂⁻¹Ψ̂)⁻¹`.
pub fn sandwich_collapse_error() -> f64 {
    let (_, data) = polynomial_sample(1000, 8);
    let problem = polynomial_problem(&data, 2);
    let r = fit(&problem, true);
    let xi = inverse_spd(&r.omega, "omega").unwrap();
    let full = sandwich_variance(&r.psi_jacobian, &xi, &r.omega).unwrap();
    let collapsed = inverse_spd(&(r.psi_jacobian.transpose() * &xi * &r.psi_jacobian), "bread").unwrap();
    (full - &collapsed).amax() / collapsed.amax()
}

/// Moment validity on one large polynomial sample: `(‖ψ̄(θ₀, γ₀)‖∞,
/// sup over the instrument rows with x-power ≥ 2 of |ḡ(θ₀)|)` with Gaussian `γ₀`.
/// `K = 6` matches the degree of `g` in `x`, so no expansion term is dropped.
pub fn moment_validity(n: usize) -> (f64, f64) {
    let (design, data) = polynomial_sample(n, 0);
    let k = 6;
    let problem = polynomial_problem(&data, k);
    let sigma = design.sigma_eps();
    let gamma0 = gamma_from_moments(&gaussian_moments(sigma, k), k).unwrap();
    let psi = problem.psi_bar(&design.theta0, &gamma0).unwrap();
    let g = problem.psi_bar(&design.theta0, &vec![0.0; k - 1]).unwrap();
    let rows: Vec<usize> = BasisKind::K4
        .terms()
        .iter()
        .enumerate()
        .filter(|(_, (a, _))| *a >= 2)
        .map(|(i, _)| i)
        .collect();
    let g_sup = rows.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
    (psi.amax(), g_sup)
}
