mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use merm::correction::CorrectionScheme;
use merm::effects::{
    average_effect_corrected, delta_method_at, interval_sign, k2_interval, rank_diagnostics, EffectSpec, SecondMeasurementCheck,
};
use merm::gmm::{estimate, EstimateConfig, EstimationResult, Problem, WeightingPolicy};
use merm::model::{regression_moments, BasisKind, InstrumentBasis, Observation, PolynomialRegression, Residual};
use merm::Result;
use nalgebra::dmatrix;

fn linear_fit(data: &merm::model::Dataset) -> (Problem<'_>, EstimationResult) {
    let g = regression_moments(
        Arc::new(PolynomialRegression { degree: 1 }),
        InstrumentBasis::new(BasisKind::K2),
        data.side_names(),
        "y",
        "z",
        &[],
    )
    .unwrap();
    let problem = Problem::new(Arc::new(g), CorrectionScheme::classical_scalar(2).unwrap(), data).unwrap();
    let config = EstimateConfig {
        policy: WeightingPolicy::gmm1_then_efficient(),
        ..EstimateConfig::default()
    };
    let r = estimate(&problem, &config).unwrap();
    (problem, r)
}

#[test]
fn effects_linear_in_x_need_no_correction() {
    let (_, data) = common::polynomial_sample(500, 1);
    let (problem, r) = linear_fit(&data);
    let spec = EffectSpec::new(2, |obs, t, out| {
        out[0] = t[1];
        out[1] = t[0] + t[1] * obs.x0();
    });
    let a = average_effect_corrected(&spec, &r, &problem).unwrap();
    for j in 0..2 {
        assert_relative_eq!(a.merm[j], a.naive[j], epsilon = 1e-9);
        assert_relative_eq!(a.merm_se[j], a.naive_se[j], epsilon = 1e-9, max_relative = 1e-6);
    }
}

#[test]
fn squared_x_is_corrected_by_twice_gamma() {
    let (_, data) = common::polynomial_sample(500, 2);
    let (problem, r) = linear_fit(&data);
    let spec = EffectSpec::new(1, |obs, _, out| out[0] = obs.x0() * obs.x0());
    let a = average_effect_corrected(&spec, &r, &problem).unwrap();
    let mean_x2 = (0..data.n()).map(|i| data.obs(i).x0().powi(2)).sum::<f64>() / data.n() as f64;
    assert_relative_eq!(a.naive[0], mean_x2, epsilon = 1e-12);
    assert_relative_eq!(a.merm[0], mean_x2 - 2.0 * r.nuisance[0], epsilon = 1e-6);
}

#[test]
fn zero_gamma_means_no_correction() {
    let (_, data) = common::polynomial_sample(500, 3);
    let (problem, mut r) = linear_fit(&data);
    r.nuisance = vec![0.0];
    let spec = EffectSpec::new(1, |obs, t, out| out[0] = (t[0] + t[1] * obs.x0()).exp());
    let a = average_effect_corrected(&spec, &r, &problem).unwrap();
    assert_relative_eq!(a.merm[0], a.naive[0], epsilon = 1e-12);
}

#[test]
fn delta_method_of_a_coordinate_is_its_standard_error() {
    let sigma = dmatrix![4.0, 1.0; 1.0, 9.0];
    let beta = [0.3, -1.2];
    let id = |b: &[f64]| vec![b[1]];
    let d = delta_method_at(&beta, &sigma, 100, &id, None).unwrap();
    assert_relative_eq!(d[0].point, -1.2);
    assert_relative_eq!(d[0].se, 0.3, epsilon = 1e-8);
    let doubled = |b: &[f64]| vec![2.0 * b[1]];
    let d2 = delta_method_at(&beta, &sigma, 100, &doubled, None).unwrap();
    assert_relative_eq!(d2[0].point, 2.0 * d[0].point);
    assert_relative_eq!(d2[0].se, 2.0 * d[0].se, epsilon = 1e-8);
}

#[test]
fn delta_method_of_a_linear_functional() {
    let sigma = dmatrix![4.0, 1.0; 1.0, 9.0];
    let f = |b: &[f64]| vec![b[0] - 3.0 * b[1]];
    let jac = |_: &[f64]| vec![1.0, -3.0];
    let want = ((4.0 - 6.0 + 81.0) / 50.0f64).sqrt();
    for analytic in [true, false] {
        let d = delta_method_at(&[1.0, 2.0], &sigma, 50, &f, if analytic { Some(&jac) } else { None }).unwrap();
        assert_relative_eq!(d[0].point, -5.0);
        assert_relative_eq!(d[0].se, want, epsilon = 1e-8);
    }
}

#[test]
fn k2_bound_scales_with_the_fourth_power_of_the_error_scale() {
    let base = k2_interval(0.8, 0.1, 9.0).unwrap();
    for c in [0.5, 2.0, 10.0] {
        let scaled = k2_interval(0.8, c * c * 0.1, 9.0).unwrap();
        for j in 0..2 {
            assert_relative_eq!(scaled[j], c.powi(4) * base[j], max_relative = 1e-12);
        }
    }
    let flipped = k2_interval(-0.8, 0.1, 9.0).unwrap();
    assert_relative_eq!(flipped[0], -base[1]);
    assert_relative_eq!(flipped[1], -base[0]);
    assert!(k2_interval(1.0, 0.1, 0.5).is_err());
}

#[test]
fn gaussian_kurtosis_bound_keeps_the_sign_known() {
    let i = k2_interval(1.0, 0.125, 6.0).unwrap();
    assert_eq!(i[1], 0.0);
    assert_eq!(interval_sign(i), Some(-1));
    assert_eq!(interval_sign(k2_interval(1.0, 0.125, 10.0).unwrap()), None);
}

fn polynomial_fit(rep: u64) -> (merm::model::Dataset, EstimationResult) {
    let (_, data) = common::polynomial_sample(1000, rep);
    let problem = common::polynomial_problem(&data, 2);
    let r = estimate(
        &problem,
        &EstimateConfig {
            policy: WeightingPolicy::gmm1_then_efficient(),
            ..EstimateConfig::default()
        },
    )
    .unwrap();
    (data, r)
}

#[test]
fn well_posed_problem_has_full_rank() {
    let (data, r) = polynomial_fit(0);
    let problem = common::polynomial_problem(&data, 2);
    let d = rank_diagnostics(&problem, &r, None).unwrap();
    assert!(d.full_rank);
    assert!(d.ratio > 1e-4, "ratio {}", d.ratio);
    assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn rank_flag_ignores_column_units_and_catches_collinearity() {
    let (data, r) = polynomial_fit(1);
    let problem = common::polynomial_problem(&data, 2);
    let base = rank_diagnostics(&problem, &r, None).unwrap();
    let mut rescaled = r.clone();
    rescaled.psi_jacobian.column_mut(1).scale_mut(1e4);
    let d = rank_diagnostics(&problem, &rescaled, None).unwrap();
    assert_relative_eq!(d.ratio, base.ratio, max_relative = 1e-8);
    let mut collinear = r.clone();
    let c0 = collinear.psi_jacobian.column(0).clone_owned();
    collinear.psi_jacobian.set_column(2, &(c0 * 3.0));
    assert!(!rank_diagnostics(&problem, &collinear, None).unwrap().full_rank);
}

/// `u = y − θ₀`: no dependence on `x`, so the rank condition vector is zero.
struct ConstantInX;

impl Residual for ConstantInX {
    fn dim_theta(&self) -> usize {
        1
    }

    fn jet(&self, obs: &Observation<'_>, theta: &[f64], kmax: usize, u: &mut [f64], _du: Option<&mut [f64]>) -> Result<()> {
        u[0] = obs.s[0] - theta[0];
        u[1..=kmax].iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }
}

#[test]
fn condition_vector_flags_a_residual_without_x() {
    let (data, r) = polynomial_fit(2);
    let problem = common::polynomial_problem(&data, 2);
    let constant = SecondMeasurementCheck {
        residual: Arc::new(ConstantInX),
        j: 3,
    };
    let d = rank_diagnostics(&problem, &r, Some(&constant)).unwrap();
    assert_eq!(d.condition_vector_zero, Some(true));
    assert_eq!(d.condition_vector.unwrap().len(), 3);
}
