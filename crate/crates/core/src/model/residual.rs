//! Moment functions of the form `g = u(x, s, θ) · φ(x, s)`.
//!
//! A [`Residual`] supplies `u` and its x-derivatives (a "jet"), an
//! [`Instruments`] object supplies `φ` and its x-derivatives, and
//! [`ResidualMoments`] combines them with the Leibniz rule
//! `(uφ)^{(k)} = Σ_j C(k,j) u^{(j)} φ^{(k-j)}`. Only scalar `x` is supported.

use std::sync::Arc;

use statrs::function::erf::erf;

use super::basis::InstrumentBasis;
use super::dataset::{Dataset, Observation, SideColumn};
use super::moment::{MomentFunction, MAX_NUMERIC_ORDER};
use super::multi_index::{binomial, MultiIndex};
use super::numdiff::{self, StepPolicy};
use crate::error::{MermError, Result};

/// Regression function `ρ(x, s, θ)` with x-derivatives.
pub trait Regression: Send + Sync {
    fn dim_theta(&self) -> usize;

    fn max_order(&self) -> usize {
        usize::MAX
    }

    /// Writes `ρ^{(k)}` for `k = 0..=kmax` into `rho` and, when requested,
    /// `∇_θ ρ^{(k)}` into `grad` (row-major `(kmax+1) x dim_theta`).
    fn jet(&self, x: f64, s: &[f64], theta: &[f64], kmax: usize, rho: &mut [f64], grad: Option<&mut [f64]>) -> Result<()>;

    fn value(&self, x: f64, s: &[f64], theta: &[f64]) -> Result<f64> {
        let mut r = [0.0];
        self.jet(x, s, theta, 0, &mut r, None)?;
        Ok(r[0])
    }
}

/// `ρ = Σ_{j=0}^{p} θ_{j+1} x^j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolynomialRegression {
    pub degree: usize,
}

impl Regression for PolynomialRegression {
    fn dim_theta(&self) -> usize {
        self.degree + 1
    }

    fn jet(&self, x: f64, _s: &[f64], theta: &[f64], kmax: usize, rho: &mut [f64], mut grad: Option<&mut [f64]>) -> Result<()> {
        let p = self.degree + 1;
        for k in 0..=kmax {
            let mut acc = 0.0;
            for j in 0..p {
                let c = if j < k {
                    0.0
                } else {
                    let falling: f64 = ((j - k + 1)..=j).map(|i| i as f64).product();
                    falling * x.powi((j - k) as i32)
                };
                acc += theta[j] * c;
                if let Some(g) = grad.as_deref_mut() {
                    g[k * p + j] = c;
                }
            }
            rho[k] = acc;
        }
        Ok(())
    }
}

/// `ρ = θ₁ + θ₂x + θ₃/(1+x²)²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RationalRegression;

/// Derivatives `0..=kmax` of `(1+x²)^{-2}` via `q·P = 1`, `P = (1+x²)²`.
fn rational_factor_jet(x: f64, kmax: usize) -> Vec<f64> {
    let x2 = x * x;
    let p = [
        (1.0 + x2) * (1.0 + x2),
        4.0 * x + 4.0 * x * x2,
        4.0 + 12.0 * x2,
        24.0 * x,
        24.0,
    ];
    let mut q = vec![0.0; kmax + 1];
    q[0] = 1.0 / p[0];
    for n in 1..=kmax {
        let mut acc = 0.0;
        for i in 1..=n.min(4) {
            acc += binomial(n, i) * p[i] * q[n - i];
        }
        q[n] = -acc / p[0];
    }
    q
}

impl Regression for RationalRegression {
    fn dim_theta(&self) -> usize {
        3
    }

    fn jet(&self, x: f64, _s: &[f64], theta: &[f64], kmax: usize, rho: &mut [f64], mut grad: Option<&mut [f64]>) -> Result<()> {
        let q = rational_factor_jet(x, kmax);
        for k in 0..=kmax {
            let (c1, c2) = match k {
                0 => (1.0, x),
                1 => (0.0, 1.0),
                _ => (0.0, 0.0),
            };
            rho[k] = theta[0] * c1 + theta[1] * c2 + theta[2] * q[k];
            if let Some(g) = grad.as_deref_mut() {
                g[k * 3] = c1;
                g[k * 3 + 1] = c2;
                g[k * 3 + 2] = q[k];
            }
        }
        Ok(())
    }
}

/// `ρ = ½(1 + erf(θ₁ + θ₂x))`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbitRegression;

/// `G_k(t) = d^k/dt^k ½(1 + erf t)` for `k = 0..=kmax`, using
/// `G_k = π^{-1/2} (-1)^{k-1} H_{k-1}(t) e^{-t²}` with physicists' Hermite `H`.
pub fn probit_jet(t: f64, kmax: usize) -> Vec<f64> {
    let mut g = vec![0.0; kmax + 1];
    g[0] = 0.5 * (1.0 + erf(t));
    if kmax == 0 {
        return g;
    }
    let base = (-t * t).exp() / std::f64::consts::PI.sqrt();
    let (mut h_prev, mut h) = (0.0, 1.0);
    for k in 1..=kmax {
        let n = k - 1;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        g[k] = sign * h * base;
        let next = 2.0 * t * h - 2.0 * n as f64 * h_prev;
        h_prev = h;
        h = next;
    }
    g
}

impl Regression for ProbitRegression {
    fn dim_theta(&self) -> usize {
        2
    }

    fn jet(&self, x: f64, _s: &[f64], theta: &[f64], kmax: usize, rho: &mut [f64], mut grad: Option<&mut [f64]>) -> Result<()> {
        let (a, b) = (theta[0], theta[1]);
        let g = probit_jet(a + b * x, kmax + 1);
        for k in 0..=kmax {
            rho[k] = b.powi(k as i32) * g[k];
            if let Some(d) = grad.as_deref_mut() {
                d[k * 2] = b.powi(k as i32) * g[k + 1];
                let lead = if k == 0 { 0.0 } else { k as f64 * b.powi(k as i32 - 1) * g[k] };
                d[k * 2 + 1] = lead + b.powi(k as i32) * x * g[k + 1];
            }
        }
        Ok(())
    }
}

type RhoFn = dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync;

/// Regression given by a closure; derivatives by finite differences.
#[derive(Clone)]
pub struct ClosureRegression {
    dim_theta: usize,
    f: Arc<RhoFn>,
    policy: StepPolicy,
}

impl ClosureRegression {
    pub fn new<F>(dim_theta: usize, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim_theta,
            f: Arc::new(f),
            policy: StepPolicy::default(),
        }
    }

    pub fn with_step_policy(mut self, policy: StepPolicy) -> Self {
        self.policy = policy;
        self
    }

    fn x_jet(&self, x: f64, s: &[f64], theta: &[f64], kmax: usize, out: &mut [f64]) -> Result<()> {
        for (k, o) in out.iter_mut().enumerate().take(kmax + 1) {
            *o = numdiff::derivative(|v| (self.f)(v, s, theta), x, k, &self.policy)?;
        }
        Ok(())
    }
}

impl std::fmt::Debug for ClosureRegression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosureRegression").field("dim_theta", &self.dim_theta).finish()
    }
}

impl Regression for ClosureRegression {
    fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    fn max_order(&self) -> usize {
        MAX_NUMERIC_ORDER
    }

    fn jet(&self, x: f64, s: &[f64], theta: &[f64], kmax: usize, rho: &mut [f64], grad: Option<&mut [f64]>) -> Result<()> {
        self.x_jet(x, s, theta, kmax, rho)?;
        if let Some(g) = grad {
            numdiff::jacobian_5pt(|t, o| self.x_jet(x, s, t, kmax, o), theta, kmax + 1, g)?;
        }
        Ok(())
    }
}

/// Scalar conditional moment `u(x, s, θ)` with x-jets.
pub trait Residual: Send + Sync {
    fn dim_theta(&self) -> usize;

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn check_data(&self, _data: &Dataset) -> Result<()> {
        Ok(())
    }

    /// `u^{(k)}`, `k = 0..=kmax`, and optionally `∇_θ u^{(k)}` (row-major
    /// `(kmax+1) x dim_theta`).
    fn jet(&self, obs: &Observation<'_>, theta: &[f64], kmax: usize, u: &mut [f64], du: Option<&mut [f64]>) -> Result<()>;
}

/// `u = y − ρ(x, s, θ)`.
#[derive(Clone)]
pub struct RegressionResidual {
    rho: Arc<dyn Regression>,
    y: SideColumn,
}

impl RegressionResidual {
    pub fn new(rho: Arc<dyn Regression>, side_names: &[String], y: &str) -> Result<Self> {
        Ok(Self {
            rho,
            y: SideColumn::resolve(side_names, y)?,
        })
    }

    pub fn regression(&self) -> &Arc<dyn Regression> {
        &self.rho
    }
}

impl Residual for RegressionResidual {
    fn dim_theta(&self) -> usize {
        self.rho.dim_theta()
    }

    fn max_order(&self) -> usize {
        self.rho.max_order()
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        self.y.check(data)
    }

    fn jet(&self, obs: &Observation<'_>, theta: &[f64], kmax: usize, u: &mut [f64], mut du: Option<&mut [f64]>) -> Result<()> {
        self.rho.jet(obs.x0(), obs.s, theta, kmax, u, du.as_deref_mut())?;
        for v in u.iter_mut().take(kmax + 1) {
            *v = -*v;
        }
        u[0] += self.y.get(obs);
        if let Some(g) = du {
            for v in g.iter_mut() {
                *v = -*v;
            }
        }
        Ok(())
    }
}

type UFn = dyn Fn(&Observation<'_>, &[f64]) -> f64 + Send + Sync;

/// Residual given by a closure in `(x, s, θ)`; derivatives by finite differences.
#[derive(Clone)]
pub struct ClosureResidual {
    dim_theta: usize,
    f: Arc<UFn>,
    policy: StepPolicy,
}

impl ClosureResidual {
    pub fn new<F>(dim_theta: usize, f: F) -> Self
    where
        F: Fn(&Observation<'_>, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim_theta,
            f: Arc::new(f),
            policy: StepPolicy::default(),
        }
    }

    fn x_jet(&self, obs: &Observation<'_>, theta: &[f64], kmax: usize, out: &mut [f64]) -> Result<()> {
        for (k, o) in out.iter_mut().enumerate().take(kmax + 1) {
            *o = numdiff::derivative(
                |v| {
                    let xs = [v];
                    (self.f)(&Observation { x: &xs, s: obs.s }, theta)
                },
                obs.x0(),
                k,
                &self.policy,
            )?;
        }
        Ok(())
    }
}

impl Residual for ClosureResidual {
    fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    fn max_order(&self) -> usize {
        MAX_NUMERIC_ORDER
    }

    fn jet(&self, obs: &Observation<'_>, theta: &[f64], kmax: usize, u: &mut [f64], du: Option<&mut [f64]>) -> Result<()> {
        self.x_jet(obs, theta, kmax, u)?;
        if let Some(g) = du {
            numdiff::jacobian_5pt(|t, o| self.x_jet(obs, t, kmax, o), theta, kmax + 1, g)?;
        }
        Ok(())
    }
}

/// Instrument vector `φ(x, s)` with x-jets.
pub trait Instruments: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_data(&self, _data: &Dataset) -> Result<()> {
        Ok(())
    }

    /// `φ^{(k)}` for `k = 0..=kmax`, row-major `(kmax+1) x len()`.
    fn jet(&self, obs: &Observation<'_>, kmax: usize, out: &mut [f64]);
}

/// Polynomial basis in `(x, z)` followed by side columns used as extra instruments.
#[derive(Debug, Clone)]
pub struct PolynomialInstruments {
    basis: InstrumentBasis,
    z: SideColumn,
    extras: Vec<SideColumn>,
}

impl PolynomialInstruments {
    pub fn new(basis: InstrumentBasis, side_names: &[String], z: &str, extras: &[&str]) -> Result<Self> {
        Ok(Self {
            basis,
            z: SideColumn::resolve(side_names, z)?,
            extras: extras
                .iter()
                .map(|e| SideColumn::resolve(side_names, e))
                .collect::<Result<_>>()?,
        })
    }

    pub fn basis(&self) -> &InstrumentBasis {
        &self.basis
    }
}

impl Instruments for PolynomialInstruments {
    fn len(&self) -> usize {
        self.basis.len() + self.extras.len()
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        self.z.check(data)?;
        self.extras.iter().try_for_each(|e| e.check(data))
    }

    fn jet(&self, obs: &Observation<'_>, kmax: usize, out: &mut [f64]) {
        let len = self.len();
        let extra: Vec<f64> = self.extras.iter().map(|e| e.get(obs)).collect();
        let z = self.z.get(obs);
        for k in 0..=kmax {
            self.basis
                .derivative(k, obs.x0(), z, &extra, &mut out[k * len..(k + 1) * len]);
        }
    }
}

/// `(1, x, …, x^J, q, qx, …, qx^{J−1})` for second-measurement moments.
#[derive(Debug, Clone)]
pub struct SecondMeasurementInstruments {
    j: usize,
    q: SideColumn,
}

impl SecondMeasurementInstruments {
    pub fn new(j: usize, side_names: &[String], q: &str) -> Result<Self> {
        Ok(Self {
            j,
            q: SideColumn::resolve(side_names, q)?,
        })
    }
}

fn power_derivative(a: usize, k: usize, x: f64) -> f64 {
    if k > a {
        0.0
    } else {
        let falling: f64 = ((a - k + 1)..=a).map(|i| i as f64).product();
        falling * x.powi((a - k) as i32)
    }
}

impl Instruments for SecondMeasurementInstruments {
    fn len(&self) -> usize {
        2 * self.j + 1
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        self.q.check(data)
    }

    fn jet(&self, obs: &Observation<'_>, kmax: usize, out: &mut [f64]) {
        let len = self.len();
        let (x, q) = (obs.x0(), self.q.get(obs));
        for k in 0..=kmax {
            let row = &mut out[k * len..(k + 1) * len];
            for a in 0..=self.j {
                row[a] = power_derivative(a, k, x);
            }
            for a in 0..self.j {
                row[self.j + 1 + a] = q * power_derivative(a, k, x);
            }
        }
    }
}

/// `g = u(x, s, θ) · φ(x, s)` with analytic derivatives from the two jets.
#[derive(Clone)]
pub struct ResidualMoments {
    u: Arc<dyn Residual>,
    phi: Arc<dyn Instruments>,
}

impl ResidualMoments {
    pub fn new(u: Arc<dyn Residual>, phi: Arc<dyn Instruments>) -> Self {
        Self { u, phi }
    }

    pub fn residual(&self) -> &Arc<dyn Residual> {
        &self.u
    }

    fn kmax(kappas: &[MultiIndex]) -> Result<usize> {
        let mut kmax = 0;
        for k in kappas {
            if k.dim() != 1 {
                return Err(MermError::dim("multi-index", 1, k.dim()));
            }
            kmax = kmax.max(k.order());
        }
        Ok(kmax)
    }
}

impl MomentFunction for ResidualMoments {
    fn m(&self) -> usize {
        self.phi.len()
    }

    fn dim_theta(&self) -> usize {
        self.u.dim_theta()
    }

    fn max_order(&self) -> usize {
        self.u.max_order()
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.d() != 1 {
            return Err(MermError::dim("mismeasured coordinates", 1, data.d()));
        }
        self.u.check_data(data)?;
        self.phi.check_data(data)
    }

    fn value(&self, obs: &Observation<'_>, theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.x_derivatives(obs, theta, &[MultiIndex::scalar(0)], out)
    }

    fn x_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        let kmax = Self::kmax(kappas)?;
        let m = self.m();
        let mut u = vec![0.0; kmax + 1];
        self.u.jet(obs, theta, kmax, &mut u, None)?;
        let mut phi = vec![0.0; (kmax + 1) * m];
        self.phi.jet(obs, kmax, &mut phi);
        for (idx, kappa) in kappas.iter().enumerate() {
            let k = kappa.order();
            let block = &mut out[idx * m..(idx + 1) * m];
            block.fill(0.0);
            for j in 0..=k {
                let c = binomial(k, j) * u[j];
                if c == 0.0 {
                    continue;
                }
                let f = &phi[(k - j) * m..(k - j + 1) * m];
                for (b, p) in block.iter_mut().zip(f) {
                    *b += c * p;
                }
            }
        }
        Ok(())
    }

    fn theta_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        let kmax = Self::kmax(kappas)?;
        let m = self.m();
        let p = self.dim_theta();
        let mut u = vec![0.0; kmax + 1];
        let mut du = vec![0.0; (kmax + 1) * p];
        self.u.jet(obs, theta, kmax, &mut u, Some(&mut du))?;
        let mut phi = vec![0.0; (kmax + 1) * m];
        self.phi.jet(obs, kmax, &mut phi);
        for (idx, kappa) in kappas.iter().enumerate() {
            let k = kappa.order();
            let block = &mut out[idx * m * p..(idx + 1) * m * p];
            block.fill(0.0);
            for j in 0..=k {
                let c = binomial(k, j);
                let dj = &du[j * p..(j + 1) * p];
                let f = &phi[(k - j) * m..(k - j + 1) * m];
                for (i, fi) in f.iter().enumerate() {
                    if *fi == 0.0 {
                        continue;
                    }
                    for l in 0..p {
                        block[i * p + l] += c * dj[l] * fi;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Nonlinear-regression moments `(y − ρ(x, θ)) φ(x, z, extras)`.
pub fn regression_moments(
    rho: Arc<dyn Regression>,
    basis: InstrumentBasis,
    side_names: &[String],
    y: &str,
    z: &str,
    extras: &[&str],
) -> Result<ResidualMoments> {
    let u = RegressionResidual::new(rho, side_names, y)?;
    let phi = PolynomialInstruments::new(basis, side_names, z, extras)?;
    Ok(ResidualMoments::new(Arc::new(u), Arc::new(phi)))
}

/// Second-measurement moments `(u·(1,…,x^J)', u·q·(1,…,x^{J−1})')'` with
/// `m = 2J+1`. Requires `J ≥ dim(θ) − 1`.
pub fn build_second_measurement_moments(
    u: Arc<dyn Residual>,
    j: usize,
    side_names: &[String],
    q: &str,
) -> Result<ResidualMoments> {
    let p = u.dim_theta();
    if j + 1 < p || j == 0 {
        return Err(MermError::invalid(format!(
            "second-measurement degree J = {j} is too small: need J >= max(1, dim(theta) - 1) = {}",
            p.saturating_sub(1).max(1)
        )));
    }
    let phi = SecondMeasurementInstruments::new(j, side_names, q)?;
    Ok(ResidualMoments::new(u, Arc::new(phi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::basis::BasisKind;
    use crate::model::moment::{numeric_theta_derivatives, numeric_x_derivatives};
    use approx::assert_relative_eq;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn check_regression<R: Regression + Clone + 'static>(r: R, theta: &[f64]) {
        let closure = {
            let r = r.clone();
            ClosureRegression::new(r.dim_theta(), move |x, s, t| r.value(x, s, t).unwrap())
                .with_step_policy(StepPolicy { c: 0.5, accuracy: 10 })
        };
        let p = r.dim_theta();
        for &x in &[-1.7, -0.2, 0.0, 0.9, 2.3] {
            let mut a = vec![0.0; 5];
            let mut ga = vec![0.0; 5 * p];
            r.jet(x, &[], theta, 4, &mut a, Some(&mut ga)).unwrap();
            let mut b = vec![0.0; 5];
            closure.jet(x, &[], theta, 4, &mut b, None).unwrap();
            for k in 0..5 {
                assert!((a[k] - b[k]).abs() <= 1e-6 * (1.0 + a[k].abs()), "k={k} x={x}: {} vs {}", a[k], b[k]);
            }
            let mut gb = vec![0.0; 5 * p];
            numdiff::jacobian_5pt(|t, o| r.jet(x, &[], t, 4, o, None), theta, 5, &mut gb).unwrap();
            for (u, v) in ga.iter().zip(&gb) {
                assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn analytic_regressions_match_finite_differences() {
        check_regression(PolynomialRegression { degree: 3 }, &[1.0, 1.0, 0.0, -0.5]);
        check_regression(RationalRegression, &[1.0, 1.0, 2.0]);
        check_regression(ProbitRegression, &[-1.0, 2.0]);
    }

    #[test]
    fn probit_hermite_jet() {
        let g = probit_jet(0.3, 3);
        let phi = (-0.09f64).exp() / std::f64::consts::PI.sqrt();
        assert_relative_eq!(g[1], phi, max_relative = 1e-15);
        assert_relative_eq!(g[2], -2.0 * 0.3 * phi, max_relative = 1e-15);
        assert_relative_eq!(g[3], (4.0 * 0.09 - 2.0) * phi, max_relative = 1e-14);
    }

    #[test]
    fn polynomial_design_dimension() {
        let side = names(&["y", "z"]);
        let g = regression_moments(
            Arc::new(PolynomialRegression { degree: 3 }),
            InstrumentBasis::new(BasisKind::K2),
            &side,
            "y",
            "z",
            &[],
        )
        .unwrap();
        assert_eq!(g.m(), 7);
        assert_eq!(g.dim_theta(), 4);
    }

    #[test]
    fn leibniz_derivatives_match_numeric() {
        let side = names(&["y", "z", "w"]);
        let g = regression_moments(
            Arc::new(RationalRegression),
            InstrumentBasis::new(BasisKind::K4),
            &side,
            "y",
            "z",
            &["w"],
        )
        .unwrap();
        let theta = [1.0, 1.0, 2.0];
        let s = [0.4, -0.8, 1.5];
        let x = [0.7];
        let obs = Observation { x: &x, s: &s };
        let kappas: Vec<MultiIndex> = (0..=4).map(MultiIndex::scalar).collect();
        let m = g.m();
        let mut a = vec![0.0; 5 * m];
        let mut b = vec![0.0; 5 * m];
        g.x_derivatives(&obs, &theta, &kappas, &mut a).unwrap();
        numeric_x_derivatives(&g, &obs, &theta, &kappas, &mut b).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()), "{u} vs {v}");
        }
        let p = 3;
        let mut ja = vec![0.0; 5 * m * p];
        let mut jb = vec![0.0; 5 * m * p];
        g.theta_derivatives(&obs, &theta, &kappas, &mut ja).unwrap();
        numeric_theta_derivatives(&g, &obs, &theta, &kappas, &mut jb).unwrap();
        for (u, v) in ja.iter().zip(&jb) {
            assert!((u - v).abs() <= 1e-5 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }

    #[test]
    fn second_measurement_dimensions_and_zero_residual() {
        let side = names(&["q"]);
        let u = Arc::new(ClosureResidual::new(2, |_, _| 0.0));
        for j in 1..=4 {
            let g = build_second_measurement_moments(u.clone(), j, &side, "q").unwrap();
            assert_eq!(g.m(), 2 * j + 1);
        }
        let g = build_second_measurement_moments(u.clone(), 2, &side, "q").unwrap();
        let mut out = vec![1.0; 5];
        g.value(&Observation { x: &[1.3], s: &[0.2] }, &[0.5, 0.5], &mut out).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        let u3 = Arc::new(ClosureResidual::new(4, |_, _| 0.0));
        assert!(build_second_measurement_moments(u3, 2, &side, "q").is_err());
    }
}
