use std::sync::Arc;

use nalgebra::DMatrix;

use super::dataset::{Dataset, Observation};
use super::multi_index::MultiIndex;
use super::numdiff::{self, StepPolicy};
use crate::error::{MermError, Result};

/// Highest derivative order served by the numeric fallback.
pub const MAX_NUMERIC_ORDER: usize = 8;

/// A vector-valued moment function `g(x, s, θ)` together with its derivatives
/// in the mismeasured coordinates `x`.
///
/// Only [`MomentFunction::value`] is mandatory: derivatives default to central
/// finite differences. Built-in models override them with analytic versions.
///
/// Output layouts: `x_derivatives` writes one `m`-block per requested
/// multi-index; `theta_derivatives` writes one row-major `m x dim_theta` block
/// per multi-index.
pub trait MomentFunction: Send + Sync {
    fn m(&self) -> usize;
    fn dim_theta(&self) -> usize;

    /// Number of mismeasured coordinates.
    fn d(&self) -> usize {
        1
    }

    /// Highest total order of x-derivatives this provider can deliver.
    fn max_order(&self) -> usize {
        MAX_NUMERIC_ORDER
    }

    fn step_policy(&self) -> StepPolicy {
        StepPolicy::default()
    }

    /// Checks that the dataset has the columns the model reads.
    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.d() != self.d() {
            return Err(MermError::dim("mismeasured coordinates", self.d(), data.d()));
        }
        Ok(())
    }

    fn value(&self, obs: &Observation<'_>, theta: &[f64], out: &mut [f64]) -> Result<()>;

    fn x_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        numeric_x_derivatives(self, obs, theta, kappas, out)
    }

    fn theta_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        numeric_theta_derivatives(self, obs, theta, kappas, out)
    }
}

/// Finite-difference x-derivatives built on [`MomentFunction::value`].
pub fn numeric_x_derivatives<M: MomentFunction + ?Sized>(
    model: &M,
    obs: &Observation<'_>,
    theta: &[f64],
    kappas: &[MultiIndex],
    out: &mut [f64],
) -> Result<()> {
    let m = model.m();
    let policy = model.step_policy();
    for (j, kappa) in kappas.iter().enumerate() {
        if kappa.order() > MAX_NUMERIC_ORDER {
            return Err(MermError::UnsupportedOrder {
                requested: kappa.order(),
                supported: MAX_NUMERIC_ORDER,
            });
        }
        let block = &mut out[j * m..(j + 1) * m];
        numdiff::partial(
            |x, o| {
                let shifted = Observation { x, s: obs.s };
                model.value(&shifted, theta, o)
            },
            obs.x,
            &kappa.0,
            m,
            &policy,
            block,
        )?;
    }
    Ok(())
}

/// Five-point θ-differences of [`MomentFunction::x_derivatives`].
pub fn numeric_theta_derivatives<M: MomentFunction + ?Sized>(
    model: &M,
    obs: &Observation<'_>,
    theta: &[f64],
    kappas: &[MultiIndex],
    out: &mut [f64],
) -> Result<()> {
    let m = model.m();
    let p = model.dim_theta();
    let total = kappas.len() * m;
    let mut jac = vec![0.0; total * p];
    numdiff::jacobian_5pt(|t, o| model.x_derivatives(obs, t, kappas, o), theta, total, &mut jac)?;
    out[..total * p].copy_from_slice(&jac);
    Ok(())
}

fn check_theta<M: MomentFunction + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim_theta() {
        return Err(MermError::dim("theta", model.dim_theta(), theta.len()));
    }
    Ok(())
}

fn check_rows(what: &str, values: &[f64], row: usize) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MermError::NonFinite {
            what: what.to_string(),
            row,
        });
    }
    Ok(())
}

/// `n x m` matrix whose row `i` is `g(X_i, S_i, θ)`.
pub fn evaluate_moments<M: MomentFunction + ?Sized>(model: &M, data: &Dataset, theta: &[f64]) -> Result<DMatrix<f64>> {
    check_theta(model, theta)?;
    model.check_data(data)?;
    let m = model.m();
    let mut out = DMatrix::zeros(data.n(), m);
    let mut row = vec![0.0; m];
    for i in 0..data.n() {
        model.value(&data.obs(i), theta, &mut row)?;
        check_rows("moment function", &row, i)?;
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok(out)
}

/// What a [`DerivativeRequest`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeTarget {
    Value,
    ThetaJacobian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeRequest {
    pub target: DerivativeTarget,
    pub kappa: MultiIndex,
}

/// Row-wise `∂_κ g`. For [`DerivativeTarget::Value`] the result has one
/// `n x m` matrix; for the θ-Jacobian it has one `n x m` matrix per θ component.
pub fn derivative_x<M: MomentFunction + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    req: &DerivativeRequest,
) -> Result<Vec<DMatrix<f64>>> {
    check_theta(model, theta)?;
    model.check_data(data)?;
    if req.kappa.dim() != model.d() {
        return Err(MermError::dim("multi-index", model.d(), req.kappa.dim()));
    }
    if req.kappa.order() > model.max_order() {
        return Err(MermError::UnsupportedOrder {
            requested: req.kappa.order(),
            supported: model.max_order(),
        });
    }
    let m = model.m();
    let p = model.dim_theta();
    let kappas = std::slice::from_ref(&req.kappa);
    match req.target {
        DerivativeTarget::Value => {
            let mut out = DMatrix::zeros(data.n(), m);
            let mut row = vec![0.0; m];
            for i in 0..data.n() {
                model.x_derivatives(&data.obs(i), theta, kappas, &mut row)?;
                check_rows("moment derivative", &row, i)?;
                for (j, v) in row.iter().enumerate() {
                    out[(i, j)] = *v;
                }
            }
            Ok(vec![out])
        }
        DerivativeTarget::ThetaJacobian => {
            let mut out = vec![DMatrix::zeros(data.n(), m); p];
            let mut block = vec![0.0; m * p];
            for i in 0..data.n() {
                model.theta_derivatives(&data.obs(i), theta, kappas, &mut block)?;
                check_rows("moment θ-Jacobian", &block, i)?;
                for j in 0..m {
                    for (l, mat) in out.iter_mut().enumerate() {
                        mat[(i, j)] = block[j * p + l];
                    }
                }
            }
            Ok(out)
        }
    }
}

type ValueFn = dyn Fn(&Observation<'_>, &[f64], &mut [f64]) + Send + Sync;
type XDerivFn = dyn Fn(&Observation<'_>, &[f64], &MultiIndex, &mut [f64]) + Send + Sync;
type ThetaDerivFn = dyn Fn(&Observation<'_>, &[f64], &MultiIndex, &mut [f64]) + Send + Sync;

/// Moment function assembled from closures. Derivative closures are optional;
/// missing ones fall back to finite differences.
#[derive(Clone)]
pub struct ClosureMoment {
    m: usize,
    dim_theta: usize,
    d: usize,
    value: Arc<ValueFn>,
    x_deriv: Option<(Arc<XDerivFn>, usize)>,
    theta_deriv: Option<Arc<ThetaDerivFn>>,
    policy: StepPolicy,
}

impl ClosureMoment {
    pub fn new<F>(m: usize, dim_theta: usize, d: usize, value: F) -> Self
    where
        F: Fn(&Observation<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            m,
            dim_theta,
            d,
            value: Arc::new(value),
            x_deriv: None,
            theta_deriv: None,
            policy: StepPolicy::default(),
        }
    }

    /// Analytic `∂_κ g` for `|κ| ≤ max_order`.
    pub fn with_x_derivatives<F>(mut self, max_order: usize, f: F) -> Self
    where
        F: Fn(&Observation<'_>, &[f64], &MultiIndex, &mut [f64]) + Send + Sync + 'static,
    {
        self.x_deriv = Some((Arc::new(f), max_order));
        self
    }

    /// Analytic `∇_θ ∂_κ g` as a row-major `m x dim_theta` block.
    pub fn with_theta_derivatives<F>(mut self, f: F) -> Self
    where
        F: Fn(&Observation<'_>, &[f64], &MultiIndex, &mut [f64]) + Send + Sync + 'static,
    {
        self.theta_deriv = Some(Arc::new(f));
        self
    }

    pub fn with_step_policy(mut self, policy: StepPolicy) -> Self {
        self.policy = policy;
        self
    }
}

impl std::fmt::Debug for ClosureMoment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosureMoment")
            .field("m", &self.m)
            .field("dim_theta", &self.dim_theta)
            .field("d", &self.d)
            .field("analytic_x", &self.x_deriv.is_some())
            .field("analytic_theta", &self.theta_deriv.is_some())
            .finish()
    }
}

impl MomentFunction for ClosureMoment {
    fn m(&self) -> usize {
        self.m
    }

    fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    fn d(&self) -> usize {
        self.d
    }

    fn max_order(&self) -> usize {
        match &self.x_deriv {
            Some((_, k)) => *k,
            None => MAX_NUMERIC_ORDER,
        }
    }

    fn step_policy(&self) -> StepPolicy {
        self.policy
    }

    fn value(&self, obs: &Observation<'_>, theta: &[f64], out: &mut [f64]) -> Result<()> {
        (self.value)(obs, theta, out);
        Ok(())
    }

    fn x_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        match &self.x_deriv {
            Some((f, max)) => {
                for (j, kappa) in kappas.iter().enumerate() {
                    if kappa.order() > *max {
                        return Err(MermError::UnsupportedOrder {
                            requested: kappa.order(),
                            supported: *max,
                        });
                    }
                    f(obs, theta, kappa, &mut out[j * self.m..(j + 1) * self.m]);
                }
                Ok(())
            }
            None => numeric_x_derivatives(self, obs, theta, kappas, out),
        }
    }

    fn theta_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        match &self.theta_deriv {
            Some(f) => {
                let block = self.m * self.dim_theta;
                for (j, kappa) in kappas.iter().enumerate() {
                    f(obs, theta, kappa, &mut out[j * block..(j + 1) * block]);
                }
                Ok(())
            }
            None => numeric_theta_derivatives(self, obs, theta, kappas, out),
        }
    }
}
