//! Estimators that ignore the measurement error: OLS, NLLS and logit MLE.

use nalgebra::{DMatrix, DVector};

use crate::error::{MermError, Result};
use crate::linalg::{inverse_spd, symmetrize};
use crate::model::dataset::Dataset;
use crate::model::logit::ConditionalLogit;
use crate::model::residual::Regression;

/// Point estimate and asymptotic variance (`se = sqrt(diag Σ / n)`).
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveFit {
    pub theta: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
    pub iterations: usize,
}

impl NaiveFit {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.theta.len())
            .map(|i| (self.sigma[(i, i)].max(0.0) / self.n as f64).sqrt())
            .collect()
    }
}

/// `A⁻¹ B A⁻¹` with `A = mean j j'`, `B = mean u² j j'`.
fn sandwich(jac: &DMatrix<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = jac.nrows() as f64;
    let a = jac.transpose() * jac / n;
    let weighted = DMatrix::from_fn(jac.nrows(), jac.ncols(), |i, j| jac[(i, j)] * u[i]);
    let b = weighted.transpose() * &weighted / n;
    let ai = inverse_spd(&a, "regressor second moments")?;
    Ok(symmetrize(&(&ai * b * &ai)))
}

fn response(data: &Dataset, y: &str) -> Result<DVector<f64>> {
    let col = data
        .side_column(y)
        .ok_or_else(|| MermError::invalid(format!("dataset has no side column '{y}'")))?;
    Ok(DVector::from_vec(col))
}

/// OLS of `y` on the columns of `design` with heteroskedasticity-robust variance.
pub fn ols(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<NaiveFit> {
    let n = design.nrows();
    let xtx = design.transpose() * design;
    let inv = inverse_spd(&xtx, "X'X (OLS)")?;
    let beta = inv * (design.transpose() * y);
    let u = y - design * &beta;
    Ok(NaiveFit {
        theta: beta.iter().copied().collect(),
        sigma: sandwich(design, &u)?,
        n,
        iterations: 1,
    })
}

/// OLS of `y` on `(1, x, …, x^degree)`.
pub fn ols_polynomial(data: &Dataset, y: &str, degree: usize) -> Result<NaiveFit> {
    let x = data.x_column(0);
    let design = DMatrix::from_fn(data.n(), degree + 1, |i, j| x[i].powi(j as i32));
    ols(&design, &response(data, y)?)
}

/// Nonlinear least squares by damped Gauss–Newton (Levenberg–Marquardt).
pub fn nlls(rho: &dyn Regression, data: &Dataset, y: &str, start: &[f64], max_iter: usize) -> Result<NaiveFit> {
    let p = rho.dim_theta();
    if start.len() != p {
        return Err(MermError::dim("NLLS start", p, start.len()));
    }
    let yv = response(data, y)?;
    let n = data.n();
    let eval = |theta: &[f64]| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut u = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, p);
        let mut r = [0.0];
        let mut g = vec![0.0; p];
        for i in 0..n {
            let o = data.obs(i);
            rho.jet(o.x0(), o.s, theta, 0, &mut r, Some(&mut g))?;
            u[i] = yv[i] - r[0];
            for j in 0..p {
                jac[(i, j)] = g[j];
            }
        }
        Ok((u, jac))
    };
    let mut theta = start.to_vec();
    let (mut u, mut jac) = eval(&theta)?;
    let mut ssr = u.norm_squared();
    let mut lambda = 1e-3;
    for it in 0..max_iter {
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &u;
        if grad.amax() <= 1e-10 * (1.0 + ssr) {
            return Ok(NaiveFit {
                sigma: sandwich(&jac, &u)?,
                theta,
                n,
                iterations: it,
            });
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for j in 0..p {
                damped[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            match eval(&trial) {
                Ok((ut, jt)) if ut.iter().all(|v| v.is_finite()) && ut.norm_squared() <= ssr => {
                    let small = step.amax() <= 1e-12 * (1.0 + trial.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                    theta = trial;
                    ssr = ut.norm_squared();
                    u = ut;
                    jac = jt;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if small {
                        return Ok(NaiveFit {
                            sigma: sandwich(&jac, &u)?,
                            theta,
                            n,
                            iterations: it + 1,
                        });
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    let grad = jac.transpose() * &u;
    if grad.amax() <= 1e-7 * (1.0 + ssr) {
        return Ok(NaiveFit {
            sigma: sandwich(&jac, &u)?,
            theta,
            n,
            iterations: max_iter,
        });
    }
    Err(MermError::NoConvergence("nonlinear least squares did not converge".into()))
}

/// Conditional logit maximum likelihood by Newton's method with step halving;
/// variance is the inverse information.
pub fn logit_mle(model: &ConditionalLogit, data: &Dataset, start: &[f64], max_iter: usize) -> Result<NaiveFit> {
    let p = start.len();
    let n = data.n();
    let eval = |theta: &[f64]| {
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let mut s = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        let mut ll = 0.0;
        for i in 0..n {
            ll += model.loglik_parts(&data.obs(i), theta, &mut score, &mut info);
            s += DVector::from_column_slice(&score);
            h += DMatrix::from_row_slice(p, p, &info);
        }
        (ll / n as f64, s / n as f64, h / n as f64)
    };
    let mut theta = start.to_vec();
    let (mut ll, mut score, mut info) = eval(&theta);
    for it in 0..max_iter {
        if score.amax() <= 1e-10 {
            let sigma = inverse_spd(&info, "logit information")?;
            return Ok(NaiveFit { theta, sigma, n, iterations: it });
        }
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&score),
            None => score.clone(),
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + alpha * s).collect();
            let (lt, st, it_) = eval(&trial);
            if lt.is_finite() && lt >= ll - 1e-14 * ll.abs() {
                theta = trial;
                ll = lt;
                score = st;
                info = it_;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if score.amax() <= 1e-7 {
        let sigma = inverse_spd(&info, "logit information")?;
        return Ok(NaiveFit {
            theta,
            sigma,
            n,
            iterations: max_iter,
        });
    }
    Err(MermError::NoConvergence("logit maximum likelihood did not converge".into()))
}
