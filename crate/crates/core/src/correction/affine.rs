//! Affine non-classical errors: `X = α₀ + α₁ X* + ε`.
//!
//! The moment is reparameterized as `g̃(x, s, θ̃) = g((x − α₀)/α₁, s, θ)` with
//! `θ̃ = (θ, α₀, α₁)`, and two moments pinning the location and scale of `X*`
//! to external summary statistics are appended:
//! `x̃ − μ` and `(x̃ − μ)² − σ²`.

use std::sync::Arc;

use crate::error::{MermError, Result};
use crate::model::dataset::{Dataset, Observation};
use crate::model::moment::MomentFunction;
use crate::model::multi_index::MultiIndex;

/// Smallest admissible `|α₁|`.
pub const MIN_SCALE: f64 = 1e-8;

#[derive(Clone)]
pub struct AffineNonclassical {
    inner: Arc<dyn MomentFunction>,
    mu: f64,
    var: f64,
}

impl std::fmt::Debug for AffineNonclassical {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineNonclassical")
            .field("m", &self.m())
            .field("mu", &self.mu)
            .field("var", &self.var)
            .finish()
    }
}

/// Wraps `g` into the augmented moment of dimension `m + 2` with parameter
/// `(θ, α₀, α₁)`.
pub fn build_affine_nonclassical_problem(g: Arc<dyn MomentFunction>, mu_xstar: f64, var_xstar: f64) -> Result<AffineNonclassical> {
    if !(var_xstar > 0.0) || !var_xstar.is_finite() {
        return Err(MermError::invalid(format!("variance of X* must be positive, got {var_xstar}")));
    }
    if !mu_xstar.is_finite() {
        return Err(MermError::invalid("mean of X* must be finite"));
    }
    if g.d() != 1 {
        return Err(MermError::invalid("affine non-classical errors require a scalar mismeasured covariate"));
    }
    Ok(AffineNonclassical {
        inner: g,
        mu: mu_xstar,
        var: var_xstar,
    })
}

impl AffineNonclassical {
    fn split<'t>(&self, theta: &'t [f64]) -> Result<(&'t [f64], f64, f64)> {
        let p = self.inner.dim_theta();
        let (a0, a1) = (theta[p], theta[p + 1]);
        if a1.abs() < MIN_SCALE {
            return Err(MermError::invalid(format!("scale parameter alpha_1 = {a1} is too close to zero")));
        }
        Ok((&theta[..p], a0, a1))
    }

    /// Rows `k = 0, 1, 2` of the x-derivatives of the two appended moments.
    fn appended(&self, xt: f64, a1: f64, k: usize) -> (f64, f64) {
        let e = xt - self.mu;
        match k {
            0 => (e, e * e - self.var),
            1 => (1.0 / a1, 2.0 * e / a1),
            2 => (0.0, 2.0 / (a1 * a1)),
            _ => (0.0, 0.0),
        }
    }
}

impl MomentFunction for AffineNonclassical {
    fn m(&self) -> usize {
        self.inner.m() + 2
    }

    fn dim_theta(&self) -> usize {
        self.inner.dim_theta() + 2
    }

    fn max_order(&self) -> usize {
        self.inner.max_order().saturating_sub(1)
    }

    fn step_policy(&self) -> crate::model::numdiff::StepPolicy {
        self.inner.step_policy()
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        self.inner.check_data(data)
    }

    fn value(&self, obs: &Observation<'_>, theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.x_derivatives(obs, theta, &[MultiIndex::scalar(0)], out)
    }

    fn x_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        let (th, a0, a1) = self.split(theta)?;
        let m0 = self.inner.m();
        let m = m0 + 2;
        let xt = [(obs.x0() - a0) / a1];
        let tobs = Observation { x: &xt, s: obs.s };
        let mut inner = vec![0.0; kappas.len() * m0];
        self.inner.x_derivatives(&tobs, th, kappas, &mut inner)?;
        for (j, kappa) in kappas.iter().enumerate() {
            let k = kappa.order();
            let scale = a1.powi(-(k as i32));
            let block = &mut out[j * m..(j + 1) * m];
            for r in 0..m0 {
                block[r] = scale * inner[j * m0 + r];
            }
            let (e1, e2) = self.appended(xt[0], a1, k);
            block[m0] = e1;
            block[m0 + 1] = e2;
        }
        Ok(())
    }

    fn theta_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        let (th, a0, a1) = self.split(theta)?;
        let (m0, p0) = (self.inner.m(), self.inner.dim_theta());
        let (m, p) = (m0 + 2, p0 + 2);
        let x = obs.x0();
        let xt = (x - a0) / a1;
        let xs = [xt];
        let tobs = Observation { x: &xs, s: obs.s };
        let nk = kappas.len();
        let mut base = vec![0.0; nk * m0];
        let mut next = vec![0.0; nk * m0];
        let mut dtheta = vec![0.0; nk * m0 * p0];
        let up: Vec<MultiIndex> = kappas.iter().map(|k| MultiIndex::scalar(k.order() as u32 + 1)).collect();
        self.inner.x_derivatives(&tobs, th, kappas, &mut base)?;
        self.inner.x_derivatives(&tobs, th, &up, &mut next)?;
        self.inner.theta_derivatives(&tobs, th, kappas, &mut dtheta)?;
        let e = xt - self.mu;
        for (j, kappa) in kappas.iter().enumerate() {
            let k = kappa.order();
            let scale = a1.powi(-(k as i32));
            let block = &mut out[j * m * p..(j + 1) * m * p];
            for r in 0..m0 {
                let row = &mut block[r * p..(r + 1) * p];
                for t in 0..p0 {
                    row[t] = scale * dtheta[j * m0 * p0 + r * p0 + t];
                }
                let g = base[j * m0 + r];
                let g1 = next[j * m0 + r];
                row[p0] = -scale / a1 * g1;
                row[p0 + 1] = -scale / a1 * (k as f64 * g + xt * g1);
            }
            let (r1, r2) = (m0 * p, (m0 + 1) * p);
            block[r1..r1 + p].iter_mut().for_each(|v| *v = 0.0);
            block[r2..r2 + p].iter_mut().for_each(|v| *v = 0.0);
            match k {
                0 => {
                    block[r1 + p0] = -1.0 / a1;
                    block[r1 + p0 + 1] = -xt / a1;
                    block[r2 + p0] = -2.0 * e / a1;
                    block[r2 + p0 + 1] = -2.0 * e * xt / a1;
                }
                1 => {
                    block[r1 + p0 + 1] = -1.0 / (a1 * a1);
                    block[r2 + p0] = -2.0 / (a1 * a1);
                    block[r2 + p0 + 1] = -2.0 * (2.0 * xt - self.mu) / (a1 * a1);
                }
                2 => {
                    block[r2 + p0 + 1] = -4.0 / (a1 * a1 * a1);
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::moment::{numeric_theta_derivatives, ClosureMoment};
    use approx::assert_relative_eq;

    fn cubic() -> Arc<dyn MomentFunction> {
        Arc::new(
            ClosureMoment::new(2, 1, 1, |o, t, out| {
                let x = o.x0();
                out[0] = t[0] * x.powi(3);
                out[1] = x - t[0];
            })
            .with_x_derivatives(6, |o, t, k, out| {
                let x = o.x0();
                let (a, b) = match k.0[0] {
                    0 => (t[0] * x.powi(3), x - t[0]),
                    1 => (3.0 * t[0] * x * x, 1.0),
                    2 => (6.0 * t[0] * x, 0.0),
                    3 => (6.0 * t[0], 0.0),
                    _ => (0.0, 0.0),
                };
                out[0] = a;
                out[1] = b;
            })
            .with_theta_derivatives(|o, _t, k, out| {
                let x = o.x0();
                let (a, b) = match k.0[0] {
                    0 => (x.powi(3), -1.0),
                    1 => (3.0 * x * x, 0.0),
                    2 => (6.0 * x, 0.0),
                    3 => (6.0, 0.0),
                    _ => (0.0, 0.0),
                };
                out[0] = a;
                out[1] = b;
            }),
        )
    }

    #[test]
    fn identity_reparameterization_and_dimensions() {
        let a = build_affine_nonclassical_problem(cubic(), 0.5, 2.0).unwrap();
        assert_eq!(a.m(), 4);
        assert_eq!(a.dim_theta(), 3);
        let s: [f64; 0] = [];
        let obs = Observation { x: &[1.5], s: &s };
        let mut out = [0.0; 4];
        a.value(&obs, &[2.0, 0.0, 1.0], &mut out).unwrap();
        assert_eq!(out[..2], [2.0 * 1.5f64.powi(3), 1.5 - 2.0]);
        let at_mu = Observation { x: &[0.5], s: &s };
        a.value(&at_mu, &[2.0, 0.0, 1.0], &mut out).unwrap();
        assert_eq!(out[2..], [0.0, -2.0]);
    }

    #[test]
    fn rejects_nonpositive_variance() {
        assert!(build_affine_nonclassical_problem(cubic(), 0.0, 0.0).is_err());
        assert!(build_affine_nonclassical_problem(cubic(), 0.0, -1.0).is_err());
    }

    #[test]
    fn analytic_theta_derivatives_match_differences() {
        let a = build_affine_nonclassical_problem(cubic(), 0.3, 1.7).unwrap();
        let s: [f64; 0] = [];
        let obs = Observation { x: &[0.8], s: &s };
        let theta = [1.3, 0.2, 1.4];
        let kappas: Vec<_> = (0..3).map(MultiIndex::scalar).collect();
        let mut analytic = vec![0.0; 3 * 4 * 3];
        let mut numeric = vec![0.0; 3 * 4 * 3];
        a.theta_derivatives(&obs, &theta, &kappas, &mut analytic).unwrap();
        numeric_theta_derivatives(&a, &obs, &theta, &kappas, &mut numeric).unwrap();
        for (u, v) in analytic.iter().zip(&numeric) {
            assert_relative_eq!(u, v, epsilon = 1e-7, max_relative = 1e-7);
        }
    }

    #[test]
    fn x_derivatives_scale_with_alpha() {
        let a = build_affine_nonclassical_problem(cubic(), 0.0, 1.0).unwrap();
        let s: [f64; 0] = [];
        let obs = Observation { x: &[1.0], s: &s };
        let mut out = [0.0; 4];
        a.x_derivatives(&obs, &[1.0, 0.0, 2.0], &[MultiIndex::scalar(2)], &mut out).unwrap();
        // g'' at x̃ = 0.5 is 6·0.5 = 3, scaled by 1/α₁² = 1/4.
        assert_relative_eq!(out[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(out[3], 0.5, epsilon = 1e-15);
    }
}
