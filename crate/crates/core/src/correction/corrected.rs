use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::scheme::CorrectionScheme;
use crate::error::{MermError, Result};
use crate::model::dataset::{Dataset, Observation};
use crate::model::moment::MomentFunction;
use crate::model::multi_index::MultiIndex;

/// A moment function paired with a correction scheme: evaluates
/// `ψ(x, s, θ, η) = g − Σ_j c_j(x, s, η) ∂_{κ_j} g` and its derivatives.
#[derive(Clone)]
pub struct CorrectedMoment {
    model: Arc<dyn MomentFunction>,
    scheme: CorrectionScheme,
    /// `[0, κ₁, …, κ_q]`: the zero index first, so a single provider call
    /// returns `g` and every derivative that enters ψ.
    stack: Vec<MultiIndex>,
}

impl std::fmt::Debug for CorrectedMoment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorrectedMoment")
            .field("m", &self.model.m())
            .field("dim_theta", &self.model.dim_theta())
            .field("scheme", &self.scheme)
            .finish()
    }
}

/// Per-thread scratch space for row evaluation.
#[derive(Debug, Clone)]
pub struct RowBuffers {
    vals: Vec<f64>,
    jac: Vec<f64>,
    c: Vec<f64>,
    dc: Vec<f64>,
}

impl CorrectedMoment {
    pub fn new(model: Arc<dyn MomentFunction>, scheme: CorrectionScheme) -> Result<Self> {
        if model.d() != scheme.d() {
            return Err(MermError::dim("mismeasured coordinates of scheme", model.d(), scheme.d()));
        }
        let k = scheme.order();
        if model.max_order() < k {
            return Err(MermError::UnsupportedOrder {
                requested: k,
                supported: model.max_order(),
            });
        }
        let mut stack = vec![MultiIndex::zero(model.d())];
        stack.extend(scheme.kappas().iter().cloned());
        Ok(Self { model, scheme, stack })
    }

    pub fn model(&self) -> &Arc<dyn MomentFunction> {
        &self.model
    }

    pub fn scheme(&self) -> &CorrectionScheme {
        &self.scheme
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    pub fn dim_theta(&self) -> usize {
        self.model.dim_theta()
    }

    pub fn nuisance_dim(&self) -> usize {
        self.scheme.nuisance_dim()
    }

    pub fn dim_beta(&self) -> usize {
        self.dim_theta() + self.nuisance_dim()
    }

    /// Number of derivative blocks, including `g` itself.
    pub fn stack_len(&self) -> usize {
        self.stack.len()
    }

    /// Checks the data layout and the overidentification requirement
    /// `m ≥ dim θ + nuisance_dim`.
    pub fn check(&self, data: &Dataset) -> Result<()> {
        self.model.check_data(data)?;
        if self.m() < self.dim_beta() {
            return Err(MermError::Underidentified {
                moments: self.m(),
                parameters: self.dim_beta(),
            });
        }
        Ok(())
    }

    pub fn buffers(&self) -> RowBuffers {
        let (m, p, q, ns) = (self.m(), self.dim_theta(), self.nuisance_dim(), self.stack.len());
        RowBuffers {
            vals: vec![0.0; ns * m],
            jac: vec![0.0; ns * m * p],
            c: vec![0.0; ns - 1],
            dc: vec![0.0; (ns - 1) * q],
        }
    }

    /// Writes the stack `[g, ∂_{κ₁} g, …]` (one `m`-block each) and, when
    /// `jac` is given, its θ-Jacobians (one row-major `m x p` block each).
    pub fn stack(&self, obs: &Observation<'_>, theta: &[f64], vals: &mut [f64], jac: Option<&mut [f64]>) -> Result<()> {
        self.model.x_derivatives(obs, theta, &self.stack, vals)?;
        if let Some(jac) = jac {
            self.model.theta_derivatives(obs, theta, &self.stack, jac)?;
        }
        Ok(())
    }

    /// One corrected row `ψ` and, optionally, its Jacobian in
    /// `β = (θ, η)` (row-major `m x (p + q)`).
    pub fn row(
        &self,
        obs: &Observation<'_>,
        theta: &[f64],
        nuisance: &[f64],
        buf: &mut RowBuffers,
        psi: &mut [f64],
        jac: Option<&mut [f64]>,
    ) -> Result<()> {
        let (m, p, q) = (self.m(), self.dim_theta(), self.nuisance_dim());
        let nk = self.stack.len() - 1;
        let want = jac.is_some();
        self.stack(obs, theta, &mut buf.vals, if want { Some(&mut buf.jac) } else { None })?;
        self.scheme
            .coefficients(obs.x, obs.s, nuisance, &mut buf.c, if want { Some(&mut buf.dc) } else { None });
        psi.copy_from_slice(&buf.vals[..m]);
        for j in 0..nk {
            let c = buf.c[j];
            let block = &buf.vals[(j + 1) * m..(j + 2) * m];
            for r in 0..m {
                psi[r] -= c * block[r];
            }
        }
        if let Some(out) = jac {
            let w = p + q;
            for r in 0..m {
                let row = &mut out[r * w..(r + 1) * w];
                for t in 0..p {
                    let mut v = buf.jac[r * p + t];
                    for j in 0..nk {
                        v -= buf.c[j] * buf.jac[(j + 1) * m * p + r * p + t];
                    }
                    row[t] = v;
                }
                for l in 0..q {
                    let mut v = 0.0;
                    for j in 0..nk {
                        v -= buf.vals[(j + 1) * m + r] * buf.dc[j * q + l];
                    }
                    row[p + l] = v;
                }
            }
        }
        Ok(())
    }

    fn check_args(&self, theta: &[f64], nuisance: &[f64]) -> Result<()> {
        if theta.len() != self.dim_theta() {
            return Err(MermError::dim("theta", self.dim_theta(), theta.len()));
        }
        self.scheme.check_nuisance(nuisance)
    }

    /// `n x m` matrix of corrected rows.
    pub fn rows(&self, data: &Dataset, theta: &[f64], nuisance: &[f64]) -> Result<DMatrix<f64>> {
        self.check_args(theta, nuisance)?;
        let m = self.m();
        let mut buf = self.buffers();
        let mut out = DMatrix::zeros(data.n(), m);
        let mut psi = vec![0.0; m];
        for i in 0..data.n() {
            self.row(&data.obs(i), theta, nuisance, &mut buf, &mut psi, None)?;
            if psi.iter().any(|v| !v.is_finite()) {
                return Err(MermError::NonFinite {
                    what: "corrected moment".into(),
                    row: i,
                });
            }
            for r in 0..m {
                out[(i, r)] = psi[r];
            }
        }
        Ok(out)
    }

    /// Sample mean `ψ̄` and mean Jacobian `Ψ̂` (`m x (p + q)`).
    pub fn mean_and_jacobian(&self, data: &Dataset, theta: &[f64], nuisance: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_args(theta, nuisance)?;
        let (m, w) = (self.m(), self.dim_beta());
        let mut buf = self.buffers();
        let mut psi = vec![0.0; m];
        let mut jac = vec![0.0; m * w];
        let mut mean = DVector::zeros(m);
        let mut jmean = DMatrix::zeros(m, w);
        for i in 0..data.n() {
            self.row(&data.obs(i), theta, nuisance, &mut buf, &mut psi, Some(&mut jac))?;
            if psi.iter().chain(&jac).any(|v| !v.is_finite()) {
                return Err(MermError::NonFinite {
                    what: "corrected moment or its Jacobian".into(),
                    row: i,
                });
            }
            for r in 0..m {
                mean[r] += psi[r];
                for c in 0..w {
                    jmean[(r, c)] += jac[r * w + c];
                }
            }
        }
        let n = data.n().max(1) as f64;
        Ok((mean / n, jmean / n))
    }
}

/// `n x m` matrix whose row `i` is `ψ(X_i, S_i, θ, η)`.
pub fn corrected_moment(
    model: Arc<dyn MomentFunction>,
    scheme: &CorrectionScheme,
    data: &Dataset,
    theta: &[f64],
    nuisance: &[f64],
) -> Result<DMatrix<f64>> {
    let cm = CorrectedMoment::new(model, scheme.clone())?;
    cm.model.check_data(data)?;
    cm.rows(data, theta, nuisance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::weakly::{exponential_v_family, VFamily};
    use crate::model::moment::{evaluate_moments, ClosureMoment};
    use approx::assert_relative_eq;

    fn square() -> Arc<dyn MomentFunction> {
        Arc::new(
            ClosureMoment::new(2, 1, 1, |o, t, out| {
                let x = o.x0();
                out[0] = t[0] * x * x;
                out[1] = x.powi(3) - t[0];
            })
            .with_x_derivatives(6, |o, t, k, out| {
                let x = o.x0();
                let (a, b) = match k.0[0] {
                    0 => (t[0] * x * x, x.powi(3) - t[0]),
                    1 => (2.0 * t[0] * x, 3.0 * x * x),
                    2 => (2.0 * t[0], 6.0 * x),
                    3 => (0.0, 6.0),
                    _ => (0.0, 0.0),
                };
                out[0] = a;
                out[1] = b;
            }),
        )
    }

    fn data() -> Dataset {
        Dataset::from_columns(vec![vec![-1.0, 0.5, 2.0]], vec![]).unwrap()
    }

    #[test]
    fn zero_nuisance_reproduces_g() {
        let scheme = CorrectionScheme::classical_scalar(4).unwrap();
        let psi = corrected_moment(square(), &scheme, &data(), &[1.3], &[0.0; 3]).unwrap();
        let g = evaluate_moments(square().as_ref(), &data(), &[1.3]).unwrap();
        assert_eq!(psi, g);
    }

    #[test]
    fn quadratic_correction_by_hand() {
        let scheme = CorrectionScheme::classical_scalar(2).unwrap();
        let psi = corrected_moment(square(), &scheme, &data(), &[1.0], &[0.125]).unwrap();
        for (i, x) in [-1.0f64, 0.5, 2.0].iter().enumerate() {
            assert_relative_eq!(psi[(i, 0)], x * x - 0.25, epsilon = 1e-15);
            assert_relative_eq!(psi[(i, 1)], x.powi(3) - 1.0 - 0.125 * 6.0 * x, epsilon = 1e-15);
        }
    }

    #[test]
    fn nuisance_column_of_jacobian() {
        // g = θx²: the γ₂ column is −2θ.
        let scheme = CorrectionScheme::classical_scalar(2).unwrap();
        let cm = CorrectedMoment::new(square(), scheme).unwrap();
        let (_, jac) = cm.mean_and_jacobian(&data(), &[1.7], &[0.1]).unwrap();
        assert_relative_eq!(jac[(0, 1)], -3.4, epsilon = 1e-12);
        assert_relative_eq!(jac[(0, 0)], (1.0 + 0.25 + 4.0) / 3.0 - 0.2, epsilon = 1e-12);
    }

    #[test]
    fn weakly_classical_with_flat_family_is_classical() {
        let fam = Arc::new(exponential_v_family(4).unwrap());
        let weak = CorrectionScheme::weakly_classical(4, fam.clone()).unwrap();
        let classical = CorrectionScheme::classical_scalar(4).unwrap();
        let omega = [0.0, 0.3, 0.1, 0.2];
        // γ₂ = ω₂/2, γ₃ = ω₃/6, γ₄ = (ω₄ − 6ω₂²)/24
        let gamma = [0.15, 0.1 / 6.0, (0.2 - 6.0 * 0.09) / 24.0];
        let a = corrected_moment(square(), &weak, &data(), &[0.8], &omega).unwrap();
        let b = corrected_moment(square(), &classical, &data(), &[0.8], &gamma).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-14);
        assert_eq!(fam.dim_omega(), 4);
    }

    #[test]
    fn weakly_jacobian_matches_differences() {
        let fam = Arc::new(exponential_v_family(4).unwrap());
        let cm = CorrectedMoment::new(square(), CorrectionScheme::weakly_classical(4, fam).unwrap()).unwrap();
        let beta = [0.8, 0.2, 0.3, 0.1, 0.2];
        let (_, jac) = cm.mean_and_jacobian(&data(), &beta[..1], &beta[1..]).unwrap();
        for l in 0..5 {
            let h = 1e-6;
            let (mut up, mut dn) = (beta, beta);
            up[l] += h;
            dn[l] -= h;
            let (fu, _) = cm.mean_and_jacobian(&data(), &up[..1], &up[1..]).unwrap();
            let (fd, _) = cm.mean_and_jacobian(&data(), &dn[..1], &dn[1..]).unwrap();
            for r in 0..2 {
                assert_relative_eq!(jac[(r, l)], (fu[r] - fd[r]) / (2.0 * h), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn underidentification_is_detected() {
        let cm = CorrectedMoment::new(square(), CorrectionScheme::classical_scalar(3).unwrap()).unwrap();
        assert_eq!(
            cm.check(&data()),
            Err(MermError::Underidentified {
                moments: 2,
                parameters: 3
            })
        );
    }
}
