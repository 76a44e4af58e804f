use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::objective::{profile_linear, GammaRestrictions, Profile};
use crate::correction::{CorrectedMoment, CorrectionScheme, Regime};
use crate::error::{MermError, Result};
use crate::linalg::outer_mean;
use crate::model::dataset::Dataset;
use crate::model::moment::MomentFunction;
use crate::model::multi_index::MultiIndex;

/// Sample means of the derivative stack `[g, ∂_{κ₁} g, …]` at one θ.
#[derive(Debug, Clone)]
pub struct StackMeans {
    /// `ḡ` (length m).
    pub g: DVector<f64>,
    /// `D = [∂_{κ₁} ḡ, …]` (m x q).
    pub d: DMatrix<f64>,
    /// `∇_θ ḡ` (m x p), when requested.
    pub g_theta: Option<DMatrix<f64>>,
    /// `∇_θ ∂_{κ_j} ḡ` for each j, when requested.
    pub d_theta: Vec<DMatrix<f64>>,
    /// `Ω̂_gg = mean g g'`, when requested.
    pub omega_g: Option<DMatrix<f64>>,
}

/// A corrected moment bound to a dataset.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    moment: CorrectedMoment,
    data: &'a Dataset,
}

impl<'a> Problem<'a> {
    /// Validates the pairing of model, scheme and data, including
    /// `m ≥ dim θ + nuisance_dim`.
    pub fn new(model: Arc<dyn MomentFunction>, scheme: CorrectionScheme, data: &'a Dataset) -> Result<Self> {
        Self::from_moment(CorrectedMoment::new(model, scheme)?, data)
    }

    pub fn from_moment(moment: CorrectedMoment, data: &'a Dataset) -> Result<Self> {
        moment.check(data)?;
        if data.n() == 0 {
            return Err(MermError::invalid("dataset is empty"));
        }
        Ok(Self { moment, data })
    }

    pub fn moment(&self) -> &CorrectedMoment {
        &self.moment
    }

    pub fn scheme(&self) -> &CorrectionScheme {
        self.moment.scheme()
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn m(&self) -> usize {
        self.moment.m()
    }

    pub fn p(&self) -> usize {
        self.moment.dim_theta()
    }

    pub fn q(&self) -> usize {
        self.moment.nuisance_dim()
    }

    pub fn dim_beta(&self) -> usize {
        self.p() + self.q()
    }

    /// The variance and kurtosis restrictions in nuisance coordinates
    /// (classical regimes only).
    pub fn restrictions(&self) -> GammaRestrictions {
        let kappas = self.scheme().kappas();
        let pos = |k: &MultiIndex| kappas.iter().position(|x| x == k);
        let pairs = match self.scheme().regime() {
            Regime::ClassicalScalar { .. } => vec![(0, pos(&MultiIndex::scalar(4)))],
            Regime::ClassicalMultivariate { d, .. } => (0..*d)
                .filter_map(|j| {
                    let mut two = MultiIndex::zero(*d);
                    two.0[j] = 2;
                    let mut four = MultiIndex::zero(*d);
                    four.0[j] = 4;
                    pos(&two).map(|i2| (i2, pos(&four)))
                })
                .collect(),
            Regime::WeaklyClassical { .. } => vec![],
        };
        GammaRestrictions { pairs }
    }

    /// `n x m` corrected rows.
    pub fn psi_rows(&self, theta: &[f64], nuisance: &[f64]) -> Result<DMatrix<f64>> {
        self.moment.rows(self.data, theta, nuisance)
    }

    /// `ψ̄(θ, η)`.
    pub fn psi_bar(&self, theta: &[f64], nuisance: &[f64]) -> Result<DVector<f64>> {
        let rows = self.psi_rows(theta, nuisance)?;
        Ok(crate::linalg::column_means(&rows))
    }

    /// `Ψ̂ = mean ∂ψ/∂β'` (m x dim β).
    pub fn jacobian_psi(&self, theta: &[f64], nuisance: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.moment.mean_and_jacobian(self.data, theta, nuisance)?.1)
    }

    /// `(ψ̄, Ψ̂)` in one pass.
    pub fn mean_and_jacobian(&self, theta: &[f64], nuisance: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.moment.mean_and_jacobian(self.data, theta, nuisance)
    }

    /// Uncentered `Ω̂_ψψ(θ, η) = mean ψψ'`.
    pub fn omega(&self, theta: &[f64], nuisance: &[f64]) -> Result<DMatrix<f64>> {
        Ok(outer_mean(&self.psi_rows(theta, nuisance)?))
    }

    /// `Ω̂_gg(θ) = Ω̂_ψψ(θ, 0)`.
    pub fn omega_g(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.omega(theta, &vec![0.0; self.q()])
    }

    /// `(ḡ, ∇_θ ḡ)` of the uncorrected moment.
    pub fn g_mean_and_jacobian(&self, theta: &[f64], with_jac: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let (m, p) = (self.m(), self.p());
        let model = self.moment.model();
        let zero = [MultiIndex::zero(model.d())];
        let mut v = vec![0.0; m];
        let mut j = vec![0.0; m * p];
        let mut g = DVector::zeros(m);
        let mut gj = DMatrix::zeros(m, p);
        for i in 0..self.n() {
            let obs = self.data.obs(i);
            model.value(&obs, theta, &mut v)?;
            if with_jac {
                model.theta_derivatives(&obs, theta, &zero, &mut j)?;
            }
            if v.iter().chain(if with_jac { j.iter() } else { [].iter() }).any(|x| !x.is_finite()) {
                return Err(MermError::NonFinite {
                    what: "moment function".into(),
                    row: i,
                });
            }
            for r in 0..m {
                g[r] += v[r];
                if with_jac {
                    for c in 0..p {
                        gj[(r, c)] += j[r * p + c];
                    }
                }
            }
        }
        let n = self.n() as f64;
        Ok((g / n, if with_jac { Some(gj / n) } else { None }))
    }

    /// Means of the derivative stack; classical regimes only.
    pub fn stack_means(&self, theta: &[f64], with_jac: bool, with_omega: bool) -> Result<StackMeans> {
        if theta.len() != self.p() {
            return Err(MermError::dim("theta", self.p(), theta.len()));
        }
        let (m, p) = (self.m(), self.p());
        let ns = self.moment.stack_len();
        let mut vals = vec![0.0; ns * m];
        let mut jac = vec![0.0; ns * m * p];
        let mut sum_v = vec![0.0; ns * m];
        let mut sum_j = vec![0.0; if with_jac { ns * m * p } else { 0 }];
        let mut omega = if with_omega { Some(DMatrix::<f64>::zeros(m, m)) } else { None };
        for i in 0..self.n() {
            let obs = self.data.obs(i);
            self.moment
                .stack(&obs, theta, &mut vals, if with_jac { Some(&mut jac) } else { None })?;
            if vals.iter().any(|v| !v.is_finite()) || (with_jac && jac.iter().any(|v| !v.is_finite())) {
                return Err(MermError::NonFinite {
                    what: "moment derivatives".into(),
                    row: i,
                });
            }
            for (s, v) in sum_v.iter_mut().zip(&vals) {
                *s += v;
            }
            if with_jac {
                for (s, v) in sum_j.iter_mut().zip(&jac) {
                    *s += v;
                }
            }
            if let Some(om) = omega.as_mut() {
                for a in 0..m {
                    for b in a..m {
                        om[(a, b)] += vals[a] * vals[b];
                    }
                }
            }
        }
        let n = self.n() as f64;
        let g = DVector::from_iterator(m, sum_v[..m].iter().map(|v| v / n));
        let d = DMatrix::from_fn(m, ns - 1, |r, j| sum_v[(j + 1) * m + r] / n);
        let (g_theta, d_theta) = if with_jac {
            let block = |b: usize| DMatrix::from_fn(m, p, |r, c| sum_j[b * m * p + r * p + c] / n);
            (Some(block(0)), (1..ns).map(block).collect())
        } else {
            (None, Vec::new())
        };
        let omega_g = omega.map(|mut om| {
            for a in 0..m {
                for b in 0..a {
                    om[(a, b)] = om[(b, a)];
                }
            }
            om / n
        });
        Ok(StackMeans {
            g,
            d,
            g_theta,
            d_theta,
            omega_g,
        })
    }

    /// `γ̂(θ)` and the profiled objective under weighting `xi`.
    pub fn profile_gamma(&self, theta: &[f64], xi: &DMatrix<f64>, restrict: bool) -> Result<Profile> {
        if !self.scheme().is_classical() {
            return Err(MermError::invalid("nuisance profiling needs a classical scheme"));
        }
        let s = self.stack_means(theta, false, false)?;
        let r = if restrict { self.restrictions() } else { GammaRestrictions::default() };
        profile_linear(&s.g, &s.d, xi, &r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::moment::ClosureMoment;
    use approx::assert_relative_eq;

    fn cubic_model() -> Arc<dyn MomentFunction> {
        // g = (y − θ x) (1, x, x², x³)
        Arc::new(ClosureMoment::new(4, 1, 1, |o, t, out| {
            let x = o.x0();
            let u = o.s[0] - t[0] * x;
            for (k, v) in out.iter_mut().enumerate() {
                *v = u * x.powi(k as i32);
            }
        }))
    }

    fn data() -> Dataset {
        let x = vec![-1.0, -0.3, 0.2, 0.9, 1.4, 2.0];
        let y = x.iter().map(|v| 0.5 * v + 0.1 * v * v).collect();
        Dataset::from_columns(vec![x], vec![("y".into(), y)]).unwrap()
    }

    #[test]
    fn stack_means_agree_with_rows() {
        let d = data();
        let p = Problem::new(cubic_model(), CorrectionScheme::classical_scalar(2).unwrap(), &d).unwrap();
        let s = p.stack_means(&[0.4], true, true).unwrap();
        let gamma = [0.07];
        let psi = p.psi_bar(&[0.4], &gamma).unwrap();
        let manual = &s.g - &s.d * DVector::from_vec(gamma.to_vec());
        assert_relative_eq!(psi, manual, epsilon = 1e-10);
        assert_relative_eq!(s.omega_g.unwrap(), p.omega_g(&[0.4]).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn omega_at_zero_nuisance_is_omega_g() {
        let d = data();
        let p = Problem::new(cubic_model(), CorrectionScheme::classical_scalar(3).unwrap(), &d).unwrap();
        let g = crate::model::moment::evaluate_moments(p.moment().model().as_ref(), &d, &[0.3]).unwrap();
        assert_eq!(p.omega(&[0.3], &[0.0, 0.0]).unwrap(), outer_mean(&g));
    }

    #[test]
    fn overidentification_is_checked() {
        let d = data();
        assert!(Problem::new(cubic_model(), CorrectionScheme::classical_scalar(4).unwrap(), &d).is_ok());
        let err = Problem::new(cubic_model(), CorrectionScheme::classical_scalar(5).unwrap(), &d).unwrap_err();
        assert_eq!(err, MermError::Underidentified { moments: 4, parameters: 5 });
    }
}
