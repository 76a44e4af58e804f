use nalgebra::{DMatrix, DVector};

use crate::error::{MermError, Result};
use crate::linalg::inverse_spd;

/// `Q = ψ̄' Ξ ψ̄`.
pub fn gmm_objective(psi_bar: &DVector<f64>, xi: &DMatrix<f64>) -> Result<f64> {
    let m = psi_bar.len();
    if xi.nrows() != m || xi.ncols() != m {
        return Err(MermError::dim("weighting matrix", m, xi.nrows().max(xi.ncols())));
    }
    Ok(psi_bar.dot(&(xi * psi_bar)))
}

/// Parameter-space restrictions on the nuisance: `σ² ≥ 0` and
/// `E[ε⁴] ≥ σ⁴` per coordinate, expressed on γ as `γ₂ ≥ 0` and
/// `γ₄ ≥ −5γ₂²/6`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GammaRestrictions {
    /// `(index of γ₂-type entry, index of γ₄-type entry if present)`.
    pub pairs: Vec<(usize, Option<usize>)>,
}

impl GammaRestrictions {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Solution of the profiling step at one θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub gamma: DVector<f64>,
    pub psi_bar: DVector<f64>,
    pub objective: f64,
    /// True when a restriction was active and the estimate was projected.
    pub restricted: bool,
}

/// Weighted least squares of `ḡ` on the columns of `D` with some entries fixed.
fn constrained_ls(g: &DVector<f64>, d: &DMatrix<f64>, xi: &DMatrix<f64>, fixed: &[Option<f64>]) -> Result<DVector<f64>> {
    let q = d.ncols();
    let free: Vec<usize> = (0..q).filter(|&j| fixed[j].is_none()).collect();
    let mut r = g.clone();
    let mut gamma = DVector::zeros(q);
    for (j, v) in fixed.iter().enumerate() {
        if let Some(v) = v {
            gamma[j] = *v;
            r -= d.column(j) * *v;
        }
    }
    if !free.is_empty() {
        let df = d.select_columns(&free);
        let bread = df.transpose() * xi * &df;
        let inv = inverse_spd(&bread, "D'ΞD (nuisance profiling)")?;
        let sol = inv * (df.transpose() * xi * r);
        for (k, &j) in free.iter().enumerate() {
            gamma[j] = sol[k];
        }
    }
    Ok(gamma)
}

/// Profiles a nuisance that enters linearly: `ψ̄(γ) = ḡ − Dγ`, so
/// `γ̂ = (D'ΞD)⁻¹D'Ξḡ`. Restrictions, when given, are enforced by fixing
/// violated entries at their bound and re-solving for the rest.
pub fn profile_linear(g: &DVector<f64>, d: &DMatrix<f64>, xi: &DMatrix<f64>, restrictions: &GammaRestrictions) -> Result<Profile> {
    let q = d.ncols();
    if d.nrows() != g.len() {
        return Err(MermError::dim("derivative matrix rows", g.len(), d.nrows()));
    }
    if let Some(j) = (0..q).find(|&j| d.column(j).amax() == 0.0) {
        return Err(MermError::RankDeficient(format!(
            "derivative column {j} of the corrected moment is identically zero"
        )));
    }
    let mut fixed = vec![None; q];
    let mut gamma = constrained_ls(g, d, xi, &fixed)?;
    let mut restricted = false;
    for _ in 0..=2 * restrictions.pairs.len() {
        let mut changed = false;
        for &(i2, i4) in &restrictions.pairs {
            if fixed[i2].is_none() && gamma[i2] < 0.0 {
                fixed[i2] = Some(0.0);
                changed = true;
            }
            if let Some(i4) = i4 {
                let bound = -5.0 * gamma[i2] * gamma[i2] / 6.0;
                if gamma[i4] < bound - 1e-15 {
                    fixed[i4] = Some(bound);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        restricted = true;
        gamma = constrained_ls(g, d, xi, &fixed)?;
    }
    let psi_bar = g - d * &gamma;
    let objective = gmm_objective(&psi_bar, xi)?;
    Ok(Profile {
        gamma,
        psi_bar,
        objective,
        restricted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_form_examples() {
        let z = DVector::zeros(2);
        assert_eq!(gmm_objective(&z, &DMatrix::identity(2, 2)).unwrap(), 0.0);
        let p = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(gmm_objective(&p, &DMatrix::identity(2, 2)).unwrap(), 5.0);
        let one = DVector::from_vec(vec![1.0, 1.0]);
        let xi = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert_eq!(gmm_objective(&one, &xi).unwrap(), 5.0);
        assert!(gmm_objective(&one, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn one_dimensional_profile() {
        let g = DVector::from_vec(vec![1.0, 2.0]);
        let d = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let p = profile_linear(&g, &d, &DMatrix::identity(2, 2), &GammaRestrictions::default()).unwrap();
        assert_relative_eq!(p.gamma[0], 1.0);
        assert_relative_eq!(p.objective, 4.0);
        let zero = DMatrix::zeros(2, 1);
        assert!(matches!(
            profile_linear(&g, &zero, &DMatrix::identity(2, 2), &GammaRestrictions::default()),
            Err(MermError::RankDeficient(_))
        ));
    }

    #[test]
    fn restrictions_project_negative_variance() {
        let g = DVector::from_vec(vec![-1.0, 0.5, 0.2]);
        let d = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.3, 0.1]);
        let r = GammaRestrictions {
            pairs: vec![(0, Some(1))],
        };
        let p = profile_linear(&g, &d, &DMatrix::identity(3, 3), &r).unwrap();
        assert!(p.restricted);
        assert_eq!(p.gamma[0], 0.0);
        assert!(p.gamma[1] >= 0.0);
        let free = profile_linear(&g, &d, &DMatrix::identity(3, 3), &GammaRestrictions::default()).unwrap();
        assert!(free.gamma[0] < 0.0 && !free.restricted);
    }
}
