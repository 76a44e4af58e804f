//! Symmetric-matrix helpers shared by the GMM engine.
//!
//! Weighting matrices are inverted through a symmetric eigendecomposition with a
//! ridge fallback; "bread" matrices (`Ψ'ΞΨ`, `D'ΞD`) are inverted after Jacobi
//! scaling so that the rank check does not depend on the units of the columns.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MermError, Result};

/// Condition number above which a weighting matrix is ridged.
pub const RIDGE_CONDITION: f64 = 1e12;
/// Relative ridge size, multiplied by `trace / m`.
pub const RIDGE_SCALE: f64 = 1e-10;
/// Condition number (after Jacobi scaling) above which a bread matrix is treated as singular.
pub const BREAD_CONDITION: f64 = 1e14;

/// Inverse of a symmetric positive semidefinite matrix plus a flag telling
/// whether a ridge had to be added.
#[derive(Debug, Clone)]
pub struct RidgedInverse {
    pub inverse: DMatrix<f64>,
    pub ridged: bool,
    pub condition: f64,
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn eigen_condition(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> (f64, f64, f64) {
    let vals = &eig.eigenvalues;
    let max = vals.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let min = vals.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (min, max, cond)
}

fn inverse_from_eigen(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let q = &eig.eigenvectors;
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    symmetrize(&(q * DMatrix::from_diagonal(&inv_vals) * q.transpose()))
}

/// Inverts a symmetric PSD matrix. When its condition number exceeds
/// [`RIDGE_CONDITION`] a ridge `RIDGE_SCALE·trace/m` is added (escalated by
/// factors of 100 up to three times) and the result is flagged.
pub fn inverse_with_ridge(a: &DMatrix<f64>, what: &str) -> Result<RidgedInverse> {
    let m = a.nrows();
    if m == 0 || a.ncols() != m {
        return Err(MermError::dim(what, m, a.ncols()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(MermError::Singular(format!("{what} has non-finite entries")));
    }
    let a = symmetrize(a);
    let eig = SymmetricEigen::new(a.clone());
    let (min, _, cond) = eigen_condition(&eig);
    if min > 0.0 && cond <= RIDGE_CONDITION {
        return Ok(RidgedInverse {
            inverse: inverse_from_eigen(&eig),
            ridged: false,
            condition: cond,
        });
    }
    let trace = a.trace();
    if trace <= 0.0 || !trace.is_finite() {
        return Err(MermError::Singular(format!("{what} has non-positive trace")));
    }
    let mut ridge = RIDGE_SCALE * trace / m as f64;
    for _ in 0..4 {
        let mut b = a.clone();
        for i in 0..m {
            b[(i, i)] += ridge;
        }
        let eig = SymmetricEigen::new(b);
        let (min, _, cond) = eigen_condition(&eig);
        if min > 0.0 && cond.is_finite() {
            return Ok(RidgedInverse {
                inverse: inverse_from_eigen(&eig),
                ridged: true,
                condition: cond,
            });
        }
        ridge *= 100.0;
    }
    Err(MermError::Singular(format!("{what} stays singular after ridge escalation")))
}

/// Inverse of a symmetric positive definite matrix, computed after Jacobi
/// scaling. Fails with `RankDeficient` when the scaled matrix is numerically
/// singular or indefinite.
pub fn inverse_spd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(MermError::dim(what, m, a.ncols()));
    }
    if m == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let a = symmetrize(a);
    let mut scale = DVector::zeros(m);
    for i in 0..m {
        let d = a[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(MermError::RankDeficient(format!("{what}: zero or invalid diagonal entry {i}")));
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let s = DMatrix::from_diagonal(&scale);
    let b = &s * &a * &s;
    let eig = SymmetricEigen::new(b);
    let (min, _, cond) = eigen_condition(&eig);
    if !(min > 0.0) || cond > BREAD_CONDITION {
        return Err(MermError::RankDeficient(format!("{what}: condition number {cond:.3e}")));
    }
    Ok(symmetrize(&(&s * inverse_from_eigen(&eig) * &s)))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped to 0).
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let q = &eig.eigenvectors;
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose()))
}

/// Singular values in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Sample mean of the rows of an `n x m` matrix.
pub fn column_means(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows().max(1) as f64;
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum() / n))
}

/// Uncentered second-moment matrix `(1/n) Σ_i a_i a_i'` of the rows.
pub fn outer_mean(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows().max(1) as f64;
    symmetrize(&(a.transpose() * a / n))
}
