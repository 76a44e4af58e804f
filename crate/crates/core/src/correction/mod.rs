//! Corrected moments and their nuisance parameters.

pub mod affine;
pub mod corrected;
pub mod gamma;
pub mod scheme;
pub mod weakly;

pub use crate::model::residual::build_second_measurement_moments;
pub use affine::{build_affine_nonclassical_problem, AffineNonclassical};
pub use corrected::{corrected_moment, CorrectedMoment, RowBuffers};
pub use gamma::{
    gamma_from_moments, gamma_multivariate, gaussian_moments, moments_from_gamma, moments_from_gamma_multivariate,
    MomentMap,
};
pub use scheme::{CorrectionScheme, Regime, VFamilyTag};
pub use weakly::{exponential_v_family, ExponentialVFamily, VFamily};
