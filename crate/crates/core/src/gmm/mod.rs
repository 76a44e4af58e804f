//! GMM estimation over `β = (θ, nuisance)`: weighting, profiling,
//! optimization and sandwich inference.

pub mod estimate;
pub mod objective;
pub mod optimize;
pub mod problem;
pub mod weighting;

pub use estimate::{estimate, j_test, naive_estimate, sandwich_variance, EstimateConfig, EstimationReport, EstimationResult, JTest};
pub use objective::{gmm_objective, profile_linear, GammaRestrictions, Profile};
pub use optimize::{bfgs, minimize, nelder_mead, numeric_gradient, Minimum, Objective, OptimizerSettings};
pub use problem::{Problem, StackMeans};
pub use weighting::{weighting_matrix, Weighting, WeightingPolicy};
