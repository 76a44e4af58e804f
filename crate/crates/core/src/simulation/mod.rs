//! Monte Carlo designs, replication campaigns and result tables.

pub mod design;
pub mod naive;
pub mod runner;
pub mod table;

pub use design::{
    calibrated_elasticities, calibrated_model, effect_names, logit_marginal_effects, multinomial_effects, multinomial_model,
    CalibratedCovariates, DesignTag, EstimatorSpec, McDesign, CALIBRATED, CALIBRATED_THETA0,
};
pub use naive::{logit_mle, nlls, ols, ols_polynomial, NaiveFit};
pub use runner::{
    aggregate, basis_for_order, design_moments, naive_fit, run_estimator, run_replication, run_replications,
    run_replications_with_workers, workers_from_env, EstimatorSummary, McResult, Outcome, TargetSummary, WORKERS_ENV,
};
pub use table::{emit_table, read_result_csv, TableFormat};

/// Generates replication `rep` of a design.
pub fn generate_dgp(design: &McDesign, rep: u64) -> crate::Result<crate::model::Dataset> {
    design.generate(rep)
}
