//! Post-estimation: corrected average effects, delta-method inference,
//! higher-order bias bounds and identification diagnostics.

pub mod average;
pub mod bound;
pub mod delta;
pub mod rank;

pub use average::{average_effect_corrected, AverageEffect, EffectSpec};
pub use bound::{bias_bound, effective_order, interval_sign, k2_interval, BiasBoundReport, BoundRoute};
pub use delta::{delta_method, delta_method_at, DeltaInference, Functional, FunctionalJacobian, NORMAL_975};
pub use rank::{rank_diagnostics, RankDiagnostics, SecondMeasurementCheck, RANK_TOLERANCE};
