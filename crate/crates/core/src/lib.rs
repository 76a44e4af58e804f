//! Measurement-error-robust moments (MERM).
//!
//! Any smooth GMM moment function `g(x, s, θ)` whose argument `x` is observed
//! with error is turned into a corrected moment
//! `ψ = g − Σ_k γ_k ∂^k g/∂x^k`, whose nuisance coefficients `γ` are estimated
//! jointly with `θ`. The crate is organised as
//!
//! - [`model`]: datasets, moment functions, instrument bases, derivatives;
//! - [`correction`]: the γ recursion, correction schemes and corrected moments;
//! - [`gmm`]: weighting, optimization, profiling and inference;
//! - [`effects`]: average effects, delta method, bias bounds, rank diagnostics;
//! - [`simulation`]: Monte Carlo designs, replication campaigns and tables.

pub mod correction;
pub mod effects;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod model;
pub mod simulation;

pub use error::{MermError, Result};
