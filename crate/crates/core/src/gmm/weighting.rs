use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::problem::Problem;
use crate::error::Result;
use crate::linalg::inverse_with_ridge;

/// Choice of the GMM weighting matrix `Ξ`.
///
/// Two-step policies evaluate `Ω̂_ψψ` at a first-stage estimate `(θ̃, γ̃)`
/// produced by `first_stage`; `null` means the naive pilot `(θ̂_naive, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightingPolicy {
    Identity,
    /// `Ω̂_ψψ⁻¹(θ̃, γ̃)`.
    TwoStepEff {
        #[serde(default = "identity_first_stage")]
        first_stage: Option<Box<WeightingPolicy>>,
    },
    /// `Ω̂_ψψ⁻¹(θ̃, 0)`.
    TwoStepEffRegularized {
        #[serde(default = "identity_first_stage")]
        first_stage: Option<Box<WeightingPolicy>>,
    },
    /// `θ ↦ Ω̂_ψψ⁻¹(θ, 0)`, re-evaluated along the optimization path.
    CueRegularized,
}

fn identity_first_stage() -> Option<Box<WeightingPolicy>> {
    Some(Box::new(WeightingPolicy::Identity))
}

impl Default for WeightingPolicy {
    fn default() -> Self {
        WeightingPolicy::TwoStepEffRegularized {
            first_stage: identity_first_stage(),
        }
    }
}

impl WeightingPolicy {
    /// `Ω̂(θ̂_naive, 0)⁻¹` then `Ω̂(θ̃, 0)⁻¹` at that estimate: the
    /// regularized efficient estimator started from the naive pilot.
    pub fn gmm1_then_efficient() -> Self {
        WeightingPolicy::TwoStepEffRegularized {
            first_stage: Some(Box::new(WeightingPolicy::TwoStepEffRegularized { first_stage: None })),
        }
    }

    /// True for policies under which the J statistic is asymptotically χ².
    pub fn is_efficient(&self) -> bool {
        !matches!(self, WeightingPolicy::Identity)
    }

    pub fn label(&self) -> String {
        match self {
            WeightingPolicy::Identity => "identity".into(),
            WeightingPolicy::TwoStepEff { first_stage } => format!("two_step_eff({})", stage_label(first_stage)),
            WeightingPolicy::TwoStepEffRegularized { first_stage } => {
                format!("two_step_eff_regularized({})", stage_label(first_stage))
            }
            WeightingPolicy::CueRegularized => "cue_regularized".into(),
        }
    }
}

fn stage_label(s: &Option<Box<WeightingPolicy>>) -> String {
    match s {
        None => "naive".into(),
        Some(p) => p.label(),
    }
}

/// A resolved weighting matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    Fixed { xi: DMatrix<f64>, ridged: bool },
    /// `Ω̂_gg(θ)⁻¹`, evaluated wherever the objective is.
    Cue,
}

impl Weighting {
    pub fn identity(m: usize) -> Self {
        Weighting::Fixed {
            xi: DMatrix::identity(m, m),
            ridged: false,
        }
    }

    /// `Ω̂⁻¹` with the ridge fallback.
    pub fn inverse_of(omega: &DMatrix<f64>) -> Result<Self> {
        let inv = inverse_with_ridge(omega, "moment covariance")?;
        Ok(Weighting::Fixed {
            xi: inv.inverse,
            ridged: inv.ridged,
        })
    }

    /// The matrix at parameter `θ`.
    pub fn at(&self, problem: &Problem<'_>, theta: &[f64]) -> Result<(DMatrix<f64>, bool)> {
        match self {
            Weighting::Fixed { xi, ridged } => Ok((xi.clone(), *ridged)),
            Weighting::Cue => {
                let inv = inverse_with_ridge(&problem.omega_g(theta)?, "moment covariance")?;
                Ok((inv.inverse, inv.ridged))
            }
        }
    }
}

/// `Ξ` for a policy given the pilot `(θ̃, γ̃)`; nested first stages are
/// resolved by the estimator, which passes their output here.
pub fn weighting_matrix(policy: &WeightingPolicy, problem: &Problem<'_>, pilot_theta: &[f64], pilot_nuisance: &[f64]) -> Result<Weighting> {
    match policy {
        WeightingPolicy::Identity => Ok(Weighting::identity(problem.m())),
        WeightingPolicy::TwoStepEff { .. } => Weighting::inverse_of(&problem.omega(pilot_theta, pilot_nuisance)?),
        WeightingPolicy::TwoStepEffRegularized { .. } => Weighting::inverse_of(&problem.omega_g(pilot_theta)?),
        WeightingPolicy::CueRegularized => Ok(Weighting::Cue),
    }
}
