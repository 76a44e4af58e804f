use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::objective::{gmm_objective, profile_linear, GammaRestrictions};
use super::optimize::{minimize, numeric_gradient, Minimum, Objective, OptimizerSettings};
use super::problem::Problem;
use super::weighting::{weighting_matrix, Weighting, WeightingPolicy};
use crate::error::{MermError, Result};
use crate::linalg::{inverse_spd, inverse_with_ridge, outer_mean, symmetrize};

/// Estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub policy: WeightingPolicy,
    pub optimizer: OptimizerSettings,
    /// Start of the naive pilot search (default: zeros).
    pub theta_start: Option<Vec<f64>>,
    /// Externally supplied naive estimate; skips the naive GMM step.
    pub pilot: Option<Vec<f64>>,
    /// Enforce `σ² ≥ 0` and `E[ε⁴] ≥ σ⁴` on the nuisance (classical regimes).
    pub restrict_gamma: bool,
    /// Profile the nuisance out in classical regimes (otherwise optimize
    /// jointly over β).
    pub profile: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            policy: WeightingPolicy::default(),
            optimizer: OptimizerSettings::default(),
            theta_start: None,
            pilot: None,
            restrict_gamma: false,
            profile: true,
        }
    }
}

/// Test of overidentifying restrictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Output of [`estimate`].
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub theta: Vec<f64>,
    pub nuisance: Vec<f64>,
    pub nuisance_labels: Vec<String>,
    /// Asymptotic covariance of `√n(β̂ − β₀)`.
    pub sigma: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub j_test: Option<JTest>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub starts_converged: usize,
    pub weighting: DMatrix<f64>,
    pub weighting_ridged: bool,
    pub gamma_restricted: bool,
    pub psi_bar: DVector<f64>,
    pub psi_jacobian: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub pilot: Vec<f64>,
    pub policy: WeightingPolicy,
    pub n: usize,
    pub m: usize,
    pub warnings: Vec<String>,
}

impl EstimationResult {
    pub fn beta(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.nuisance).copied().collect()
    }

    pub fn dim_beta(&self) -> usize {
        self.theta.len() + self.nuisance.len()
    }

    /// `m − dim β`.
    pub fn dof(&self) -> usize {
        self.m.saturating_sub(self.dim_beta())
    }

    pub fn labels(&self) -> Vec<String> {
        (1..=self.theta.len())
            .map(|j| format!("theta_{j}"))
            .chain(self.nuisance_labels.iter().cloned())
            .collect()
    }

    pub fn to_report(&self) -> EstimationReport {
        let rows = |a: &DMatrix<f64>| (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
        EstimationReport {
            labels: self.labels(),
            theta: self.theta.clone(),
            nuisance: self.nuisance.clone(),
            std_errors: self.std_errors.clone(),
            sigma: rows(&self.sigma),
            j_test: self.j_test.clone(),
            objective: self.objective,
            converged: self.converged,
            iterations: self.iterations,
            starts_converged: self.starts_converged,
            weighting: rows(&self.weighting),
            weighting_ridged: self.weighting_ridged,
            gamma_restricted: self.gamma_restricted,
            pilot: self.pilot.clone(),
            policy: self.policy.clone(),
            n: self.n,
            m: self.m,
            warnings: self.warnings.clone(),
        }
    }
}

/// JSON-friendly view of an [`EstimationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub labels: Vec<String>,
    pub theta: Vec<f64>,
    pub nuisance: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub j_test: Option<JTest>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub starts_converged: usize,
    pub weighting: Vec<Vec<f64>>,
    pub weighting_ridged: bool,
    pub gamma_restricted: bool,
    pub pilot: Vec<f64>,
    pub policy: WeightingPolicy,
    pub n: usize,
    pub m: usize,
    pub warnings: Vec<String>,
}

/// Profiled objective over θ (classical regimes).
struct Profiled<'p, 'a> {
    problem: &'p Problem<'a>,
    weighting: &'p Weighting,
    restrictions: GammaRestrictions,
}

impl Profiled<'_, '_> {
    fn xi_and_stack(&self, theta: &[f64], jac: bool) -> Result<(DMatrix<f64>, super::problem::StackMeans)> {
        let cue = matches!(self.weighting, Weighting::Cue);
        let s = self.problem.stack_means(theta, jac, cue)?;
        let xi = match self.weighting {
            Weighting::Fixed { xi, .. } => xi.clone(),
            Weighting::Cue => inverse_with_ridge(s.omega_g.as_ref().unwrap(), "moment covariance")?.inverse,
        };
        Ok((xi, s))
    }
}

impl Objective for Profiled<'_, '_> {
    fn dim(&self) -> usize {
        self.problem.p()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let (xi, s) = self.xi_and_stack(x.as_slice(), false)?;
        Ok(profile_linear(&s.g, &s.d, &xi, &self.restrictions)?.objective)
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        if matches!(self.weighting, Weighting::Cue) || !self.restrictions.is_empty() {
            let f = self.value(x)?;
            return Ok((f, numeric_gradient(self, x)?));
        }
        let (xi, s) = self.xi_and_stack(x.as_slice(), true)?;
        let prof = profile_linear(&s.g, &s.d, &xi, &self.restrictions)?;
        // Envelope: ∇_θ Q = 2 (∇_θ ḡ − Σ γ̂_j ∇_θ D_j)' Ξ ψ̄.
        let mut dpsi = s.g_theta.unwrap();
        for (j, dj) in s.d_theta.iter().enumerate() {
            dpsi -= dj * prof.gamma[j];
        }
        let grad = dpsi.transpose() * (&xi * &prof.psi_bar) * 2.0;
        Ok((prof.objective, grad))
    }

    /// Gauss–Newton curvature of the profiled objective:
    /// `2 G'(Ξ − ΞD(D'ΞD)⁻¹D'Ξ)G` with `G = ∇_θ ḡ − Σ γ̂_j ∇_θ D_j`.
    fn curvature(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (xi, s) = self.xi_and_stack(x.as_slice(), true).ok()?;
        let prof = profile_linear(&s.g, &s.d, &xi, &GammaRestrictions::default()).ok()?;
        let mut g = s.g_theta?;
        for (j, dj) in s.d_theta.iter().enumerate() {
            g -= dj * prof.gamma[j];
        }
        let xd = &xi * &s.d;
        let inner = inverse_spd(&(s.d.transpose() * &xd), "D'ΞD").ok()?;
        let annihilated = &xi - &xd * inner * xd.transpose();
        Some(symmetrize(&(g.transpose() * annihilated * &g * 2.0)))
    }
}

/// Joint objective over `β = (θ, η)`.
struct Joint<'p, 'a> {
    problem: &'p Problem<'a>,
    weighting: &'p Weighting,
}

impl Objective for Joint<'_, '_> {
    fn dim(&self) -> usize {
        self.problem.dim_beta()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let p = self.problem.p();
        let (theta, eta) = x.as_slice().split_at(p);
        let psi = self.problem.psi_bar(theta, eta)?;
        let (xi, _) = self.weighting.at(self.problem, theta)?;
        gmm_objective(&psi, &xi)
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        if matches!(self.weighting, Weighting::Cue) {
            let f = self.value(x)?;
            return Ok((f, numeric_gradient(self, x)?));
        }
        let p = self.problem.p();
        let (theta, eta) = x.as_slice().split_at(p);
        let (psi, jac) = self.problem.mean_and_jacobian(theta, eta)?;
        let (xi, _) = self.weighting.at(self.problem, theta)?;
        let xp = &xi * &psi;
        Ok((psi.dot(&xp), jac.transpose() * xp * 2.0))
    }

    fn curvature(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let p = self.problem.p();
        let (theta, eta) = x.as_slice().split_at(p);
        let (_, jac) = self.problem.mean_and_jacobian(theta, eta).ok()?;
        let (xi, _) = self.weighting.at(self.problem, theta).ok()?;
        Some(symmetrize(&(jac.transpose() * xi * &jac * 2.0)))
    }
}

/// Naive objective `ḡ(θ)'ḡ(θ)` (γ = 0, identity weighting).
struct Naive<'p, 'a> {
    problem: &'p Problem<'a>,
}

impl Objective for Naive<'_, '_> {
    fn dim(&self) -> usize {
        self.problem.p()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let (g, _) = self.problem.g_mean_and_jacobian(x.as_slice(), false)?;
        Ok(g.dot(&g))
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (g, j) = self.problem.g_mean_and_jacobian(x.as_slice(), true)?;
        Ok((g.dot(&g), j.unwrap().transpose() * &g * 2.0))
    }

    fn curvature(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (_, j) = self.problem.g_mean_and_jacobian(x.as_slice(), true).ok()?;
        let j = j?;
        Some(symmetrize(&(j.transpose() * &j * 2.0)))
    }
}

fn jittered_starts(center: &DVector<f64>, settings: &OptimizerSettings) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut out = vec![center.clone()];
    for _ in 1..settings.starts.max(1) {
        let mut x = center.clone();
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += settings.jitter * v.abs().max(1.0) * z;
        }
        out.push(x);
    }
    out
}

/// Runs every start; the winner is the converged start with the smallest
/// objective, ties broken lexicographically in the parameter.
fn multi_start<O: Objective>(obj: &O, starts: Vec<DVector<f64>>, settings: &OptimizerSettings) -> Result<(Minimum, usize, usize)> {
    let mut best: Option<Minimum> = None;
    let mut converged = 0;
    let mut iterations = 0;
    let mut last_err = None;
    for x0 in starts {
        match minimize(obj, &x0, settings) {
            Ok(m) => {
                iterations += m.iterations;
                if !m.converged {
                    continue;
                }
                converged += 1;
                let better = match &best {
                    None => true,
                    Some(b) => match m.value.total_cmp(&b.value) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Equal => {
                            m.x.iter().zip(b.x.iter()).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne())
                                == Some(std::cmp::Ordering::Less)
                        }
                        std::cmp::Ordering::Greater => false,
                    },
                };
                if better {
                    best = Some(m);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(b) => Ok((b, converged, iterations)),
        None => Err(MermError::NoConvergence(match last_err {
            Some(e) => format!("no start converged (last error: {e})"),
            None => "no start met the convergence criteria".into(),
        })),
    }
}

/// The naive estimate: GMM at γ = 0 with identity weighting.
pub fn naive_estimate(problem: &Problem<'_>, start: &[f64], settings: &OptimizerSettings) -> Result<Vec<f64>> {
    if start.len() != problem.p() {
        return Err(MermError::dim("theta start", problem.p(), start.len()));
    }
    let obj = Naive { problem };
    let single = OptimizerSettings {
        starts: 1,
        ..settings.clone()
    };
    let (m, _, _) = multi_start(&obj, vec![DVector::from_column_slice(start)], &single)?;
    Ok(m.x.iter().copied().collect())
}

struct Fit {
    theta: Vec<f64>,
    nuisance: Vec<f64>,
    objective: f64,
    iterations: usize,
    starts_converged: usize,
    restricted: bool,
    weighting: Weighting,
}

fn fit(problem: &Problem<'_>, policy: &WeightingPolicy, pilot: &[f64], config: &EstimateConfig) -> Result<Fit> {
    let q = problem.q();
    let (weighting, center) = match policy {
        WeightingPolicy::TwoStepEff { first_stage } | WeightingPolicy::TwoStepEffRegularized { first_stage } => {
            let (theta, nuisance) = match first_stage {
                None => (pilot.to_vec(), vec![0.0; q]),
                Some(fs) => {
                    let f = fit(problem, fs, pilot, config)?;
                    (f.theta, f.nuisance)
                }
            };
            (weighting_matrix(policy, problem, &theta, &nuisance)?, theta)
        }
        _ => (weighting_matrix(policy, problem, pilot, &vec![0.0; q])?, pilot.to_vec()),
    };
    let settings = &config.optimizer;
    let center = DVector::from_vec(center);
    let classical = problem.scheme().is_classical();
    if classical && config.profile {
        let restrictions = if config.restrict_gamma { problem.restrictions() } else { GammaRestrictions::default() };
        let obj = Profiled {
            problem,
            weighting: &weighting,
            restrictions,
        };
        let (best, starts_converged, iterations) = multi_start(&obj, jittered_starts(&center, settings), settings)?;
        let theta: Vec<f64> = best.x.iter().copied().collect();
        let (xi, s) = obj.xi_and_stack(&theta, false)?;
        let prof = profile_linear(&s.g, &s.d, &xi, &obj.restrictions)?;
        Ok(Fit {
            theta,
            nuisance: prof.gamma.iter().copied().collect(),
            objective: prof.objective,
            iterations,
            starts_converged,
            restricted: prof.restricted,
            weighting,
        })
    } else {
        let p = problem.p();
        let obj = Joint {
            problem,
            weighting: &weighting,
        };
        let starts = jittered_starts(&center, settings)
            .into_iter()
            .map(|t| {
                let eta = if classical {
                    let (xi, _) = weighting.at(problem, t.as_slice())?;
                    problem.profile_gamma(t.as_slice(), &xi, false)?.gamma
                } else {
                    DVector::zeros(q)
                };
                Ok(DVector::from_iterator(p + q, t.iter().chain(eta.iter()).copied()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (best, starts_converged, iterations) = multi_start(&obj, starts, settings)?;
        Ok(Fit {
            theta: best.x.as_slice()[..p].to_vec(),
            nuisance: best.x.as_slice()[p..].to_vec(),
            objective: best.value,
            iterations,
            starts_converged,
            restricted: false,
            weighting,
        })
    }
}

/// `(Ψ'ΞΨ)⁻¹ Ψ'ΞΩΞΨ (Ψ'ΞΨ)⁻¹`, symmetrized.
pub fn sandwich_variance(psi_jacobian: &DMatrix<f64>, xi: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = psi_jacobian.transpose() * xi;
    let bread = &a * psi_jacobian;
    let inv = inverse_spd(&bread, "Ψ'ΞΨ (variance bread)")?;
    let meat = &a * omega * a.transpose();
    Ok(symmetrize(&(&inv * meat * &inv)))
}

/// J statistic `n·Q̂` with `m − dim β` degrees of freedom.
pub fn j_test(result: &EstimationResult) -> Result<JTest> {
    if !result.policy.is_efficient() {
        return Err(MermError::JTestUndefined("requires efficient or CUE-regularized weighting".into()));
    }
    let dof = result.dof();
    if dof == 0 {
        return Err(MermError::JTestUndefined("model is just identified (dof = 0)".into()));
    }
    let statistic = result.n as f64 * result.objective;
    let chi = ChiSquared::new(dof as f64).map_err(|e| MermError::invalid(e.to_string()))?;
    let p_value = if statistic <= 0.0 { 1.0 } else { chi.sf(statistic) };
    Ok(JTest {
        statistic,
        dof,
        p_value,
    })
}

/// Minimizes `Q̂(β) = ψ̄(β)'Ξψ̄(β)` and attaches sandwich inference.
pub fn estimate(problem: &Problem<'_>, config: &EstimateConfig) -> Result<EstimationResult> {
    let p = problem.p();
    let pilot = match &config.pilot {
        Some(pilot) => {
            if pilot.len() != p {
                return Err(MermError::dim("pilot", p, pilot.len()));
            }
            pilot.clone()
        }
        None => {
            let start = config.theta_start.clone().unwrap_or_else(|| vec![0.0; p]);
            naive_estimate(problem, &start, &config.optimizer)?
        }
    };
    let f = fit(problem, &config.policy, &pilot, config)?;
    let (xi, ridged) = f.weighting.at(problem, &f.theta)?;
    let (psi_bar, psi_jacobian) = problem.mean_and_jacobian(&f.theta, &f.nuisance)?;
    let omega = outer_mean(&problem.psi_rows(&f.theta, &f.nuisance)?);
    let sigma = sandwich_variance(&psi_jacobian, &xi, &omega)?;
    let n = problem.n();
    let std_errors = (0..sigma.nrows()).map(|i| (sigma[(i, i)].max(0.0) / n as f64).sqrt()).collect();
    let mut warnings = Vec::new();
    if ridged {
        warnings.push("weighting matrix was ill-conditioned and has been ridged".to_string());
    }
    if f.restricted {
        warnings.push("nuisance restrictions bind: the estimate is a projection and inference ignores the boundary".to_string());
    }
    if let Some(family) = problem.scheme().v_family() {
        let data = problem.data();
        let negative = (0..n).any(|i| {
            let o = data.obs(i);
            family.v(2, 0, o.x0(), o.s, &f.nuisance, None) < 0.0
        });
        if negative {
            warnings.push("estimated conditional variance v_2 is negative on part of the data".to_string());
        }
    }
    let mut result = EstimationResult {
        theta: f.theta,
        nuisance: f.nuisance,
        nuisance_labels: problem.scheme().nuisance_labels(),
        sigma,
        std_errors,
        j_test: None,
        objective: gmm_objective(&psi_bar, &xi)?,
        converged: true,
        iterations: f.iterations,
        starts_converged: f.starts_converged,
        weighting: xi,
        weighting_ridged: ridged,
        gamma_restricted: f.restricted,
        psi_bar,
        psi_jacobian,
        omega,
        pilot,
        policy: config.policy.clone(),
        n,
        m: problem.m(),
        warnings,
    };
    result.j_test = j_test(&result).ok();
    debug_assert!(f.objective.is_finite());
    Ok(result)
}
