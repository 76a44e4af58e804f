//! Monte Carlo designs and their data-generating processes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{MermError, Result};
use crate::gmm::{OptimizerSettings, WeightingPolicy};
use crate::model::dataset::Dataset;
use crate::model::logit::{ConditionalLogit, UtilityDesign};
use crate::model::residual::Instruments;
use crate::model::{BasisKind, InstrumentBasis, PolynomialInstruments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignTag {
    /// `ρ = θ₁ + θ₂x + θ₃x² + θ₄x³`.
    Polynomial,
    /// `ρ = θ₁ + θ₂x + θ₃/(1 + x²)²`.
    RationalFraction,
    /// Binary outcome with `P(Y = 1 | x) = ½(1 + erf(θ₁ + θ₂x))`.
    Probit,
    /// Three-alternative conditional logit with one mismeasured regressor.
    MultinomialLogit,
    /// Conditional logit calibrated to an intercity travel-mode survey.
    CalibratedLogit,
    /// Scalar linear regression `ρ = θ₁ + θ₂x`.
    LinearAttenuation,
}

impl std::str::FromStr for DesignTag {
    type Err = MermError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| MermError::Unknown {
            kind: "design tag".into(),
            name: s.into(),
        })
    }
}

impl DesignTag {
    pub fn name(&self) -> &'static str {
        match self {
            DesignTag::Polynomial => "polynomial",
            DesignTag::RationalFraction => "rational_fraction",
            DesignTag::Probit => "probit",
            DesignTag::MultinomialLogit => "multinomial_logit",
            DesignTag::CalibratedLogit => "calibrated_logit",
            DesignTag::LinearAttenuation => "linear_attenuation",
        }
    }

    pub fn default_theta0(&self) -> Vec<f64> {
        match self {
            DesignTag::Polynomial => vec![1.0, 1.0, 0.0, -0.5],
            DesignTag::RationalFraction => vec![1.0, 1.0, 2.0],
            DesignTag::Probit => vec![-1.0, 2.0],
            DesignTag::MultinomialLogit => vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            DesignTag::CalibratedLogit => CALIBRATED_THETA0.to_vec(),
            DesignTag::LinearAttenuation => vec![1.0, 1.0],
        }
    }

    pub fn default_n(&self) -> usize {
        match self {
            DesignTag::MultinomialLogit => 2000,
            DesignTag::CalibratedLogit => 2769,
            _ => 1000,
        }
    }

    /// Default noise-to-signal ratio. The regression designs draw
    /// `ε ~ N(0, 1/4)` against `var X* = 5/4`.
    pub fn default_tau(&self) -> f64 {
        match self {
            DesignTag::MultinomialLogit | DesignTag::CalibratedLogit | DesignTag::LinearAttenuation => 0.5,
            _ => 0.5 / REGRESSION_SIGMA_X,
        }
    }

    /// Standard deviation of the true regressor `X*`.
    pub fn sigma_x(&self) -> f64 {
        match self {
            DesignTag::MultinomialLogit => std::f64::consts::SQRT_2,
            DesignTag::CalibratedLogit => CALIBRATED.income_sd,
            _ => REGRESSION_SIGMA_X,
        }
    }

    /// Display scale of the result tables (the logit effects are small).
    pub fn table_scale(&self) -> f64 {
        match self {
            DesignTag::MultinomialLogit => 100.0,
            _ => 1.0,
        }
    }

    /// Label of the naive estimator.
    pub fn naive_label(&self) -> &'static str {
        match self {
            DesignTag::Polynomial | DesignTag::LinearAttenuation => "OLS",
            DesignTag::RationalFraction | DesignTag::Probit => "NLLS",
            DesignTag::MultinomialLogit | DesignTag::CalibratedLogit => "MLE",
        }
    }

    pub fn is_logit(&self) -> bool {
        matches!(self, DesignTag::MultinomialLogit | DesignTag::CalibratedLogit)
    }
}

/// `sd(X*)` in the regression designs: `X* = Z + V`, `var Z = 1`, `var V = 1/4`.
pub const REGRESSION_SIGMA_X: f64 = 1.118033988749895;

/// Parameters of the calibrated logit (income, urban, constant per
/// alternative, then the common price and in-vehicle-time coefficients).
pub const CALIBRATED_THETA0: [f64; 8] = [0.0355, 0.2976, -2.0891, 0.0079, -0.9900, 1.8794, -0.0223, -0.0149];

/// Synthetic covariate generator standing in for the survey data.
///
/// Income is log-normal with the survey's standard deviation; each
/// alternative's price and travel time are Gaussian with fixed means and
/// coefficients of variation, correlated through a shared trip-length factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedCovariates {
    pub income_mean: f64,
    pub income_sd: f64,
    pub urban_share: f64,
    /// `(mean price, mean time)` for alternatives 0, 1, 2.
    pub means: [(f64, f64); 3],
    /// Coefficients of variation of price and time.
    pub cv: (f64, f64),
    /// Loading of the standardized covariates on the shared trip-length factor.
    pub trip_loading: f64,
    /// Correlation between the instrument and standardized income.
    pub instrument_loading: f64,
}

pub const CALIBRATED: CalibratedCovariates = CalibratedCovariates {
    income_mean: 45.0,
    income_sd: 17.5,
    urban_share: 0.3,
    means: [(45.0, 300.0), (140.0, 60.0), (55.0, 270.0)],
    cv: (0.35, 0.3),
    trip_loading: 0.8,
    instrument_loading: 0.5,
};

/// An estimator compared in a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    /// OLS, NLLS or MLE on the mismeasured data, by design.
    Naive,
    /// Corrected GMM of order `k` (classical scalar scheme).
    Merm {
        k: usize,
        #[serde(default = "WeightingPolicy::gmm1_then_efficient")]
        policy: WeightingPolicy,
    },
}

impl EstimatorSpec {
    pub fn merm(k: usize) -> Self {
        EstimatorSpec::Merm {
            k,
            policy: WeightingPolicy::gmm1_then_efficient(),
        }
    }

    pub fn label(&self, tag: DesignTag) -> String {
        match self {
            EstimatorSpec::Naive => tag.naive_label().into(),
            EstimatorSpec::Merm { k, .. } => format!("K={k}"),
        }
    }
}

/// Single start from the naive pilot and a gradient tolerance above the
/// floating-point noise floor of efficiently weighted objectives.
pub fn default_optimizer() -> OptimizerSettings {
    OptimizerSettings {
        starts: 1,
        grad_tol: 1e-6,
        ..OptimizerSettings::default()
    }
}

/// A simulation design: DGP, sample size, truth and estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McDesign {
    pub tag: DesignTag,
    pub n: usize,
    /// `σ_ε / σ_X*`.
    pub tau: f64,
    pub theta0: Vec<f64>,
    pub seed: u64,
    pub estimators: Vec<EstimatorSpec>,
    /// Optimizer settings of the corrected estimators (single start by default).
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerSettings,
}

impl McDesign {
    /// Defaults for a tag: the naive estimator and corrections of order 2 and 4.
    pub fn new(tag: DesignTag) -> Self {
        Self {
            tag,
            n: tag.default_n(),
            tau: tag.default_tau(),
            theta0: tag.default_theta0(),
            seed: 0,
            estimators: vec![EstimatorSpec::Naive, EstimatorSpec::merm(2), EstimatorSpec::merm(4)],
            optimizer: default_optimizer(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(MermError::invalid(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        if self.n < 50 {
            return Err(MermError::invalid(format!("n must be >= 50, got {}", self.n)));
        }
        let p = self.tag.default_theta0().len();
        if self.theta0.len() != p {
            return Err(MermError::dim(format!("theta0 for design {}", self.tag.name()), p, self.theta0.len()));
        }
        if self.estimators.is_empty() {
            return Err(MermError::invalid("design lists no estimators"));
        }
        for e in &self.estimators {
            if let EstimatorSpec::Merm { k, .. } = e {
                if *k < 2 {
                    return Err(MermError::InvalidOrder(*k));
                }
            }
        }
        Ok(())
    }

    /// `σ_ε = τ σ_X*`.
    pub fn sigma_eps(&self) -> f64 {
        self.tau * self.tag.sigma_x()
    }

    /// Target names and true values: the parameters, then (logit designs)
    /// the effects evaluated at the population means of the covariates.
    pub fn targets(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .theta0
            .iter()
            .enumerate()
            .map(|(j, v)| (format!("theta_{}", j + 1), *v))
            .collect();
        if self.tag.is_logit() {
            let names = effect_names(self.tag);
            let truth = self.effects(&self.theta0);
            out.extend(names.into_iter().zip(truth));
        }
        out
    }

    /// Logit effects at the population means as a function of θ.
    pub fn effects(&self, theta: &[f64]) -> Vec<f64> {
        match self.tag {
            DesignTag::MultinomialLogit => {
                let model = multinomial_structure();
                multinomial_effects(&model, theta)
            }
            DesignTag::CalibratedLogit => {
                let model = calibrated_structure();
                calibrated_elasticities(&model, theta)
            }
            _ => Vec::new(),
        }
    }

    /// The `rep`-th sample: an independent ChaCha stream of the design seed.
    pub fn generate(&self, rep: u64) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep);
        match self.tag {
            DesignTag::Polynomial | DesignTag::RationalFraction | DesignTag::Probit | DesignTag::LinearAttenuation => {
                self.regression_draw(&mut rng)
            }
            DesignTag::MultinomialLogit => self.multinomial_draw(&mut rng),
            DesignTag::CalibratedLogit => self.calibrated_draw(&mut rng),
        }
    }

    /// True regression function at `x`.
    fn rho(&self, x: f64) -> f64 {
        let t = &self.theta0;
        match self.tag {
            DesignTag::Polynomial => t[0] + t[1] * x + t[2] * x * x + t[3] * x * x * x,
            DesignTag::RationalFraction => t[0] + t[1] * x + t[2] / (1.0 + x * x).powi(2),
            DesignTag::Probit => 0.5 * (1.0 + erf(t[0] + t[1] * x)),
            _ => t[0] + t[1] * x,
        }
    }

    fn regression_draw(&self, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        let n = self.n;
        let se = self.sigma_eps();
        let (mut x, mut y, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let zi: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * se;
            let u: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            let xs = zi + v;
            let yi = if self.tag == DesignTag::Probit {
                let p = self.rho(xs);
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            } else {
                self.rho(xs) + u
            };
            x.push(xs + e);
            y.push(yi);
            z.push(zi);
        }
        Dataset::from_columns(vec![x], vec![("y".into(), y), ("z".into(), z)])
    }

    fn multinomial_draw(&self, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        let n = self.n;
        let t = &self.theta0;
        let se = self.sigma_eps();
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
        let half = 0.5f64.sqrt();
        let rho: f64 = 0.7;
        let resid = (1.0 - rho * rho).sqrt();
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 5];
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let v1 = 1.0 + half * rng.sample::<f64, _>(StandardNormal);
            let v0 = half * rng.sample::<f64, _>(StandardNormal);
            let xs = v1 * z + v0;
            let std_x = xs / std::f64::consts::SQRT_2;
            let w1 = rho * std_x + resid * rng.sample::<f64, _>(StandardNormal);
            let w2 = rho * std_x + resid * rng.sample::<f64, _>(StandardNormal);
            let u = [
                gumbel.sample(rng),
                t[0] * xs + t[1] * w1 + t[2] + gumbel.sample(rng),
                t[3] * xs + t[4] * w2 + t[5] + gumbel.sample(rng),
            ];
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * se;
            cols[0].push(xs + e);
            cols[1].push(argmax(&u) as f64);
            cols[2].push(z);
            cols[3].push(w1);
            cols[4].push(w2);
        }
        let x = cols.remove(0);
        let names = ["y", "z", "w1", "w2"];
        Dataset::from_columns(vec![x], names.iter().map(|s| s.to_string()).zip(cols).collect())
    }

    fn calibrated_draw(&self, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        let n = self.n;
        let t = &self.theta0;
        let c = CALIBRATED;
        let se = self.sigma_eps();
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
        let urban = Bernoulli::new(c.urban_share).expect("valid share");
        let cv = c.income_sd / c.income_mean;
        let s2 = (1.0 + cv * cv).ln();
        let (mu_ln, sd_ln) = (c.income_mean.ln() - s2 / 2.0, s2.sqrt());
        let own = (1.0 - c.trip_loading * c.trip_loading).sqrt();
        let inst_resid = (1.0 - c.instrument_loading * c.instrument_loading).sqrt();
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); CALIBRATED_SIDE.len() + 1];
        for _ in 0..n {
            let income = (mu_ln + sd_ln * rng.sample::<f64, _>(StandardNormal)).exp();
            let r = if urban.sample(rng) { 1.0 } else { 0.0 };
            let trip: f64 = rng.sample(StandardNormal);
            let mut pt = [[0.0; 2]; 3];
            for (j, &(mp, mt)) in c.means.iter().enumerate() {
                for (k, (mean, cv)) in [(mp, c.cv.0), (mt, c.cv.1)].into_iter().enumerate() {
                    let g = c.trip_loading * trip + own * rng.sample::<f64, _>(StandardNormal);
                    pt[j][k] = mean * (1.0 + cv * g);
                }
            }
            let common = |j: usize| t[6] * pt[j][0] + t[7] * pt[j][1];
            let u = [
                common(0) + gumbel.sample(rng),
                t[0] * income + t[1] * r + t[2] + common(1) + gumbel.sample(rng),
                t[3] * income + t[4] * r + t[5] + common(2) + gumbel.sample(rng),
            ];
            let zeta: f64 = rng.sample(StandardNormal);
            let z = c.instrument_loading * income / c.income_sd + inst_resid * zeta;
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * se;
            let row = [
                income + e,
                argmax(&u) as f64,
                z,
                r,
                pt[0][0],
                pt[0][1],
                pt[1][0],
                pt[1][1],
                pt[2][0],
                pt[2][1],
                (pt[1][0] - pt[0][0]) / 100.0,
                (pt[1][1] - pt[0][1]) / 100.0,
                (pt[2][0] - pt[0][0]) / 100.0,
                (pt[2][1] - pt[0][1]) / 100.0,
            ];
            for (col, v) in cols.iter_mut().zip(row) {
                col.push(v);
            }
        }
        let x = cols.remove(0);
        Dataset::from_columns(vec![x], CALIBRATED_SIDE.iter().map(|s| s.to_string()).zip(cols).collect())
    }
}

fn argmax(u: &[f64]) -> usize {
    (0..u.len()).max_by(|&a, &b| u[a].total_cmp(&u[b])).unwrap_or(0)
}

/// Side columns of the calibrated design. Price and time differences
/// (in hundreds) serve as instruments.
pub const CALIBRATED_SIDE: [&str; 13] = [
    "y", "z", "r", "p0", "t0", "p1", "t1", "p2", "t2", "dp1", "dt1", "dp2", "dt2",
];

pub const MULTINOMIAL_SIDE: [&str; 4] = ["y", "z", "w1", "w2"];

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Utility design of the multinomial design: alternative `j ∈ {1, 2}` has
/// `θ_j1 x + θ_j2 w_j + θ_j3`; alternative 0 is the outside option.
pub fn multinomial_utility() -> Arc<UtilityDesign> {
    Arc::new(|s: &[f64], c: &mut [f64], d: &mut [f64]| {
        c.fill(0.0);
        d.fill(0.0);
        for j in 1..3 {
            let row = j * 6;
            let off = (j - 1) * 3;
            d[row + off] = 1.0;
            c[row + off + 1] = s[1 + j];
            c[row + off + 2] = 1.0;
        }
    })
}

/// Utility design of the calibrated design (θ as in [`CALIBRATED_THETA0`]).
pub fn calibrated_utility() -> Arc<UtilityDesign> {
    Arc::new(|s: &[f64], c: &mut [f64], d: &mut [f64]| {
        c.fill(0.0);
        d.fill(0.0);
        for j in 0..3 {
            c[j * 8 + 6] = s[3 + 2 * j];
            c[j * 8 + 7] = s[4 + 2 * j];
        }
        d[8] = 1.0;
        c[8 + 1] = s[2];
        c[8 + 2] = 1.0;
        d[16 + 3] = 1.0;
        c[16 + 4] = s[2];
        c[16 + 5] = 1.0;
    })
}

/// The multinomial logit moment model with basis `kind` in `(x, z)` plus `w_j`.
pub fn multinomial_model(kind: BasisKind) -> Result<ConditionalLogit> {
    let side = names(&MULTINOMIAL_SIDE);
    let blocks = (1..3)
        .map(|j| {
            let w = format!("w{j}");
            let inst = PolynomialInstruments::new(InstrumentBasis::new(kind), &side, "z", &[w.as_str()])?;
            Ok((j, Arc::new(inst) as Arc<dyn Instruments>))
        })
        .collect::<Result<_>>()?;
    ConditionalLogit::new(3, 6, multinomial_utility(), &side, "y", blocks)
}

/// The calibrated logit moment model: basis in `(x/σ_X*, z)` plus urban and
/// the alternative's price and time differences.
pub fn calibrated_model(kind: BasisKind) -> Result<ConditionalLogit> {
    let side = names(&CALIBRATED_SIDE);
    let blocks = (1..3)
        .map(|j| {
            let (dp, dt) = (format!("dp{j}"), format!("dt{j}"));
            let basis = InstrumentBasis::new(kind).with_x_scale(CALIBRATED.income_sd);
            let inst = PolynomialInstruments::new(basis, &side, "z", &["r", dp.as_str(), dt.as_str()])?;
            Ok((j, Arc::new(inst) as Arc<dyn Instruments>))
        })
        .collect::<Result<_>>()?;
    ConditionalLogit::new(3, 8, calibrated_utility(), &side, "y", blocks)
}

fn multinomial_structure() -> ConditionalLogit {
    multinomial_model(BasisKind::K2).expect("static multinomial model")
}

fn calibrated_structure() -> ConditionalLogit {
    calibrated_model(BasisKind::K2).expect("static calibrated model")
}

/// Reporting order of alternatives in effect tables: 1, 2, then 0.
const EFFECT_ORDER: [usize; 3] = [1, 2, 0];

pub fn effect_names(tag: DesignTag) -> Vec<String> {
    match tag {
        DesignTag::MultinomialLogit => ["x", "w1", "w2"]
            .iter()
            .flat_map(|v| EFFECT_ORDER.iter().map(move |j| format!("dp{j}/d{v}")))
            .collect(),
        DesignTag::CalibratedLogit => EFFECT_ORDER.iter().map(|j| format!("elasticity_p{j}")).collect(),
        _ => Vec::new(),
    }
}

/// `∂p_j/∂x` and `∂p_j/∂s_c` for the listed side columns, at `(x, s)`.
/// Utilities are linear in `s`, so side derivatives of the utilities are
/// exact central differences.
pub fn logit_marginal_effects(model: &ConditionalLogit, x: f64, s: &[f64], theta: &[f64], side: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let alts = model.alternatives();
    let mut prob = vec![0.0; 2 * alts];
    model.probabilities(x, s, theta, 1, &mut prob, None);
    let p = prob[..alts].to_vec();
    let dx = prob[alts..].to_vec();
    let utility = |s: &[f64]| -> Vec<f64> {
        let (c, d) = model.design_at(s);
        let dim = theta.len();
        (0..alts)
            .map(|k| (0..dim).map(|l| theta[l] * (c[k * dim + l] + d[k * dim + l] * x)).sum())
            .collect()
    };
    let ds = side
        .iter()
        .map(|&col| {
            let mut up = s.to_vec();
            let mut dn = s.to_vec();
            up[col] += 0.5;
            dn[col] -= 0.5;
            let (ua, ub) = (utility(&up), utility(&dn));
            let da: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a - b).collect();
            let mean: f64 = (0..alts).map(|k| p[k] * da[k]).sum();
            (0..alts).map(|k| p[k] * (da[k] - mean)).collect()
        })
        .collect();
    (dx, ds)
}

/// Nine effects `∂p_j/∂v` for `v ∈ (x, w1, w2)`, `j ∈ (1, 2, 0)`, at the
/// population means `x = w1 = w2 = 0`.
pub fn multinomial_effects(model: &ConditionalLogit, theta: &[f64]) -> Vec<f64> {
    let s = [0.0, 0.0, 0.0, 0.0];
    let (dx, ds) = logit_marginal_effects(model, 0.0, &s, theta, &[2, 3]);
    let mut out = Vec::with_capacity(9);
    for d in std::iter::once(&dx).chain(ds.iter()) {
        out.extend(EFFECT_ORDER.iter().map(|&j| d[j]));
    }
    out
}

/// Population means of the calibrated covariates, in side-column order.
pub fn calibrated_means() -> (f64, Vec<f64>) {
    let c = CALIBRATED;
    let m = c.means;
    let s = vec![
        0.0,
        c.instrument_loading * c.income_mean / c.income_sd,
        c.urban_share,
        m[0].0,
        m[0].1,
        m[1].0,
        m[1].1,
        m[2].0,
        m[2].1,
        (m[1].0 - m[0].0) / 100.0,
        (m[1].1 - m[0].1) / 100.0,
        (m[2].0 - m[0].0) / 100.0,
        (m[2].1 - m[0].1) / 100.0,
    ];
    (c.income_mean, s)
}

/// Income elasticities `x/p_j ∂p_j/∂x` at the covariate means, `j ∈ (1, 2, 0)`.
pub fn calibrated_elasticities(model: &ConditionalLogit, theta: &[f64]) -> Vec<f64> {
    let (x, s) = calibrated_means();
    let alts = model.alternatives();
    let mut prob = vec![0.0; 2 * alts];
    model.probabilities(x, &s, theta, 1, &mut prob, None);
    EFFECT_ORDER.iter().map(|&j| x / prob[j] * prob[alts + j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multinomial_truth_at_the_mean() {
        let d = McDesign::new(DesignTag::MultinomialLogit);
        let t = d.targets();
        assert_eq!(t.len(), 15);
        let eff: Vec<f64> = t[6..].iter().map(|v| v.1).collect();
        assert!((eff[0] - 2.0 / 9.0).abs() < 1e-15);
        assert!((eff[1] + 1.0 / 9.0).abs() < 1e-15);
        assert!((eff[2] + 1.0 / 9.0).abs() < 1e-15);
        assert!(eff[3..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn implied_tau_of_the_regression_designs() {
        let d = McDesign::new(DesignTag::Polynomial);
        assert!((d.tau - 0.5 / 1.25f64.sqrt()).abs() < 1e-15);
        assert!((d.sigma_eps() - 0.5).abs() < 1e-15);
        assert!((REGRESSION_SIGMA_X - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_tau_leaves_x_exact() {
        let mut d = McDesign::new(DesignTag::Polynomial);
        d.tau = 0.0;
        d.n = 200;
        let a = d.generate(3).unwrap();
        // With ε ≡ 0 the draw is x = z + v exactly; check against the latent equation.
        let y = a.side_column("y").unwrap();
        let x = a.x_column(0);
        let resid: f64 = x
            .iter()
            .zip(&y)
            .map(|(x, y)| y - (1.0 + x - 0.5 * x * x * x))
            .map(|u| u * u)
            .sum::<f64>()
            / 200.0;
        assert!((resid - 0.25).abs() < 0.07);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let d = McDesign::new(DesignTag::Probit);
        assert_eq!(d.generate(7).unwrap(), d.generate(7).unwrap());
        assert_ne!(d.generate(7).unwrap(), d.generate(8).unwrap());
    }
}
