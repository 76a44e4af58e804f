use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::weakly::{exponential_v_family, weakly_coefficients, VFamily};
use crate::error::{MermError, Result};
use crate::model::multi_index::{multi_index_range, MultiIndex};

/// Conditional-moment family of the weakly classical regime, as serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VFamilyTag {
    Exponential,
    /// A family supplied in code; it can be reported but not rebuilt from text.
    Custom(String),
}

/// Serialized description of a correction scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    ClassicalScalar {
        k: usize,
    },
    ClassicalMultivariate {
        k: usize,
        d: usize,
        /// Multi-indices whose `γ_κ` is fixed at zero (e.g. by independence).
        #[serde(default)]
        zero_mask: Vec<MultiIndex>,
    },
    WeaklyClassical {
        k: usize,
        v_family: VFamilyTag,
    },
}

impl Regime {
    pub fn k(&self) -> usize {
        match self {
            Regime::ClassicalScalar { k } | Regime::ClassicalMultivariate { k, .. } | Regime::WeaklyClassical { k, .. } => *k,
        }
    }
}

/// Errors-in-variables regime and expansion order `K`; fixes which
/// x-derivatives of `g` enter the corrected moment and the nuisance layout.
///
/// The corrected moment is always `ψ = g − Σ_j c_j ∂_{κ_j} g` over
/// [`CorrectionScheme::kappas`]; in the classical regimes `c = γ`, in the
/// weakly classical regime `c` is a function of `(x, s, ω)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Regime", into = "Regime")]
pub struct CorrectionScheme {
    regime: Regime,
    kappas: Vec<MultiIndex>,
    family: Option<Arc<dyn VFamily>>,
}

impl PartialEq for CorrectionScheme {
    fn eq(&self, other: &Self) -> bool {
        self.regime == other.regime
    }
}

impl TryFrom<Regime> for CorrectionScheme {
    type Error = MermError;

    fn try_from(regime: Regime) -> Result<Self> {
        Self::new(regime)
    }
}

impl From<CorrectionScheme> for Regime {
    fn from(s: CorrectionScheme) -> Self {
        s.regime
    }
}

impl CorrectionScheme {
    /// Builds a scheme from its serialized description. Custom v-families
    /// must go through [`CorrectionScheme::weakly_classical`].
    pub fn new(regime: Regime) -> Result<Self> {
        match regime {
            Regime::ClassicalScalar { k } => Self::classical_scalar(k),
            Regime::ClassicalMultivariate { k, d, zero_mask } => Self::classical_multivariate(k, d, zero_mask),
            Regime::WeaklyClassical { k, v_family } => match v_family {
                VFamilyTag::Exponential => Self::weakly_classical(k, Arc::new(exponential_v_family(k)?)),
                VFamilyTag::Custom(name) => Err(MermError::Unknown {
                    kind: "v-family".into(),
                    name,
                }),
            },
        }
    }

    pub fn classical_scalar(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(MermError::InvalidOrder(k));
        }
        Ok(Self {
            regime: Regime::ClassicalScalar { k },
            kappas: (2..=k as u32).map(MultiIndex::scalar).collect(),
            family: None,
        })
    }

    pub fn classical_multivariate(k: usize, d: usize, zero_mask: Vec<MultiIndex>) -> Result<Self> {
        if k < 2 {
            return Err(MermError::InvalidOrder(k));
        }
        if d == 0 {
            return Err(MermError::invalid("multivariate scheme needs d >= 1"));
        }
        for kappa in &zero_mask {
            if kappa.dim() != d || !(2..=k).contains(&kappa.order()) {
                return Err(MermError::invalid(format!(
                    "zero-mask entry {kappa} is not a multi-index of dimension {d} and order 2..={k}"
                )));
            }
        }
        let kappas = multi_index_range(d, 2, k)
            .into_iter()
            .filter(|kappa| !zero_mask.contains(kappa))
            .collect();
        Ok(Self {
            regime: Regime::ClassicalMultivariate { k, d, zero_mask },
            kappas,
            family: None,
        })
    }

    pub fn weakly_classical(k: usize, family: Arc<dyn VFamily>) -> Result<Self> {
        if k < 2 {
            return Err(MermError::InvalidOrder(k));
        }
        if k > 4 {
            return Err(MermError::UnsupportedOrder {
                requested: k,
                supported: 4,
            });
        }
        if family.max_k() < k {
            return Err(MermError::invalid(format!(
                "v-family '{}' defines v_k only up to k = {}",
                family.name(),
                family.max_k()
            )));
        }
        let tag = match family.name() {
            "exponential" => VFamilyTag::Exponential,
            other => VFamilyTag::Custom(other.to_string()),
        };
        Ok(Self {
            regime: Regime::WeaklyClassical { k, v_family: tag },
            kappas: (2..=k as u32).map(MultiIndex::scalar).collect(),
            family: Some(family),
        })
    }

    pub fn regime(&self) -> &Regime {
        &self.regime
    }

    /// Expansion order `K`.
    pub fn order(&self) -> usize {
        self.regime.k()
    }

    /// Number of mismeasured coordinates.
    pub fn d(&self) -> usize {
        match &self.regime {
            Regime::ClassicalMultivariate { d, .. } => *d,
            _ => 1,
        }
    }

    /// True when ψ is linear in the nuisance with coefficients equal to it,
    /// so that the nuisance can be profiled out.
    pub fn is_classical(&self) -> bool {
        self.family.is_none()
    }

    /// Derivatives `∂_κ g` that enter ψ, in nuisance-key order.
    pub fn kappas(&self) -> &[MultiIndex] {
        &self.kappas
    }

    pub fn nuisance_dim(&self) -> usize {
        match &self.family {
            Some(f) => f.dim_omega(),
            None => self.kappas.len(),
        }
    }

    pub fn v_family(&self) -> Option<&Arc<dyn VFamily>> {
        self.family.as_ref()
    }

    /// Labels of the nuisance parameters: `gamma_2`, `gamma_(1,1)`, `omega_1`, …
    pub fn nuisance_labels(&self) -> Vec<String> {
        match (&self.family, &self.regime) {
            (Some(f), _) => (1..=f.dim_omega()).map(|j| format!("omega_{j}")).collect(),
            (None, Regime::ClassicalScalar { .. }) => self.kappas.iter().map(|k| format!("gamma_{}", k.0[0])).collect(),
            _ => self.kappas.iter().map(|k| format!("gamma_{k}")).collect(),
        }
    }

    /// Coefficients `c_j` of `∂_{κ_j} g` at one observation and, optionally,
    /// their nuisance gradients (row-major `kappas x nuisance_dim`).
    pub fn coefficients(&self, x: &[f64], s: &[f64], nuisance: &[f64], c: &mut [f64], dc: Option<&mut [f64]>) {
        match &self.family {
            None => {
                c.copy_from_slice(nuisance);
                if let Some(dc) = dc {
                    let q = nuisance.len();
                    dc.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..q {
                        dc[j * q + j] = 1.0;
                    }
                }
            }
            Some(f) => weakly_coefficients(f.as_ref(), self.order(), x[0], s, nuisance, c, dc),
        }
    }

    pub(crate) fn check_nuisance(&self, nuisance: &[f64]) -> Result<()> {
        if nuisance.len() != self.nuisance_dim() {
            return Err(MermError::dim("nuisance vector", self.nuisance_dim(), nuisance.len()));
        }
        if let Some(i) = nuisance.iter().position(|v| !v.is_finite()) {
            return Err(MermError::invalid(format!("nuisance entry {i} is not finite")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nuisance_dimensions() {
        assert_eq!(CorrectionScheme::classical_scalar(4).unwrap().nuisance_dim(), 3);
        let full = CorrectionScheme::classical_multivariate(4, 2, vec![]).unwrap();
        assert_eq!(full.nuisance_dim(), 12);
        let mask = [[1, 1], [2, 1], [1, 2], [3, 1], [1, 3]].iter().map(|v| MultiIndex(v.to_vec())).collect();
        assert_eq!(CorrectionScheme::classical_multivariate(4, 2, mask).unwrap().nuisance_dim(), 7);
        let weak = CorrectionScheme::new(Regime::WeaklyClassical {
            k: 4,
            v_family: VFamilyTag::Exponential,
        })
        .unwrap();
        assert_eq!(weak.nuisance_dim(), 4);
        assert!(!weak.is_classical());
    }

    #[test]
    fn invalid_schemes_are_rejected() {
        assert_eq!(CorrectionScheme::classical_scalar(1), Err(MermError::InvalidOrder(1)));
        assert!(CorrectionScheme::new(Regime::WeaklyClassical {
            k: 5,
            v_family: VFamilyTag::Exponential
        })
        .is_err());
        assert!(CorrectionScheme::classical_multivariate(4, 2, vec![MultiIndex(vec![1, 0])]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let text = r#"{"regime":"classical_multivariate","k":4,"d":2,"zero_mask":[[1,1]]}"#;
        let s: CorrectionScheme = serde_json::from_str(text).unwrap();
        assert_eq!(s.nuisance_dim(), 11);
        let back = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<CorrectionScheme>(&back).unwrap(), s);
        let bad = r#"{"regime":"classical_scalar","k":1}"#;
        assert!(serde_json::from_str::<CorrectionScheme>(bad).is_err());
        let weak = r#"{"regime":"weakly_classical","k":2,"v_family":"exponential"}"#;
        assert_eq!(serde_json::from_str::<CorrectionScheme>(weak).unwrap().nuisance_dim(), 2);
    }

    #[test]
    fn labels() {
        assert_eq!(
            CorrectionScheme::classical_scalar(3).unwrap().nuisance_labels(),
            vec!["gamma_2", "gamma_3"]
        );
        let m = CorrectionScheme::classical_multivariate(2, 2, vec![]).unwrap();
        assert_eq!(m.nuisance_labels(), vec!["gamma_(2,0)", "gamma_(1,1)", "gamma_(0,2)"]);
    }
}
