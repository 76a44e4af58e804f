use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MermError, Result};

/// Polynomial instrument basis in `(x, z)`.
///
/// `K2` is `(1, x, z, x², z², x³, z³)` and `K4` is the full cubic
/// `(1, x, z, x², xz, z², x³, x²z, xz², z³)`. `Custom` enumerates, degree by
/// degree, either all monomials `x^a z^b` (with interactions) or only pure
/// powers; `Custom{3, true}` is `K4` and `Custom{3, false}` is `K2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisKind {
    K2,
    K4,
    Custom { degree: u32, interactions: bool },
}

impl FromStr for BasisKind {
    type Err = MermError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k2" | "k2-basis" => Ok(BasisKind::K2),
            "k4" | "k4-basis" => Ok(BasisKind::K4),
            _ => Err(MermError::Unknown {
                kind: "basis".into(),
                name: s.into(),
            }),
        }
    }
}

impl BasisKind {
    /// Exponent pairs `(a, b)` of the monomials `x^a z^b`, in frozen order.
    pub fn terms(&self) -> Vec<(u32, u32)> {
        let (degree, interactions) = match *self {
            BasisKind::K2 => (3, false),
            BasisKind::K4 => (3, true),
            BasisKind::Custom { degree, interactions } => (degree, interactions),
        };
        let mut out = vec![(0, 0)];
        for deg in 1..=degree {
            if interactions {
                for a in (0..=deg).rev() {
                    out.push((a, deg - a));
                }
            } else {
                out.push((deg, 0));
                out.push((0, deg));
            }
        }
        out
    }
}

/// Instrument basis with frozen term order and an optional scale for `x`
/// (terms use `x / x_scale`, which helps conditioning when `x` is large).
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentBasis {
    kind: BasisKind,
    terms: Vec<(u32, u32)>,
    x_scale: f64,
}

impl InstrumentBasis {
    pub fn new(kind: BasisKind) -> Self {
        Self {
            kind,
            terms: kind.terms(),
            x_scale: 1.0,
        }
    }

    pub fn with_x_scale(mut self, scale: f64) -> Self {
        self.x_scale = scale;
        self
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Number of polynomial terms (extras not included).
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Highest power of `x` in the basis.
    pub fn x_degree(&self) -> u32 {
        self.terms.iter().map(|t| t.0).max().unwrap_or(0)
    }

    /// Order-`k` x-derivative of the basis followed by the extras (which do not
    /// depend on `x`). `out` has length `len() + extra.len()`.
    pub fn derivative(&self, k: usize, x: f64, z: f64, extra: &[f64], out: &mut [f64]) {
        let xs = x / self.x_scale;
        for (o, &(a, b)) in out.iter_mut().zip(&self.terms) {
            let a = a as usize;
            *o = if k > a {
                0.0
            } else {
                let falling: f64 = ((a - k + 1)..=a).map(|i| i as f64).product();
                falling * xs.powi((a - k) as i32) * z.powi(b as i32) / self.x_scale.powi(k as i32)
            };
        }
        let tail = &mut out[self.terms.len()..];
        if k == 0 {
            tail.copy_from_slice(extra);
        } else {
            tail.fill(0.0);
        }
    }

    pub fn eval(&self, x: f64, z: f64, extra: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len() + extra.len()];
        self.derivative(0, x, z, extra, &mut out);
        out
    }
}

/// The named basis at `(x, z)` with `extra` appended.
pub fn build_instrument_basis(kind: BasisKind, x: f64, z: f64, extra: &[f64]) -> Vec<f64> {
    InstrumentBasis::new(kind).eval(x, z, extra)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_orders() {
        assert_eq!(BasisKind::K2.terms(), vec![(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (3, 0), (0, 3)]);
        assert_eq!(
            BasisKind::K4.terms(),
            vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)]
        );
        assert_eq!(
            BasisKind::Custom {
                degree: 3,
                interactions: true
            }
            .terms(),
            BasisKind::K4.terms()
        );
    }

    #[test]
    fn spot_values() {
        assert_eq!(build_instrument_basis(BasisKind::K2, 0.0, 0.0, &[]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(build_instrument_basis(BasisKind::K4, 1.0, 1.0, &[]), vec![1.0; 10]);
        let v = build_instrument_basis(BasisKind::K4, 2.0, 3.0, &[5.0]);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0, 8.0, 12.0, 18.0, 27.0, 5.0]);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!("k3".parse::<BasisKind>(), Err(MermError::Unknown { .. })));
        assert_eq!("K4".parse::<BasisKind>().unwrap(), BasisKind::K4);
    }

    #[test]
    fn derivatives_of_scaled_terms() {
        let b = InstrumentBasis::new(BasisKind::K4).with_x_scale(2.0);
        let mut out = vec![0.0; 11];
        b.derivative(2, 3.0, 5.0, &[7.0], &mut out);
        // d²/dx² (x/2)^3 = 6 (x/2) / 4 and d²/dx² (x/2)² z = 2 z / 4
        assert_eq!(out[6], 6.0 * 1.5 / 4.0);
        assert_eq!(out[7], 2.0 * 5.0 / 4.0);
        assert_eq!(out[3], 0.5);
        assert_eq!(out[10], 0.0);
        assert_eq!(out[1], 0.0);
    }
}
