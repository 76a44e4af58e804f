//! Weakly classical errors: conditional moments `E[ε^k | X*, S] = v_k(X*, S, ω)`.
//!
//! For `K ≤ 4` the correction `Σ_k f_k` collapses, by the product rule, to
//! `Σ_k c_k(x, s, ω) g^{(k)}` with
//!
//! - `c₂ = v₂/2 − v₂ v₂''/4`
//! - `c₃ = v₃/6 − v₂ v₂'/2`
//! - `c₄ = v₄/24 − v₂²/4`
//!
//! where the terms after the first appear only when `K = 4`.

use crate::error::{MermError, Result};

/// Parametric family of conditional error moments.
pub trait VFamily: Send + Sync + std::fmt::Debug {
    /// Tag used when the scheme is serialized.
    fn name(&self) -> &str;
    fn dim_omega(&self) -> usize;
    /// Highest `k` for which `v_k` is defined.
    fn max_k(&self) -> usize;
    /// `r`-th x-derivative of `v_k` (`r ≤ 2`); when `grad` is given, its
    /// gradient in `ω` is written there.
    fn v(&self, k: usize, r: usize, x: f64, s: &[f64], omega: &[f64], grad: Option<&mut [f64]>) -> f64;
}

/// `v_k(x, s, ω) = ω_k exp(k ω₁ x)` with `ω = (ω₁, …, ω_K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExponentialVFamily {
    k: usize,
}

pub fn exponential_v_family(k: usize) -> Result<ExponentialVFamily> {
    if !(2..=4).contains(&k) {
        return Err(MermError::invalid(format!(
            "exponential v-family is defined for 2 <= K <= 4, got K = {k}"
        )));
    }
    Ok(ExponentialVFamily { k })
}

impl VFamily for ExponentialVFamily {
    fn name(&self) -> &str {
        "exponential"
    }

    fn dim_omega(&self) -> usize {
        self.k
    }

    fn max_k(&self) -> usize {
        self.k
    }

    fn v(&self, k: usize, r: usize, x: f64, _s: &[f64], omega: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let w1 = omega[0];
        let wk = omega[k - 1];
        let a = k as f64 * w1;
        let e = (a * x).exp();
        let ar = a.powi(r as i32);
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            // d/dω₁ [a^r e^{a x}] with da/dω₁ = k
            let dar = if r == 0 { 0.0 } else { r as f64 * a.powi(r as i32 - 1) };
            g[0] += wk * k as f64 * (dar + ar * x) * e;
            g[k - 1] += ar * e;
        }
        wk * ar * e
    }
}

/// Correction coefficients `c₂..c_K` of `g^{(2)}..g^{(K)}` and, optionally,
/// their ω-gradients (row-major `(K−1) x dim ω`).
pub(crate) fn weakly_coefficients(
    family: &dyn VFamily,
    k: usize,
    x: f64,
    s: &[f64],
    omega: &[f64],
    c: &mut [f64],
    dc: Option<&mut [f64]>,
) {
    let q = family.dim_omega();
    let want = dc.is_some();
    let mut grads = vec![0.0; if want { 5 * q } else { 0 }];
    // Slots: v2, v2', v2'', v3, v4.
    let mut eval = |kk: usize, r: usize, slot: usize| -> f64 {
        if want {
            family.v(kk, r, x, s, omega, Some(&mut grads[slot * q..(slot + 1) * q]))
        } else {
            family.v(kk, r, x, s, omega, None)
        }
    };
    let v2 = eval(2, 0, 0);
    let (v2d, v2dd) = if k >= 4 { (eval(2, 1, 1), eval(2, 2, 2)) } else { (0.0, 0.0) };
    let v3 = if k >= 3 { eval(3, 0, 3) } else { 0.0 };
    let v4 = if k >= 4 { eval(4, 0, 4) } else { 0.0 };
    let full = k >= 4;

    c[0] = v2 / 2.0 - if full { v2 * v2dd / 4.0 } else { 0.0 };
    if k >= 3 {
        c[1] = v3 / 6.0 - if full { v2 * v2d / 2.0 } else { 0.0 };
    }
    if full {
        c[2] = v4 / 24.0 - v2 * v2 / 4.0;
    }
    if let Some(dc) = dc {
        let g = |slot: usize, j: usize| grads[slot * q + j];
        for j in 0..q {
            dc[j] = g(0, j) / 2.0 - if full { (g(0, j) * v2dd + v2 * g(2, j)) / 4.0 } else { 0.0 };
            if k >= 3 {
                dc[q + j] = g(3, j) / 6.0 - if full { (g(0, j) * v2d + v2 * g(1, j)) / 2.0 } else { 0.0 };
            }
            if full {
                dc[2 * q + j] = g(4, j) / 24.0 - v2 * g(0, j) / 2.0;
            }
        }
    }
}
