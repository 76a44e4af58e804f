//! Central finite differences of arbitrary order.
//!
//! Stencil weights come from Fornberg's recursion. An order-`k` derivative
//! uses the symmetric stencil on `2p+1` points with `p = (k + q - 1) / 2`,
//! which has truncation error `O(h^q)`. The step balances truncation against
//! round-off: `h = c·max(1, |x|)·ε^{1/(k+q)}`. Mixed partials are tensor
//! products of one-dimensional stencils.

use serde::{Deserialize, Serialize};

use crate::error::{MermError, Result};

/// Step-size policy of the numeric derivative fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepPolicy {
    /// Multiplier `c` of the step.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Truncation order `q` (even, ≥ 2).
    #[serde(default = "default_accuracy")]
    pub accuracy: usize,
}

fn default_c() -> f64 {
    1.0
}

fn default_accuracy() -> usize {
    6
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            c: default_c(),
            accuracy: default_accuracy(),
        }
    }
}

impl StepPolicy {
    /// Step for a derivative of total order `order` at coordinate value `x`.
    pub fn step(&self, x: f64, order: usize) -> f64 {
        let q = self.accuracy.max(2);
        self.c * x.abs().max(1.0) * f64::EPSILON.powf(1.0 / (order + q) as f64)
    }
}

/// Weights of the derivatives of order `0..=order` at `x0` for the given nodes.
/// Returns a `(order+1) x nodes.len()` table, row `k` holding the order-`k` weights.
pub fn fornberg_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Integer offsets and unit-spacing weights of the central stencil for a
/// derivative of order `k` with truncation order `accuracy`. Zero weights are dropped.
pub fn central_stencil(k: usize, accuracy: usize) -> (Vec<i32>, Vec<f64>) {
    if k == 0 {
        return (vec![0], vec![1.0]);
    }
    let p = ((k + accuracy.max(2) - 1) / 2) as i32;
    let nodes: Vec<f64> = (-p..=p).map(f64::from).collect();
    let w = fornberg_weights(0.0, &nodes, k).swap_remove(k);
    (-p..=p)
        .zip(w)
        .filter(|(_, w)| w.abs() > 1e-13)
        .unzip()
}

struct Axis {
    coord: usize,
    h: f64,
    offsets: Vec<i32>,
    weights: Vec<f64>,
}

/// Mixed partial `∂_κ f(x)` of a vector function `f: R^d → R^m`, written to `out`.
pub fn partial<F>(mut f: F, x: &[f64], kappa: &[u32], m: usize, policy: &StepPolicy, out: &mut [f64]) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    debug_assert_eq!(x.len(), kappa.len());
    let order: usize = kappa.iter().map(|&k| k as usize).sum();
    if order == 0 {
        return f(x, out);
    }
    let mut axes = Vec::new();
    for (j, &k) in kappa.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let raw = policy.step(x[j], order);
        let p = ((k as usize + policy.accuracy.max(2) - 1) / 2) as f64;
        let h = (x[j] + raw) - x[j];
        if !(h > 0.0) || !(x[j] + p * h).is_finite() || !(x[j] - p * h).is_finite() {
            return Err(MermError::StepUnderflow { x: x[j], order });
        }
        let (offsets, weights) = central_stencil(k as usize, policy.accuracy);
        axes.push(Axis {
            coord: j,
            h,
            offsets,
            weights,
        });
    }
    let scale: f64 = axes
        .iter()
        .map(|a| a.h.powi(kappa[a.coord] as i32))
        .product();
    out[..m].fill(0.0);
    let mut point = x.to_vec();
    let mut value = vec![0.0; m];
    let mut idx = vec![0usize; axes.len()];
    loop {
        let mut w = 1.0;
        for (a, &i) in axes.iter().zip(&idx) {
            point[a.coord] = x[a.coord] + a.offsets[i] as f64 * a.h;
            w *= a.weights[i];
        }
        f(&point, &mut value)?;
        for (o, v) in out.iter_mut().zip(&value) {
            *o += w * v;
        }
        // odometer over the tensor-product stencil
        let mut level = 0;
        loop {
            if level == axes.len() {
                for o in out[..m].iter_mut() {
                    *o /= scale;
                }
                return Ok(());
            }
            idx[level] += 1;
            if idx[level] < axes[level].offsets.len() {
                break;
            }
            idx[level] = 0;
            level += 1;
        }
    }
}

/// Order-`k` derivative of a scalar function.
pub fn derivative<F>(f: F, x: f64, k: usize, policy: &StepPolicy) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut out = [0.0];
    partial(
        |p, o| {
            o[0] = f(p[0]);
            Ok(())
        },
        &[x],
        &[k as u32],
        1,
        policy,
        &mut out,
    )?;
    Ok(out[0])
}

/// Gradient of `f: R^p → R^m` with the five-point central rule; `out` is
/// `m x p` row-major.
pub fn jacobian_5pt<F>(mut f: F, theta: &[f64], m: usize, out: &mut [f64]) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let p = theta.len();
    let mut t = theta.to_vec();
    let mut f2 = vec![0.0; m];
    let mut f1 = vec![0.0; m];
    let mut b1 = vec![0.0; m];
    let mut b2 = vec![0.0; m];
    for l in 0..p {
        let raw = f64::EPSILON.powf(0.2) * theta[l].abs().max(1.0);
        let h = (theta[l] + raw) - theta[l];
        t[l] = theta[l] + 2.0 * h;
        f(&t, &mut f2)?;
        t[l] = theta[l] + h;
        f(&t, &mut f1)?;
        t[l] = theta[l] - h;
        f(&t, &mut b1)?;
        t[l] = theta[l] - 2.0 * h;
        f(&t, &mut b2)?;
        t[l] = theta[l];
        for i in 0..m {
            out[i * p + l] = (-f2[i] + 8.0 * f1[i] - 8.0 * b1[i] + b2[i]) / (12.0 * h);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fornberg_reproduces_textbook_stencils() {
        let (o, w) = central_stencil(2, 2);
        assert_eq!(o, vec![-1, 0, 1]);
        assert_relative_eq!(w.as_slice(), [1.0, -2.0, 1.0].as_slice(), epsilon = 1e-14);
        let (o, w) = central_stencil(1, 4);
        assert_eq!(o, vec![-2, -1, 1, 2]);
        let expected = [1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0];
        assert_relative_eq!(w.as_slice(), expected.as_slice(), epsilon = 1e-14);
    }

    #[test]
    fn cubic_second_derivative_at_one() {
        let d = derivative(|x| x * x * x, 1.0, 2, &StepPolicy::default()).unwrap();
        assert!((d - 6.0).abs() <= 1e-6);
    }

    #[test]
    fn bivariate_mixed_fourth_partial() {
        let mut out = [0.0];
        let f = |p: &[f64], o: &mut [f64]| {
            o[0] = p[0] * p[0] * p[1] * p[1];
            Ok(())
        };
        for &(a, b) in &[(0.0, 0.0), (1.5, -2.0), (-7.0, 3.0)] {
            partial(f, &[a, b], &[2, 2], 1, &StepPolicy::default(), &mut out).unwrap();
            assert_relative_eq!(out[0], 4.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn zero_order_is_exact_evaluation() {
        let d = derivative(|x| x.sin(), 0.3, 0, &StepPolicy::default()).unwrap();
        assert_eq!(d, 0.3f64.sin());
    }

    #[test]
    fn huge_arguments_underflow() {
        let err = derivative(|x| x, f64::MAX, 4, &StepPolicy::default()).unwrap_err();
        assert!(matches!(err, MermError::StepUnderflow { order: 4, .. }));
    }

    #[test]
    fn five_point_jacobian() {
        let mut out = [0.0; 2];
        jacobian_5pt(
            |t, o| {
                o[0] = t[0].exp() * t[1];
                Ok(())
            },
            &[0.5, 2.0],
            1,
            &mut out,
        )
        .unwrap();
        assert_relative_eq!(out[0], 0.5f64.exp() * 2.0, max_relative = 1e-10);
        assert_relative_eq!(out[1], 0.5f64.exp(), max_relative = 1e-10);
    }
}
