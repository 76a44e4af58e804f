//! Smooth unconstrained minimization: BFGS with Armijo backtracking and a
//! Nelder–Mead fallback for stalls.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MermError, Result};

/// Stopping rules and multi-start settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Gradient test `‖∇Q‖∞ ≤ grad_tol·(1 + |Q|)`.
    pub grad_tol: f64,
    /// Relative step test `‖Δx‖∞ ≤ step_tol·(1 + ‖x‖∞)`.
    pub step_tol: f64,
    pub max_iter: usize,
    /// Number of starts; the first is the unjittered centre.
    pub starts: usize,
    /// Jitter scale, relative to `max(1, |x_j|)`.
    pub jitter: f64,
    /// Seed of the multi-start jitter.
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            step_tol: 1e-10,
            max_iter: 500,
            starts: 5,
            jitter: 0.1,
            seed: 0,
        }
    }
}

/// A smooth objective. `value_grad` defaults to central differences.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let f = self.value(x)?;
        Ok((f, numeric_gradient(self, x)?))
    }

    /// Optional positive-definite curvature estimate (e.g. Gauss–Newton) used
    /// as the initial BFGS Hessian.
    fn curvature(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Central-difference gradient with step `ε^{1/3}·max(1, |x_j|)`.
pub fn numeric_gradient<O: Objective + ?Sized>(obj: &O, x: &DVector<f64>) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    let base = f64::EPSILON.cbrt();
    for j in 0..x.len() {
        let h = base * x[j].abs().max(1.0);
        let mut up = x.clone();
        let mut dn = x.clone();
        up[j] += h;
        dn[j] -= h;
        g[j] = (obj.value(&up)? - obj.value(&dn)?) / (up[j] - dn[j]);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn finite_value<O: Objective + ?Sized>(obj: &O, x: &DVector<f64>) -> f64 {
    match obj.value(x) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

fn grad_ok(g: &DVector<f64>, f: f64, s: &OptimizerSettings) -> bool {
    g.amax() <= s.grad_tol * (1.0 + f.abs())
}

/// BFGS from `x0`. Returns the last iterate; `converged` reports whether the
/// gradient test was met. Fails only if the objective cannot be evaluated at `x0`.
pub fn bfgs<O: Objective + ?Sized>(obj: &O, x0: &DVector<f64>, s: &OptimizerSettings) -> Result<Minimum> {
    let n = x0.len();
    let mut x = x0.clone();
    let (mut f, mut g) = obj.value_grad(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(MermError::NonFinite {
            what: "objective at the starting point".into(),
            row: 0,
        });
    }
    let seeded = obj
        .curvature(&x)
        .filter(|b| b.nrows() == n && b.ncols() == n)
        .and_then(|b| crate::linalg::inverse_spd(&b, "initial curvature").ok())
        .filter(|h| h.iter().all(|v| v.is_finite()));
    let mut fresh = seeded.is_none();
    let mut h = seeded.unwrap_or_else(|| DMatrix::<f64>::identity(n, n));
    let mut it = 0;
    while it < s.max_iter {
        if grad_ok(&g, f, s) {
            return Ok(Minimum {
                grad_norm: g.amax(),
                x,
                value: f,
                iterations: it,
                converged: true,
            });
        }
        it += 1;
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = -g.clone();
            slope = g.dot(&d);
        }
        // Armijo backtracking.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &d * alpha;
            let ft = finite_value(obj, &trial);
            if ft <= f + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, _)) = accepted else {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        let (fn_, gn) = match obj.value_grad(&xn) {
            Ok(v) if v.0.is_finite() && v.1.iter().all(|g| g.is_finite()) => v,
            _ => break,
        };
        let step = &xn - &x;
        let y = &gn - &g;
        let small_step = step.amax() <= s.step_tol * (1.0 + xn.amax());
        x = xn;
        f = fn_;
        g = gn;
        if small_step {
            break;
        }
        let sy = step.dot(&y);
        if sy > 1e-12 * step.norm() * y.norm() {
            if fresh {
                // Scale the initial inverse Hessian before the first update.
                h *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&step * step.transpose()) * (rho * rho * yhy + rho) - (&hy * step.transpose() + &step * hy.transpose()) * rho;
        }
    }
    Ok(Minimum {
        converged: grad_ok(&g, f, s),
        grad_norm: g.amax(),
        x,
        value: f,
        iterations: it,
    })
}

/// Nelder–Mead with the standard coefficients, started from a simplex of
/// relative size `scale` around `x0`.
pub fn nelder_mead<O: Objective + ?Sized>(obj: &O, x0: &DVector<f64>, scale: f64, max_iter: usize) -> Result<Minimum> {
    let n = x0.len();
    let mut pts = vec![x0.clone()];
    for j in 0..n {
        let mut p = x0.clone();
        p[j] += scale * x0[j].abs().max(1.0);
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| finite_value(obj, p)).collect();
    if !vals[0].is_finite() {
        return Err(MermError::NonFinite {
            what: "objective at the starting point".into(),
            row: 0,
        });
    }
    let mut it = 0;
    let mut converged = false;
    while it < max_iter {
        it += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        let size = pts.iter().skip(1).map(|p| (p - &pts[0]).amax()).fold(0.0, f64::max);
        if spread <= 1e-14 * (1.0 + vals[0].abs()) && size <= 1e-10 * (1.0 + pts[0].amax()) {
            converged = true;
            break;
        }
        let centroid = pts[..n].iter().fold(DVector::zeros(n), |a, p| a + p) / n as f64;
        let reflect = &centroid + (&centroid - &pts[n]);
        let fr = finite_value(obj, &reflect);
        if fr < vals[0] {
            let expand = &centroid + (&reflect - &centroid) * 2.0;
            let fe = finite_value(obj, &expand);
            if fe < fr {
                pts[n] = expand;
                vals[n] = fe;
            } else {
                pts[n] = reflect;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = reflect;
            vals[n] = fr;
        } else {
            let (target, ft) = if fr < vals[n] { (reflect, fr) } else { (pts[n].clone(), vals[n]) };
            let contract = &centroid + (&target - &centroid) * 0.5;
            let fc = finite_value(obj, &contract);
            if fc < ft {
                pts[n] = contract;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = &pts[0] + (&pts[i] - &pts[0]) * 0.5;
                    vals[i] = finite_value(obj, &pts[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    Ok(Minimum {
        x: pts[best].clone(),
        value: vals[best],
        grad_norm: f64::NAN,
        iterations: it,
        converged,
    })
}

/// BFGS, then — if it stalls short of the gradient test — a Nelder–Mead
/// restart followed by a second BFGS polish.
pub fn minimize<O: Objective + ?Sized>(obj: &O, x0: &DVector<f64>, s: &OptimizerSettings) -> Result<Minimum> {
    let first = bfgs(obj, x0, s)?;
    if first.converged {
        return Ok(first);
    }
    let nm = nelder_mead(obj, &first.x, 0.05, 200 * (x0.len() + 1))?;
    let start = if nm.value < first.value { nm.x } else { first.x.clone() };
    let second = bfgs(obj, &start, s)?;
    let iterations = first.iterations + nm.iterations + second.iterations;
    let best = if second.value <= first.value { second } else { first };
    Ok(Minimum { iterations, ..best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &DVector<f64>) -> Result<f64> {
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }
        fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]);
            Ok((self.value(x)?, g))
        }
    }

    struct Quadratic;

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            3
        }
        fn value(&self, x: &DVector<f64>) -> Result<f64> {
            Ok((x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + 0.1 * (x[2] - 3.0).powi(2))
        }
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let m = bfgs(&Rosenbrock, &DVector::from_vec(vec![-1.2, 1.0]), &OptimizerSettings::default()).unwrap();
        assert!(m.converged);
        assert_relative_eq!(m.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(m.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn numeric_gradients_suffice_for_quadratics() {
        let m = minimize(&Quadratic, &DVector::zeros(3), &OptimizerSettings::default()).unwrap();
        assert_relative_eq!(m.x, DVector::from_vec(vec![1.0, -2.0, 3.0]), epsilon = 1e-6);
    }

    #[test]
    fn nelder_mead_finds_the_valley() {
        let m = nelder_mead(&Rosenbrock, &DVector::from_vec(vec![-1.2, 1.0]), 0.1, 5000).unwrap();
        assert_relative_eq!(m.x[0], 1.0, epsilon = 1e-4);
        assert!(m.converged);
    }
}
