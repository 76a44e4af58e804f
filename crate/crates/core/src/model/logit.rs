//! Conditional logit choice probabilities with x-jets, and the moment function
//! `((1{y=j} − p_j) φ_j)_j` built from them.
//!
//! Utilities are linear in θ and in the mismeasured `x`:
//! `a_k = Σ_l θ_l (c_kl + d_kl x)`, where `c` and `d` depend on the side
//! variables only. Writing `b_k = ∂a_k/∂x`, `E_k = e^{a_k}` and
//! `S^{(i)} = Σ_k b_k^i E_k`, the probabilities `p_k = E_k r` with `r = 1/S`
//! have derivatives `p_k^{(n)} = Σ_i C(n,i) b_k^i E_k r^{(n−i)}`, where `r`'s
//! derivatives follow from `r·S = 1`.

use std::sync::Arc;

use super::dataset::{Dataset, Observation, SideColumn};
use super::moment::MomentFunction;
use super::multi_index::{binomial, MultiIndex};
use super::residual::Instruments;
use crate::error::{MermError, Result};

/// Fills the utility design `c` and `d` (both row-major `alternatives x dim_theta`).
pub type UtilityDesign = dyn Fn(&[f64], &mut [f64], &mut [f64]) + Send + Sync;

/// Probability jet of a linear-in-parameters logit.
///
/// `prob` receives `p_k^{(n)}` at `n * alts + k` for `n = 0..=kmax`; `dprob`,
/// when given, receives `∂_{θ_l} p_k^{(n)}` at `(n * alts + k) * dim + l`.
pub fn logit_jet(
    c: &[f64],
    d: &[f64],
    alts: usize,
    x: f64,
    theta: &[f64],
    kmax: usize,
    prob: &mut [f64],
    dprob: Option<&mut [f64]>,
) {
    let dim = theta.len();
    let mut a = vec![0.0; alts];
    let mut b = vec![0.0; alts];
    for k in 0..alts {
        for l in 0..dim {
            a[k] += theta[l] * (c[k * dim + l] + d[k * dim + l] * x);
            b[k] += theta[l] * d[k * dim + l];
        }
    }
    let amax = a.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let e: Vec<f64> = a.iter().map(|v| (v - amax).exp()).collect();
    let mut s = vec![0.0; kmax + 1];
    for (i, si) in s.iter_mut().enumerate() {
        *si = (0..alts).map(|k| b[k].powi(i as i32) * e[k]).sum();
    }
    let mut r = vec![0.0; kmax + 1];
    r[0] = 1.0 / s[0];
    for n in 1..=kmax {
        let acc: f64 = (1..=n).map(|i| binomial(n, i) * s[i] * r[n - i]).sum();
        r[n] = -r[0] * acc;
    }
    for n in 0..=kmax {
        for k in 0..alts {
            prob[n * alts + k] = (0..=n)
                .map(|i| binomial(n, i) * b[k].powi(i as i32) * e[k] * r[n - i])
                .sum();
        }
    }
    let Some(dp) = dprob else { return };
    // T_l^{(m)} = Σ_k (p_k^{(m)} t_kl + m p_k^{(m−1)} d_kl) with t_kl = c_kl + d_kl x
    let mut big_t = vec![0.0; (kmax + 1) * dim];
    for m in 0..=kmax {
        for l in 0..dim {
            let mut acc = 0.0;
            for k in 0..alts {
                let t = c[k * dim + l] + d[k * dim + l] * x;
                acc += prob[m * alts + k] * t;
                if m > 0 {
                    acc += m as f64 * prob[(m - 1) * alts + k] * d[k * dim + l];
                }
            }
            big_t[m * dim + l] = acc;
        }
    }
    for n in 0..=kmax {
        for j in 0..alts {
            for l in 0..dim {
                let mut acc = 0.0;
                for i in 0..=n {
                    let m = n - i;
                    let e_jl = match m {
                        0 => c[j * dim + l] + d[j * dim + l] * x - big_t[l],
                        1 => d[j * dim + l] - big_t[dim + l],
                        _ => -big_t[m * dim + l],
                    };
                    acc += binomial(n, i) * prob[i * alts + j] * e_jl;
                }
                dp[(n * alts + j) * dim + l] = acc;
            }
        }
    }
}

/// Conditional logit with per-alternative instrument blocks.
#[derive(Clone)]
pub struct ConditionalLogit {
    alts: usize,
    dim_theta: usize,
    design: Arc<UtilityDesign>,
    y: SideColumn,
    blocks: Vec<(usize, Arc<dyn Instruments>)>,
}

impl std::fmt::Debug for ConditionalLogit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConditionalLogit")
            .field("alternatives", &self.alts)
            .field("dim_theta", &self.dim_theta)
            .field("blocks", &self.blocks.iter().map(|b| b.0).collect::<Vec<_>>())
            .finish()
    }
}

impl ConditionalLogit {
    /// `y` names the side column holding the chosen alternative index
    /// `0..alternatives`; `blocks` pairs each moment block's alternative with
    /// its instruments.
    pub fn new(
        alternatives: usize,
        dim_theta: usize,
        design: Arc<UtilityDesign>,
        side_names: &[String],
        y: &str,
        blocks: Vec<(usize, Arc<dyn Instruments>)>,
    ) -> Result<Self> {
        if alternatives < 2 {
            return Err(MermError::invalid("a logit needs at least two alternatives"));
        }
        if let Some((j, _)) = blocks.iter().find(|(j, _)| *j >= alternatives) {
            return Err(MermError::invalid(format!("moment block refers to alternative {j}")));
        }
        Ok(Self {
            alts: alternatives,
            dim_theta,
            design,
            y: SideColumn::resolve(side_names, y)?,
            blocks,
        })
    }

    pub fn alternatives(&self) -> usize {
        self.alts
    }

    /// Utility design `(c, d)` at side variables `s`.
    pub fn design_at(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut c = vec![0.0; self.alts * self.dim_theta];
        let mut d = vec![0.0; self.alts * self.dim_theta];
        (self.design)(s, &mut c, &mut d);
        (c, d)
    }

    /// Probability jet at `(x, s)`; layouts as in [`logit_jet`].
    pub fn probabilities(&self, x: f64, s: &[f64], theta: &[f64], kmax: usize, prob: &mut [f64], dprob: Option<&mut [f64]>) {
        let (c, d) = self.design_at(s);
        logit_jet(&c, &d, self.alts, x, theta, kmax, prob, dprob);
    }

    /// Chosen alternative of an observation.
    pub fn choice(&self, obs: &Observation<'_>) -> usize {
        self.y.get(obs).round() as usize
    }

    /// Log-likelihood contribution, score and minus the Hessian of one observation.
    pub fn loglik_parts(&self, obs: &Observation<'_>, theta: &[f64], score: &mut [f64], info: &mut [f64]) -> f64 {
        let dim = self.dim_theta;
        let (c, d) = self.design_at(obs.s);
        let mut p = vec![0.0; self.alts];
        logit_jet(&c, &d, self.alts, obs.x0(), theta, 0, &mut p, None);
        let y = self.choice(obs);
        let x = obs.x0();
        let t = |k: usize, l: usize| c[k * dim + l] + d[k * dim + l] * x;
        let mean: Vec<f64> = (0..dim).map(|l| (0..self.alts).map(|k| p[k] * t(k, l)).sum()).collect();
        for l in 0..dim {
            score[l] = t(y, l) - mean[l];
        }
        info.fill(0.0);
        for k in 0..self.alts {
            for l in 0..dim {
                let dl = t(k, l) - mean[l];
                for r in 0..dim {
                    info[l * dim + r] += p[k] * dl * (t(k, r) - mean[r]);
                }
            }
        }
        p[y.min(self.alts - 1)].max(f64::MIN_POSITIVE).ln()
    }

    fn kmax(kappas: &[MultiIndex]) -> Result<usize> {
        kappas.iter().try_fold(0, |acc, k| {
            if k.dim() != 1 {
                return Err(MermError::dim("multi-index", 1, k.dim()));
            }
            Ok(acc.max(k.order()))
        })
    }
}

impl MomentFunction for ConditionalLogit {
    fn m(&self) -> usize {
        self.blocks.iter().map(|(_, b)| b.len()).sum()
    }

    fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.d() != 1 {
            return Err(MermError::dim("mismeasured coordinates", 1, data.d()));
        }
        self.y.check(data)?;
        self.blocks.iter().try_for_each(|(_, b)| b.check_data(data))
    }

    fn value(&self, obs: &Observation<'_>, theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.x_derivatives(obs, theta, &[MultiIndex::scalar(0)], out)
    }

    fn x_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        let kmax = Self::kmax(kappas)?;
        let m = self.m();
        let mut prob = vec![0.0; (kmax + 1) * self.alts];
        self.probabilities(obs.x0(), obs.s, theta, kmax, &mut prob, None);
        let y = self.choice(obs);
        let mut offset = 0;
        for (j, inst) in &self.blocks {
            let len = inst.len();
            let mut phi = vec![0.0; (kmax + 1) * len];
            inst.jet(obs, kmax, &mut phi);
            let u = |n: usize| {
                let indicator = if n == 0 && y == *j { 1.0 } else { 0.0 };
                indicator - prob[n * self.alts + j]
            };
            for (idx, kappa) in kappas.iter().enumerate() {
                let k = kappa.order();
                let block = &mut out[idx * m + offset..idx * m + offset + len];
                block.fill(0.0);
                for i in 0..=k {
                    let coef = binomial(k, i) * u(i);
                    for (o, f) in block.iter_mut().zip(&phi[(k - i) * len..(k - i + 1) * len]) {
                        *o += coef * f;
                    }
                }
            }
            offset += len;
        }
        Ok(())
    }

    fn theta_derivatives(&self, obs: &Observation<'_>, theta: &[f64], kappas: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        let kmax = Self::kmax(kappas)?;
        let m = self.m();
        let p = self.dim_theta;
        let mut prob = vec![0.0; (kmax + 1) * self.alts];
        let mut dprob = vec![0.0; (kmax + 1) * self.alts * p];
        self.probabilities(obs.x0(), obs.s, theta, kmax, &mut prob, Some(&mut dprob));
        let mut offset = 0;
        for (j, inst) in &self.blocks {
            let len = inst.len();
            let mut phi = vec![0.0; (kmax + 1) * len];
            inst.jet(obs, kmax, &mut phi);
            for (idx, kappa) in kappas.iter().enumerate() {
                let k = kappa.order();
                let base = idx * m * p;
                for r in 0..len {
                    for l in 0..p {
                        let mut acc = 0.0;
                        for i in 0..=k {
                            acc -= binomial(k, i) * dprob[(i * self.alts + j) * p + l] * phi[(k - i) * len + r];
                        }
                        out[base + (offset + r) * p + l] = acc;
                    }
                }
            }
            offset += len;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::basis::{BasisKind, InstrumentBasis};
    use crate::model::moment::{numeric_theta_derivatives, numeric_x_derivatives};
    use crate::model::residual::PolynomialInstruments;
    use approx::assert_relative_eq;

    fn three_choice() -> ConditionalLogit {
        let side: Vec<String> = ["y", "z", "w1", "w2"].iter().map(|s| s.to_string()).collect();
        let design: Arc<UtilityDesign> = Arc::new(|s: &[f64], c: &mut [f64], d: &mut [f64]| {
            c.fill(0.0);
            d.fill(0.0);
            for j in 1..3 {
                let row = j * 6;
                let off = (j - 1) * 3;
                d[row + off] = 1.0;
                c[row + off + 1] = s[1 + j];
                c[row + off + 2] = 1.0;
            }
        });
        let blocks = (1..3)
            .map(|j| {
                let w = format!("w{j}");
                let inst = PolynomialInstruments::new(InstrumentBasis::new(BasisKind::K4), &side, "z", &[w.as_str()]).unwrap();
                (j, Arc::new(inst) as Arc<dyn Instruments>)
            })
            .collect();
        ConditionalLogit::new(3, 6, design, &side, "y", blocks).unwrap()
    }

    #[test]
    fn marginal_effects_at_the_origin() {
        let model = three_choice();
        let theta = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut prob = vec![0.0; 6];
        model.probabilities(0.0, &[0.0, 0.0, 0.0, 0.0], &theta, 1, &mut prob, None);
        for k in 0..3 {
            assert_relative_eq!(prob[k], 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_relative_eq!(prob[3], -1.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(prob[4], 2.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(prob[5], -1.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn jets_match_finite_differences() {
        let model = three_choice();
        let theta = [0.8, 0.3, -0.2, -0.4, 0.5, 0.1];
        let s = [2.0, 0.3, -0.6, 1.1];
        let x = [0.45];
        let obs = Observation { x: &x, s: &s };
        let kappas: Vec<MultiIndex> = (0..=4).map(MultiIndex::scalar).collect();
        let m = model.m();
        assert_eq!(m, 22);
        let mut a = vec![0.0; 5 * m];
        let mut b = vec![0.0; 5 * m];
        model.x_derivatives(&obs, &theta, &kappas, &mut a).unwrap();
        numeric_x_derivatives(&model, &obs, &theta, &kappas, &mut b).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()), "{u} vs {v}");
        }
        let mut ja = vec![0.0; 5 * m * 6];
        let mut jb = vec![0.0; 5 * m * 6];
        model.theta_derivatives(&obs, &theta, &kappas, &mut ja).unwrap();
        numeric_theta_derivatives(&model, &obs, &theta, &kappas, &mut jb).unwrap();
        for (u, v) in ja.iter().zip(&jb) {
            assert!((u - v).abs() <= 1e-5 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }

    #[test]
    fn score_is_gradient_of_loglik() {
        let model = three_choice();
        let theta = [0.8, 0.3, -0.2, -0.4, 0.5, 0.1];
        let s = [1.0, 0.3, -0.6, 1.1];
        let x = [0.45];
        let obs = Observation { x: &x, s: &s };
        let mut score = vec![0.0; 6];
        let mut info = vec![0.0; 36];
        model.loglik_parts(&obs, &theta, &mut score, &mut info);
        let h = 1e-6;
        for l in 0..6 {
            let mut tp = theta;
            tp[l] += h;
            let mut tm = theta;
            tm[l] -= h;
            let mut tmp = vec![0.0; 6];
            let mut ti = vec![0.0; 36];
            let fp = model.loglik_parts(&obs, &tp, &mut tmp, &mut ti);
            let fm = model.loglik_parts(&obs, &tm, &mut tmp, &mut ti);
            assert_relative_eq!(score[l], (fp - fm) / (2.0 * h), epsilon = 1e-7);
        }
    }
}
