//! Expression plugin: `ρ(x, w, θ)` and effect functions written as formulas.
//!
//! Formulas may use `x`, the side roles of the data (`y`, `w1`, …, `z`, `q`),
//! the parameters `theta1..thetap` and the built-in functions of `meval`
//! (`exp`, `ln`, `sqrt`, `sin`, `abs`, `max`, …).

use std::sync::Arc;

use merm::model::ClosureRegression;
use meval::{ContextProvider, Expr};

/// Variables bound by name for one evaluation.
struct Bindings<'a> {
    x: f64,
    side_names: &'a [String],
    side: &'a [f64],
    theta: &'a [f64],
}

impl ContextProvider for Bindings<'_> {
    fn get_var(&self, name: &str) -> Option<f64> {
        if name == "x" || name == "x1" {
            return Some(self.x);
        }
        if let Some(j) = name.strip_prefix("theta").and_then(|k| k.parse::<usize>().ok()) {
            return j.checked_sub(1).and_then(|i| self.theta.get(i)).copied();
        }
        self.side_names.iter().position(|s| s == name).map(|i| self.side[i])
    }
}

/// A parsed formula together with the variables it may reference.
#[derive(Clone)]
pub struct Formula {
    expr: Arc<Expr>,
    side_names: Arc<Vec<String>>,
}

impl Formula {
    /// Parses `text` and checks that every variable resolves for a model
    /// with `dim_theta` parameters and the given side roles.
    pub fn parse(text: &str, side_names: &[String], dim_theta: usize) -> Result<Self, String> {
        let expr: Expr = text.parse().map_err(|e| format!("cannot parse formula '{text}': {e}"))?;
        let f = Self {
            expr: Arc::new(expr),
            side_names: Arc::new(side_names.to_vec()),
        };
        let side = vec![0.5; side_names.len()];
        let theta = vec![0.5; dim_theta];
        f.eval(0.5, &side, &theta).map_err(|e| format!("formula '{text}': {e}"))?;
        Ok(f)
    }

    pub fn eval(&self, x: f64, side: &[f64], theta: &[f64]) -> Result<f64, String> {
        let b = Bindings {
            x,
            side_names: &self.side_names,
            side,
            theta,
        };
        self.expr
            .eval_with_context((b, meval::Context::new()))
            .map_err(|e| e.to_string())
    }

    /// The formula as a regression function; derivatives by finite differences.
    pub fn into_regression(self, dim_theta: usize) -> ClosureRegression {
        ClosureRegression::new(dim_theta, move |x, s, theta| self.eval(x, s, theta).unwrap_or(f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["y".into(), "z".into()]
    }

    #[test]
    fn binds_x_sides_and_parameters() {
        let f = Formula::parse("theta1 + theta2 * exp(x) + z", &names(), 2).unwrap();
        let v = f.eval(0.0, &[9.0, 3.0], &[1.0, 2.0]).unwrap();
        assert_eq!(v, 1.0 + 2.0 + 3.0);
    }

    #[test]
    fn rejects_unknown_variables_and_parameters() {
        assert!(Formula::parse("theta1 * u", &names(), 1).is_err());
        assert!(Formula::parse("theta3 * x", &names(), 2).is_err());
        assert!(Formula::parse("theta1 * (x", &names(), 1).is_err());
    }
}
