//! Derivative-free Nelder-Mead search inside a box.
//!
//! Trial points are projected onto the box before evaluation, so every
//! evaluated point is feasible. Coefficients follow the dimension-adaptive
//! choice of Gao and Han, which behaves far better than the textbook values
//! once the problem has more than a handful of variables.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    /// Evaluation budget per variable; the total budget is this times the dimension.
    pub evals_per_dim: usize,
    /// Relative tolerance on both the simplex value spread and its size.
    pub tolerance: f64,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        // at N = 12 a smaller budget stops measurably short of the optimum;
        // this one still costs only a few milliseconds per control step
        Self {
            evals_per_dim: 1000,
            tolerance: 1e-4,
            initial_step: 0.1,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.evals_per_dim == 0 {
            return Err(Error::InvalidConfig("optimizer.evals_per_dim must be >= 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("optimizer.tolerance must be > 0".into()));
        }
        if !(self.initial_step > 0.0 && self.initial_step <= 1.0) {
            return Err(Error::InvalidConfig("optimizer.initial_step must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

struct Boxed<'a, F> {
    f: F,
    lower: &'a [f64],
    upper: &'a [f64],
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Boxed<'_, F> {
    fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.evaluations += 1;
        let v = (self.f)(x);
        if !v.is_finite() {
            return Err(Error::Optimizer(format!(
                "objective returned {v} after {} evaluations at {x:?}",
                self.evaluations
            )));
        }
        Ok(v)
    }
}

/// Minimizes `f` over the box `[lower, upper]` starting from `init`.
///
/// The returned value is never worse than `f(init)`.
pub fn minimize_box<F>(
    f: F,
    init: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &OptimizerSettings,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = init.len();
    if n == 0 || lower.len() != n || upper.len() != n {
        return Err(Error::InvalidInput("optimizer dimensions do not agree".into()));
    }
    if lower.iter().zip(upper).any(|(lo, hi)| lo.partial_cmp(hi).is_none_or(|o| o.is_gt())) {
        return Err(Error::InvalidInput("empty optimization box".into()));
    }
    if init.iter().zip(lower.iter().zip(upper)).any(|(x, (lo, hi))| !(x >= lo && x <= hi)) {
        return Err(Error::InvalidInput("initial point outside the box".into()));
    }
    let budget = settings.evals_per_dim * n;
    let tol = settings.tolerance;
    let widths: Vec<f64> = lower.iter().zip(upper).map(|(lo, hi)| hi - lo).collect();
    let mut obj = Boxed {
        f,
        lower,
        upper,
        evaluations: 0,
    };

    let nf = n as f64;
    let (alpha, beta, gamma, sigma) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((init.to_vec(), obj.eval(init)?));
    for i in 0..n {
        let mut x = init.to_vec();
        let step = settings.initial_step * widths[i];
        x[i] = if x[i] + step <= upper[i] { x[i] + step } else { x[i] - step };
        obj.project(&mut x);
        let v = obj.eval(&x)?;
        simplex.push((x, v));
    }

    let mut converged = false;
    loop {
        // stable sort keeps the incumbent first among ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread_ok = worst - best <= tol * best.abs() + 1e-12;
        let size_ok = simplex[1..].iter().all(|(x, _)| {
            x.iter()
                .zip(&simplex[0].0)
                .zip(&widths)
                .all(|((a, b), w)| (a - b).abs() <= tol * w.max(1e-12))
        });
        if spread_ok && (size_ok || worst == best) {
            converged = true;
            break;
        }
        if obj.evaluations >= budget {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let mut xr = along(alpha);
        obj.project(&mut xr);
        let fr = obj.eval(&xr)?;
        if fr < simplex[0].1 {
            let mut xe = along(alpha * beta);
            obj.project(&mut xe);
            let fe = obj.eval(&xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (mut xc, outside) = if fr < simplex[n].1 {
            (along(alpha * gamma), true)
        } else {
            (along(-gamma), false)
        };
        obj.project(&mut xc);
        let fc = obj.eval(&xc)?;
        if (outside && fc <= fr) || (!outside && fc < simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let head = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = head
                .iter()
                .zip(&vertex.0)
                .map(|(b, xi)| b + sigma * (xi - b))
                .collect();
            obj.project(&mut x);
            let v = obj.eval(&x)?;
            *vertex = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Ok(Minimum {
        x,
        value,
        evaluations: obj.evaluations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_quadratic_minimum() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1] * x[1] + 0.5 * x[0] * x[1];
        let settings = OptimizerSettings {
            evals_per_dim: 500,
            ..Default::default()
        };
        let m = minimize_box(f, &[1.0, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &settings).unwrap();
        assert!(m.x[0].abs() < 1e-4 && m.x[1].abs() < 1e-4, "{m:?}");
        assert!(m.converged);
    }

    #[test]
    fn constant_objective_returns_init() {
        let m = minimize_box(|_| 7.0, &[0.3, -0.1], &[-1.0; 2], &[1.0; 2], &Default::default()).unwrap();
        assert_eq!(m.x, vec![0.3, -0.1]);
        assert_eq!(m.value, 7.0);
        assert!(m.converged);
    }

    #[test]
    fn minimum_on_bound_face() {
        // unconstrained minimum at (3, 0.25); the box caps x at 1
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] - 0.25).powi(2);
        let settings = OptimizerSettings {
            evals_per_dim: 500,
            ..Default::default()
        };
        let m = minimize_box(f, &[0.0, 0.0], &[-1.0; 2], &[1.0; 2], &settings).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{m:?}");
        assert!((m.x[1] - 0.25).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn never_worse_than_init_and_stays_feasible() {
        let rosen = |x: &[f64]| {
            x.windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum::<f64>()
        };
        let init = [0.5, -0.5, 0.2, 0.1];
        let (lo, hi) = ([-0.6; 4], [0.6; 4]);
        let settings = OptimizerSettings {
            evals_per_dim: 100,
            ..Default::default()
        };
        let m = minimize_box(rosen, &init, &lo, &hi, &settings).unwrap();
        assert!(m.value <= rosen(&init));
        assert!(m.x.iter().all(|x| (-0.6..=0.6).contains(x)));
        assert!(m.evaluations <= 400 + 2 * 4 + 2);
    }

    #[test]
    fn non_finite_objective_aborts() {
        let r = minimize_box(|x| if x[0] > 0.05 { f64::NAN } else { x[0] }, &[0.0], &[-1.0], &[1.0], &Default::default());
        assert!(matches!(r, Err(Error::Optimizer(_))));
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| (x[0] - 0.1).powi(2) + (x[1] + 0.2).powi(4) + x[2].cos();
        let a = minimize_box(f, &[0.0; 3], &[-1.0; 3], &[1.0; 3], &Default::default()).unwrap();
        let b = minimize_box(f, &[0.0; 3], &[-1.0; 3], &[1.0; 3], &Default::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_infeasible_init() {
        assert!(minimize_box(|x| x[0], &[2.0], &[-1.0], &[1.0], &Default::default()).is_err());
    }
}
