//! Quadratic running cost and the scalar metrics built on it.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, State};
use crate::{Error, Result};

/// Diagonal weights for `chi = (x, y, theta, v, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct CostMatrix([f64; 5]);

impl CostMatrix {
    pub fn new(diag: [f64; 5]) -> Result<Self> {
        if let Some((i, r)) = diag.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "cost weight r{} must be finite and > 0, got {r}",
                i + 1
            )));
        }
        Ok(Self(diag))
    }

    /// Skips validation; only for config resolution, which validates afterwards.
    pub(crate) fn from_raw(diag: [f64; 5]) -> Self {
        Self(diag)
    }

    pub fn identity() -> Self {
        Self([1.0; 5])
    }

    pub fn diag(&self) -> &[f64; 5] {
        &self.0
    }
}

impl Default for CostMatrix {
    /// Position error dominates, heading is weighted a decade lower and
    /// actuation lightly. A heading weight equal to the position weights
    /// makes short-horizon MPC settle beside the goal instead of reaching it.
    fn default() -> Self {
        Self([1.0, 1.0, 0.1, 0.001, 0.001])
    }
}

impl TryFrom<[f64; 5]> for CostMatrix {
    type Error = Error;

    fn try_from(diag: [f64; 5]) -> Result<Self> {
        Self::new(diag)
    }
}

impl From<CostMatrix> for [f64; 5] {
    fn from(r: CostMatrix) -> Self {
        r.0
    }
}

/// One logged control step, all quantities in the goal frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub time: f64,
    pub state: State,
    pub action: Action,
    pub cost: f64,
}

/// Stacked state/action vector `(x, y, theta, v, omega)`.
pub fn chi(s: &State, a: &Action) -> [f64; 5] {
    [s.x, s.y, s.theta, a.v, a.omega]
}

/// Unchecked `chi^T R chi`; callers guarantee finite inputs.
pub(crate) fn quadratic(s: &State, a: &Action, r: &CostMatrix) -> f64 {
    chi(s, a).iter().zip(r.0.iter()).map(|(c, w)| w * c * c).sum()
}

/// `rho = chi^T R chi`.
pub fn running_cost(s: &State, a: &Action, r: &CostMatrix) -> Result<f64> {
    if !s.is_finite() || !a.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite running-cost input {s:?}, {a:?}")));
    }
    Ok(quadratic(s, a, r))
}

/// `sum_i gamma^(i-1) c_i`; zero for an empty list.
pub fn discounted_sum(costs: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidConfig(format!("discount must lie in (0, 1], got {gamma}")));
    }
    let mut weight = 1.0;
    let mut total = 0.0;
    for c in costs {
        total += weight * c;
        weight *= gamma;
    }
    Ok(total)
}

/// Rectangle-rule time integral `delta * sum_k cost_k`, undiscounted.
pub fn accumulated_cost(log: &[StageRecord], delta: f64) -> f64 {
    delta * log.iter().map(|r| r.cost).sum::<f64>()
}
