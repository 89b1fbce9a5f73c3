//! Quadratic Q-function critic fitted by temporal-difference least squares
//! over an experience-replay buffer.

use std::collections::VecDeque;

use nalgebra::{DMatrix, Matrix5, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::costs::{chi, running_cost, CostMatrix};
use crate::dynamics::{Action, State};
use crate::{Error, Result};

/// Number of quadratic features of the 5-vector `(x, y, theta, v, omega)`.
pub const FEATURE_DIM: usize = 15;

/// Tikhonov weight of the critic least-squares problem.
pub const RIDGE: f64 = 1e-9;

/// Upper-triangular products `z_i z_j`, `i <= j`, of `z = (x, y, theta, v, omega)`,
/// row-major: `x², xy, xθ, xv, xω, y², yθ, …, ω²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

/// Critic parameters aligned with [`FeatureVector`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CriticWeights(pub [f64; FEATURE_DIM]);

/// One observed step `(s, a) -> s'` with the action applied next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub cost: f64,
    pub next_state: State,
    pub next_action: Action,
}

/// Bounded FIFO of the most recent transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

/// Result of one critic refit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticUpdate {
    pub weights: CriticWeights,
    /// Critic loss at the returned weights.
    pub loss: f64,
    /// Numerical rank of the feature matrix.
    pub rank: usize,
    /// The data did not determine all 15 weights; the free directions were
    /// left at their previous values.
    pub rank_deficient: bool,
}

/// Position of `z_i²` in the feature vector.
pub const fn square_index(i: usize) -> usize {
    // rows 0..i contribute 5, 4, 3, ... entries
    i * 5 - i * (i.saturating_sub(1)) / 2
}

pub fn features(s: &State, a: &Action) -> FeatureVector {
    let z = chi(s, a);
    let mut out = [0.0; FEATURE_DIM];
    let mut k = 0;
    for i in 0..5 {
        for j in i..5 {
            out[k] = z[i] * z[j];
            k += 1;
        }
    }
    FeatureVector(out)
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn as_svector(&self) -> SVector<f64, FEATURE_DIM> {
        SVector::from_column_slice(&self.0)
    }
}

impl CriticWeights {
    pub const ZERO: CriticWeights = CriticWeights([0.0; FEATURE_DIM]);

    pub fn from_slice(w: &[f64]) -> Result<Self> {
        let arr: [f64; FEATURE_DIM] = w.try_into().map_err(|_| {
            Error::InvalidInput(format!("expected {FEATURE_DIM} critic weights, got {}", w.len()))
        })?;
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite critic weight".into()));
        }
        Ok(Self(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Weights for which `Q(s, a)` equals the running cost `chi^T R chi`.
    pub fn from_running_cost(r: &CostMatrix) -> Self {
        let mut w = [0.0; FEATURE_DIM];
        for (i, ri) in r.diag().iter().enumerate() {
            w[square_index(i)] = *ri;
        }
        Self(w)
    }

    pub fn dot(&self, phi: &FeatureVector) -> f64 {
        self.0.iter().zip(phi.0.iter()).map(|(w, p)| w * p).sum()
    }

    fn as_svector(&self) -> SVector<f64, FEATURE_DIM> {
        SVector::from_column_slice(&self.0)
    }
}

/// `Q(s, a; w) = w · phi(s, a)`.
pub fn q_value(w: &CriticWeights, s: &State, a: &Action) -> f64 {
    w.dot(&features(s, a))
}

/// `Q(s, a; w) - Q(s', a'; w_prev) - cost`.
pub fn td_error(w: &CriticWeights, w_prev: &CriticWeights, t: &Transition) -> f64 {
    q_value(w, &t.state, &t.action) - q_value(w_prev, &t.next_state, &t.next_action) - t.cost
}

/// Half the sum of squared TD errors over the buffer.
pub fn critic_loss(w: &CriticWeights, w_prev: &CriticWeights, buf: &ReplayBuffer) -> Result<f64> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    Ok(0.5 * buf.iter().map(|t| td_error(w, w_prev, t).powi(2)).sum::<f64>())
}

/// Knobs of the critic refit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSettings {
    /// Weight of the proximal term `ridge/2 * |w - w_prev|²`.
    pub ridge: f64,
    /// Clip the eigenvalues of the fitted quadratic form at zero.
    pub project_psd: bool,
}

impl Default for CriticSettings {
    fn default() -> Self {
        Self {
            ridge: 1.0,
            project_psd: true,
        }
    }
}

impl CriticSettings {
    /// Plain least squares: vanishing ridge, no projection.
    pub fn least_squares() -> Self {
        Self {
            ridge: RIDGE,
            project_psd: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge.is_finite() && self.ridge > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "critic ridge must be finite and > 0, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Minimizer of [`critic_loss`] plus a proximal term, `w_prev` held fixed.
///
/// The TD error is affine in `w`, so this is a regularized linear
/// least-squares problem. The ridge pulls towards `w_prev`, which keeps
/// directions the buffer does not excite unchanged and guarantees the loss
/// never rises above its value at `w_prev`. With `project_psd` the result is
/// afterwards mapped to the nearest positive semidefinite quadratic form.
pub fn update_critic(
    buf: &ReplayBuffer,
    w_prev: &CriticWeights,
    settings: &CriticSettings,
) -> Result<CriticUpdate> {
    if buf.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    settings.validate()?;
    let rows = buf.len();
    let prev = w_prev.as_svector();
    let mut design = DMatrix::<f64>::zeros(rows, FEATURE_DIM);
    let mut gram = SMatrix::<f64, FEATURE_DIM, FEATURE_DIM>::zeros();
    let mut rhs = SVector::<f64, FEATURE_DIM>::zeros();
    for (r, t) in buf.iter().enumerate() {
        let phi = features(&t.state, &t.action).as_svector();
        let target = q_value(w_prev, &t.next_state, &t.next_action) + t.cost;
        // residual of the step w - w_prev
        let residual = target - phi.dot(&prev);
        gram += phi * phi.transpose();
        rhs += phi * residual;
        design.row_mut(r).copy_from(&phi.transpose());
    }
    for i in 0..FEATURE_DIM {
        gram[(i, i)] += settings.ridge;
    }
    let step = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("critic normal equations are not positive definite".into()))?
        .solve(&rhs);
    let mut next = CriticWeights([0.0; FEATURE_DIM]);
    for (dst, v) in next.0.iter_mut().zip((prev + step).iter()) {
        *dst = *v;
    }
    if next.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("critic update produced non-finite weights".into()));
    }
    if critic_loss(&next, w_prev, buf)? > critic_loss(w_prev, w_prev, buf)? {
        // only reachable through round-off
        next = *w_prev;
    }
    if settings.project_psd {
        next = project_psd(&next);
    }
    let rank = numerical_rank(design);
    Ok(CriticUpdate {
        weights: next,
        loss: critic_loss(&next, w_prev, buf)?,
        rank,
        rank_deficient: rank < FEATURE_DIM,
    })
}

/// Symmetric matrix `P` with `w · phi(s, a) = chi^T P chi`.
pub fn quadratic_form(w: &CriticWeights) -> Matrix5<f64> {
    let mut m = Matrix5::zeros();
    let mut k = 0;
    for i in 0..5 {
        for j in i..5 {
            if i == j {
                m[(i, i)] = w.0[k];
            } else {
                m[(i, j)] = 0.5 * w.0[k];
                m[(j, i)] = 0.5 * w.0[k];
            }
            k += 1;
        }
    }
    m
}

/// Inverse of [`quadratic_form`] for symmetric input.
pub fn from_quadratic_form(m: &Matrix5<f64>) -> CriticWeights {
    let mut out = [0.0; FEATURE_DIM];
    let mut k = 0;
    for i in 0..5 {
        for j in i..5 {
            out[k] = if i == j { m[(i, i)] } else { m[(i, j)] + m[(j, i)] };
            k += 1;
        }
    }
    CriticWeights(out)
}

/// Nearest (Frobenius) positive semidefinite critic: negative eigenvalues of
/// the quadratic form are set to zero.
pub fn project_psd(w: &CriticWeights) -> CriticWeights {
    let mut eig = SymmetricEigen::new(quadratic_form(w));
    if eig.eigenvalues.iter().all(|v| *v >= 0.0) {
        return *w;
    }
    for v in eig.eigenvalues.iter_mut() {
        *v = v.max(0.0);
    }
    from_quadratic_form(&eig.recompose())
}

fn numerical_rank(design: DMatrix<f64>) -> usize {
    let sv = design.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    let tol = max * 1e-10;
    sv.iter().filter(|s| **s > tol).count()
}

impl Transition {
    /// Builds a transition whose cost is the running cost of `(state, action)`.
    pub fn observed(
        state: State,
        action: Action,
        next_state: State,
        next_action: Action,
        r: &CostMatrix,
    ) -> Result<Self> {
        Ok(Self {
            state,
            action,
            cost: running_cost(&state, &action, r)?,
            next_state,
            next_action,
        })
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay buffer size must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        })
    }

    /// Appends `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

impl FromIterator<Transition> for ReplayBuffer {
    /// A buffer sized exactly to the collected transitions.
    fn from_iter<I: IntoIterator<Item = Transition>>(iter: I) -> Self {
        let items: VecDeque<Transition> = iter.into_iter().collect();
        Self {
            capacity: items.len().max(1),
            items,
        }
    }
}
