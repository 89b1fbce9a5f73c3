//! Receding-horizon actors: MPC, rollout Q-learning and stacked Q-learning.
//!
//! All three optimize an action sequence of length `N` against states
//! predicted by the Euler model, apply the first action and hold it for one
//! sampling period. The Q-learning variants refit their critic before each
//! actor optimization.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{quadratic, CostMatrix};
use crate::critic::{features, update_critic, CriticSettings, CriticUpdate, CriticWeights, ReplayBuffer, Transition};
use crate::dynamics::{Action, ActionBounds, ActionSequence, State};
use crate::optimizer::{minimize_box, OptimizerSettings};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Mpc,
    Rql,
    Sql,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mpc, Method::Rql, Method::Sql];

    pub fn uses_critic(self) -> bool {
        !matches!(self, Method::Mpc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mpc => "MPC",
            Method::Rql => "RQL",
            Method::Sql => "SQL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MPC" => Ok(Method::Mpc),
            "RQL" => Ok(Method::Rql),
            "SQL" => Ok(Method::Sql),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

/// Everything a controller instance needs besides its learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub method: Method,
    /// Prediction horizon `N` in steps.
    pub horizon: usize,
    /// Sampling time [s].
    pub delta: f64,
    /// Discount of the MPC objective; the Q-learning actors ignore it.
    pub gamma: f64,
    pub cost: CostMatrix,
    /// Replay buffer size `M`; unused by MPC.
    pub buffer_size: usize,
    pub bounds: ActionBounds,
    pub optimizer: OptimizerSettings,
    pub critic: CriticSettings,
    /// Uniform warm-start jitter as a fraction of the action bounds; 0 disables it.
    pub init_jitter: f64,
}

impl ControllerSpec {
    pub fn new(method: Method, horizon: usize, delta: f64) -> Self {
        Self {
            method,
            horizon,
            delta,
            gamma: 1.0,
            cost: CostMatrix::default(),
            buffer_size: 20,
            bounds: ActionBounds::default(),
            optimizer: OptimizerSettings::default(),
            critic: CriticSettings::default(),
            init_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidConfig(format!("delta must be > 0, got {}", self.delta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.buffer_size == 0 {
            return Err(Error::InvalidConfig("buffer_size must be >= 1".into()));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter <= 1.0) {
            return Err(Error::InvalidConfig("init_jitter must lie in [0, 1]".into()));
        }
        CostMatrix::new(*self.cost.diag())?;
        self.bounds.validate()?;
        self.critic.validate()?;
        self.optimizer.validate()
    }

    /// Horizon duration `N * delta` [s].
    pub fn horizon_time(&self) -> f64 {
        self.horizon as f64 * self.delta
    }
}

fn check_len(seq: &ActionSequence, spec: &ControllerSpec) -> Result<()> {
    if seq.len() != spec.horizon {
        return Err(Error::InvalidInput(format!(
            "action sequence has length {}, horizon is {}",
            seq.len(),
            spec.horizon
        )));
    }
    Ok(())
}

/// Euler step without validation; the actors only call it with finite
/// states, bounded actions and a validated `delta`.
fn advance(s: &State, a: &Action, delta: f64) -> State {
    State::new(
        s.x + delta * a.v * s.theta.cos(),
        s.y + delta * a.v * s.theta.sin(),
        s.theta + delta * a.omega,
    )
}

/// Calls `stage(i, predicted_state, action)` along the Euler prediction.
fn along_prediction(s: &State, actions: &[Action], delta: f64, mut stage: impl FnMut(usize, &State, &Action)) {
    let mut current = *s;
    for (i, a) in actions.iter().enumerate() {
        stage(i, &current, a);
        current = advance(&current, a, delta);
    }
}

fn mpc_value(s: &State, actions: &[Action], spec: &ControllerSpec) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    along_prediction(s, actions, spec.delta, |_, x, u| {
        total += weight * quadratic(x, u, &spec.cost);
        weight *= spec.gamma;
    });
    total
}

fn rql_value(s: &State, actions: &[Action], w: &CriticWeights, spec: &ControllerSpec) -> f64 {
    let last = actions.len() - 1;
    let mut total = 0.0;
    along_prediction(s, actions, spec.delta, |i, x, u| {
        total += if i < last {
            quadratic(x, u, &spec.cost)
        } else {
            w.dot(&features(x, u))
        };
    });
    total
}

fn sql_value(s: &State, actions: &[Action], w: &CriticWeights, spec: &ControllerSpec) -> f64 {
    let mut total = 0.0;
    along_prediction(s, actions, spec.delta, |_, x, u| total += w.dot(&features(x, u)));
    total
}

fn check_state(s: &State) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite state {s:?}")));
    }
    Ok(())
}

/// `sum_{i=1}^{N} gamma^(i-1) rho(x_i, u_i)` with `x_1 = s`.
pub fn mpc_objective(s: &State, seq: &ActionSequence, spec: &ControllerSpec) -> Result<f64> {
    check_len(seq, spec)?;
    check_state(s)?;
    Ok(mpc_value(s, seq.actions(), spec))
}

/// Running costs over the first `N - 1` predicted stages plus the critic at stage `N`.
pub fn rql_objective(s: &State, seq: &ActionSequence, w: &CriticWeights, spec: &ControllerSpec) -> Result<f64> {
    check_len(seq, spec)?;
    check_state(s)?;
    Ok(rql_value(s, seq.actions(), w, spec))
}

/// Critic values summed over every predicted stage.
pub fn sql_objective(s: &State, seq: &ActionSequence, w: &CriticWeights, spec: &ControllerSpec) -> Result<f64> {
    check_len(seq, spec)?;
    check_state(s)?;
    Ok(sql_value(s, seq.actions(), w, spec))
}

/// The actor objective of `spec.method`.
pub fn objective(s: &State, seq: &ActionSequence, w: &CriticWeights, spec: &ControllerSpec) -> Result<f64> {
    match spec.method {
        Method::Mpc => mpc_objective(s, seq, spec),
        Method::Rql => rql_objective(s, seq, w, spec),
        Method::Sql => sql_objective(s, seq, w, spec),
    }
}

/// Outcome of one sequence optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult {
    pub argmin: ActionSequence,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Box-constrained minimization of `objective` over action sequences.
pub fn minimize_sequence<F>(
    mut objective: F,
    init: &ActionSequence,
    bounds: &ActionBounds,
    settings: &OptimizerSettings,
) -> Result<OptimizerResult>
where
    F: FnMut(&ActionSequence) -> f64,
{
    if !init.within(bounds) {
        return Err(Error::InvalidInput("initial sequence violates the action bounds".into()));
    }
    let (lower, upper) = bounds.flat_box(init.len());
    let m = minimize_box(
        |flat| match ActionSequence::from_flat(flat) {
            Ok(seq) => objective(&seq),
            Err(_) => f64::NAN,
        },
        &init.to_flat(),
        &lower,
        &upper,
        settings,
    )?;
    Ok(OptimizerResult {
        argmin: ActionSequence::from_flat(&m.x)?,
        value: m.value,
        evaluations: m.evaluations,
        converged: m.converged,
    })
}

/// Diagnostics of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub action: Action,
    pub objective: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// The optimizer failed and the previous action was reused.
    pub fallback: bool,
    pub critic: Option<CriticUpdate>,
}

/// A stateful receding-horizon controller.
#[derive(Debug, Clone)]
pub struct Controller {
    spec: ControllerSpec,
    weights: CriticWeights,
    buffer: ReplayBuffer,
    plan: ActionSequence,
    previous: Option<(State, Action)>,
    rng: ChaCha8Rng,
}

impl Controller {
    pub fn new(spec: ControllerSpec) -> Result<Self> {
        Self::with_seed(spec, 0)
    }

    /// `seed` only matters when warm-start jitter is enabled.
    pub fn with_seed(spec: ControllerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            buffer: ReplayBuffer::new(spec.buffer_size)?,
            plan: ActionSequence::constant(Action::ZERO, spec.horizon)?,
            weights: CriticWeights::ZERO,
            previous: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            spec,
        })
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    pub fn weights(&self) -> &CriticWeights {
        &self.weights
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// The sequence found at the last step.
    pub fn plan(&self) -> &ActionSequence {
        &self.plan
    }

    /// First action of the optimized sequence for the (goal-frame) state `s`.
    pub fn compute_action(&mut self, s: &State) -> Result<Action> {
        Ok(self.step(s)?.action)
    }

    /// One full control step: critic refit (Q-learning only), actor
    /// optimization warm-started from the shifted previous plan, and
    /// bookkeeping of the transition that ends at `s`.
    pub fn step(&mut self, s: &State) -> Result<StepInfo> {
        check_state(s)?;
        let critic = if self.spec.method.uses_critic() && self.buffer.len() >= 2 {
            match update_critic(&self.buffer, &self.weights, &self.spec.critic) {
                Ok(up) => {
                    self.weights = up.weights;
                    Some(up)
                }
                Err(e) => {
                    warn!("critic update failed, keeping previous weights: {e}");
                    None
                }
            }
        } else {
            None
        };

        let init = self.warm_start();
        let spec = &self.spec;
        let w = self.weights;
        let result = minimize_sequence(
            |seq| match spec.method {
                Method::Mpc => mpc_value(s, seq.actions(), spec),
                Method::Rql => rql_value(s, seq.actions(), &w, spec),
                Method::Sql => sql_value(s, seq.actions(), &w, spec),
            },
            &init,
            &spec.bounds,
            &spec.optimizer,
        );

        let info = match result {
            Ok(r) => {
                self.plan = r.argmin;
                StepInfo {
                    action: self.plan.first(),
                    objective: r.value,
                    evaluations: r.evaluations,
                    converged: r.converged,
                    fallback: false,
                    critic,
                }
            }
            Err(e) => {
                let held = self.previous.map(|(_, a)| a).unwrap_or(Action::ZERO);
                warn!("actor optimization failed, holding previous action: {e}");
                self.plan = ActionSequence::constant(held, self.spec.horizon)?;
                StepInfo {
                    action: held,
                    objective: f64::NAN,
                    evaluations: 0,
                    converged: false,
                    fallback: true,
                    critic,
                }
            }
        };

        if self.spec.method.uses_critic() {
            if let Some((prev_s, prev_a)) = self.previous {
                self.buffer
                    .push(Transition::observed(prev_s, prev_a, *s, info.action, &self.spec.cost)?);
            }
        }
        self.previous = Some((*s, info.action));
        Ok(info)
    }

    fn warm_start(&mut self) -> ActionSequence {
        let shifted = self.plan.shifted();
        if self.spec.init_jitter == 0.0 {
            return shifted;
        }
        let b = self.spec.bounds;
        let j = self.spec.init_jitter;
        let jittered: Vec<Action> = shifted
            .iter()
            .map(|a| {
                let dv = self.rng.random_range(-1.0..=1.0) * j * b.v_max;
                let dw = self.rng.random_range(-1.0..=1.0) * j * b.omega_max;
                b.clamp(Action::new(a.v + dv, a.omega + dw))
            })
            .collect();
        ActionSequence::new(jittered).expect("horizon >= 1")
    }
}
