//! Unicycle kinematics of a differential-drive robot, one-step integrators,
//! horizon prediction and the world-to-goal frame change.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Robot configuration `(x, y, theta)`. Heading is stored unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Time derivative of a [`State`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

/// Control input: linear velocity `v` [m/s] and angular velocity `omega` [rad/s].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub v: f64,
    pub omega: f64,
}

/// Symmetric box bounds on an [`Action`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBounds {
    pub v_max: f64,
    pub omega_max: f64,
}

/// Which frame a [`Pose`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    World,
    Goal,
}

/// A [`State`] tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub state: State,
    pub frame: Frame,
}

/// Ordered action plan over a prediction horizon; never empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionSequence(Vec<Action>);

/// Maps an angle to `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

impl State {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    /// Euclidean distance of `(x, y)` from the origin.
    pub fn distance(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Same state with heading wrapped to `(-pi, pi]`.
    pub fn normalized(&self) -> Self {
        Self::new(self.x, self.y, normalize_angle(self.theta))
    }

    fn offset(&self, d: &StateDerivative, h: f64) -> Self {
        Self::new(self.x + h * d.dx, self.y + h * d.dy, self.theta + h * d.dtheta)
    }
}

impl Action {
    pub const ZERO: Action = Action { v: 0.0, omega: 0.0 };

    pub const fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }
}

impl Default for ActionBounds {
    /// Hardware limits of a TurtleBot3-class robot.
    fn default() -> Self {
        Self {
            v_max: 0.22,
            omega_max: 2.48,
        }
    }
}

impl ActionBounds {
    pub fn new(v_max: f64, omega_max: f64) -> Result<Self> {
        let bounds = Self { v_max, omega_max };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(Error::InvalidConfig(format!("v_max must be > 0, got {}", self.v_max)));
        }
        if !(self.omega_max.is_finite() && self.omega_max > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "omega_max must be > 0, got {}",
                self.omega_max
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, a: Action) -> Action {
        Action::new(
            a.v.clamp(-self.v_max, self.v_max),
            a.omega.clamp(-self.omega_max, self.omega_max),
        )
    }

    pub fn contains(&self, a: &Action) -> bool {
        a.v.abs() <= self.v_max && a.omega.abs() <= self.omega_max
    }

    /// Lower and upper bounds of a flattened `[v1, w1, v2, w2, ...]` vector.
    pub fn flat_box(&self, horizon: usize) -> (Vec<f64>, Vec<f64>) {
        let upper: Vec<f64> = (0..horizon).flat_map(|_| [self.v_max, self.omega_max]).collect();
        let lower = upper.iter().map(|u| -u).collect();
        (lower, upper)
    }
}

impl Pose {
    pub const fn world(state: State) -> Self {
        Self {
            state,
            frame: Frame::World,
        }
    }

    pub const fn goal(state: State) -> Self {
        Self {
            state,
            frame: Frame::Goal,
        }
    }
}

impl ActionSequence {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidInput("action sequence must not be empty".into()));
        }
        Ok(Self(actions))
    }

    /// `horizon` copies of the same action.
    pub fn constant(action: Action, horizon: usize) -> Result<Self> {
        Self::new(vec![action; horizon])
    }

    /// Builds a sequence from `[v1, w1, v2, w2, ...]`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "flat action vector has odd length {}",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(2).map(|c| Action::new(c[0], c[1])).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|a| [a.v, a.omega]).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Action {
        self.0[0]
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Action> {
        self.0.iter()
    }

    /// Drops the first action and repeats the last one, keeping the length.
    pub fn shifted(&self) -> Self {
        let mut next: Vec<Action> = self.0[1..].to_vec();
        next.push(*self.0.last().expect("non-empty"));
        Self(next)
    }

    pub fn clamped(&self, bounds: &ActionBounds) -> Self {
        Self(self.0.iter().map(|a| bounds.clamp(*a)).collect())
    }

    pub fn within(&self, bounds: &ActionBounds) -> bool {
        self.0.iter().all(|a| bounds.contains(a))
    }
}

fn check_finite(s: &State, a: &Action) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite state {s:?}")));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite action {a:?}")));
    }
    Ok(())
}

fn check_step(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidConfig(format!("sampling time must be > 0, got {delta}")));
    }
    Ok(())
}

fn unicycle(s: &State, a: &Action) -> StateDerivative {
    StateDerivative {
        dx: a.v * s.theta.cos(),
        dy: a.v * s.theta.sin(),
        dtheta: a.omega,
    }
}

/// Unicycle vector field `(v cos theta, v sin theta, omega)`.
pub fn derivative(s: &State, a: &Action) -> Result<StateDerivative> {
    check_finite(s, a)?;
    Ok(unicycle(s, a))
}

/// Explicit Euler step `s + delta * f(s, a)`.
pub fn euler_step(s: &State, a: &Action, delta: f64) -> Result<State> {
    check_step(delta)?;
    check_finite(s, a)?;
    Ok(s.offset(&unicycle(s, a), delta))
}

/// Classical fourth-order Runge-Kutta step with the action held constant.
pub fn rk4_step(s: &State, a: &Action, delta: f64) -> Result<State> {
    check_step(delta)?;
    check_finite(s, a)?;
    let k1 = unicycle(s, a);
    let k2 = unicycle(&s.offset(&k1, delta / 2.0), a);
    let k3 = unicycle(&s.offset(&k2, delta / 2.0), a);
    let k4 = unicycle(&s.offset(&k3, delta), a);
    Ok(State::new(
        s.x + delta / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx),
        s.y + delta / 6.0 * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy),
        s.theta + delta / 6.0 * (k1.dtheta + 2.0 * k2.dtheta + 2.0 * k3.dtheta + k4.dtheta),
    ))
}

/// `substeps` RK4 steps of size `delta / substeps`.
pub fn rk4_fine(s: &State, a: &Action, delta: f64, substeps: usize) -> Result<State> {
    check_step(delta)?;
    let substeps = substeps.max(1);
    let h = delta / substeps as f64;
    (0..substeps).try_fold(*s, |acc, _| rk4_step(&acc, a, h))
}

/// Predicted states along `seq`: the first element is `s0` itself and
/// element `i + 1` is the Euler successor of element `i` under action `i`.
/// The output has the same length as `seq`.
pub fn rollout(s0: &State, seq: &ActionSequence, delta: f64) -> Result<Vec<State>> {
    check_step(delta)?;
    let mut states = Vec::with_capacity(seq.len());
    let mut current = *s0;
    for (i, a) in seq.iter().enumerate() {
        states.push(current);
        if i + 1 < seq.len() {
            current = euler_step(&current, a, delta)?;
        }
    }
    Ok(states)
}

/// Expresses a world-frame robot pose in the frame attached to the goal,
/// so that `robot == goal` maps to the zero state.
pub fn to_goal_frame(robot: &Pose, goal: &Pose) -> Result<Pose> {
    if robot.frame != Frame::World || goal.frame != Frame::World {
        return Err(Error::InvalidInput("both poses must be in the world frame".into()));
    }
    let (r, g) = (robot.state, goal.state);
    if !r.is_finite() || !g.is_finite() {
        return Err(Error::InvalidInput("non-finite pose".into()));
    }
    let (sin_g, cos_g) = g.theta.sin_cos();
    let (dx, dy) = (r.x - g.x, r.y - g.y);
    Ok(Pose::goal(State::new(
        cos_g * dx + sin_g * dy,
        -sin_g * dx + cos_g * dy,
        normalize_angle(r.theta - g.theta),
    )))
}

/// Inverse of [`to_goal_frame`]; the returned heading is wrapped.
pub fn from_goal_frame(local: &Pose, goal: &Pose) -> Result<Pose> {
    if local.frame != Frame::Goal || goal.frame != Frame::World {
        return Err(Error::InvalidInput("expected a goal-frame pose and a world-frame goal".into()));
    }
    let (l, g) = (local.state, goal.state);
    if !l.is_finite() || !g.is_finite() {
        return Err(Error::InvalidInput("non-finite pose".into()));
    }
    let (sin_g, cos_g) = g.theta.sin_cos();
    Ok(Pose::world(State::new(
        g.x + cos_g * l.x - sin_g * l.y,
        g.y + sin_g * l.x + cos_g * l.y,
        normalize_angle(l.theta + g.theta),
    )))
}
