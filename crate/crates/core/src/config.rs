//! Experiment configuration: a TOML document with full defaulting.
//!
//! ```toml
//! seed = 7
//! horizons = [12, 2]
//!
//! [controller]          # shared by all methods
//! delta = 0.1
//! cost = [1.0, 1.0, 0.1, 0.001, 0.001]
//!
//! [sql]                 # per-method overrides of any [controller] key
//! buffer_size = 30
//! ```
//!
//! Every key is optional. Unknown keys are rejected. [`ExperimentConfig::to_toml`]
//! writes the fully resolved document, which parses back to the same config.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::actors::{ControllerSpec, Method};
use crate::costs::CostMatrix;
use crate::critic::CriticSettings;
use crate::dynamics::{ActionBounds, Pose, State};
use crate::optimizer::OptimizerSettings;
use crate::{Error, Result};

/// How the simulated plant is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantIntegrator {
    /// Euler at the sampling time, identical to the controllers' predictor.
    #[serde(rename = "euler")]
    Euler,
    /// Ten RK4 substeps per sampling period (plant-model mismatch).
    #[serde(rename = "rk4-fine")]
    Rk4Fine,
}

/// Controller settings shared by every horizon of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub delta: f64,
    pub gamma: f64,
    pub cost: CostMatrix,
    pub buffer_size: usize,
    pub v_max: f64,
    pub omega_max: f64,
    pub init_jitter: f64,
    pub optimizer: OptimizerSettings,
    pub critic: CriticSettings,
}

impl Default for MethodSettings {
    fn default() -> Self {
        let bounds = ActionBounds::default();
        Self {
            delta: 0.1,
            gamma: 1.0,
            cost: CostMatrix::default(),
            buffer_size: 20,
            v_max: bounds.v_max,
            omega_max: bounds.omega_max,
            init_jitter: 0.0,
            optimizer: OptimizerSettings::default(),
            critic: CriticSettings::default(),
        }
    }
}

impl MethodSettings {
    pub fn spec(&self, method: Method, horizon: usize) -> ControllerSpec {
        ControllerSpec {
            method,
            horizon,
            delta: self.delta,
            gamma: self.gamma,
            cost: self.cost,
            buffer_size: self.buffer_size,
            bounds: ActionBounds {
                v_max: self.v_max,
                omega_max: self.omega_max,
            },
            optimizer: self.optimizer,
            critic: self.critic,
            init_jitter: self.init_jitter,
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Episode length [s].
    pub duration: f64,
    /// Episodes per (method, horizon, start) cell.
    pub repetitions: usize,
    pub plant: PlantIntegrator,
    /// Position threshold of the goal region [m].
    pub success_radius: f64,
    /// Heading threshold of the goal region [rad].
    pub heading_tolerance: f64,
    /// Std of Gaussian actuation noise as a fraction of the action bounds.
    pub actuation_noise: f64,
    pub goal: State,
    /// Starting poses in the world frame.
    pub starts: Vec<State>,
    pub methods: Vec<Method>,
    /// Prediction horizons `N` to benchmark, in steps.
    pub horizons: Vec<usize>,
    pub settings: BTreeMap<Method, MethodSettings>,
}

/// Three poses 1 m from the goal at bearings 180°, 135° and 90°, each
/// heading directly away from the goal.
pub fn default_starts() -> Vec<State> {
    [PI, 0.75 * PI, 0.5 * PI]
        .iter()
        .map(|b| State::new(b.cos(), b.sin(), *b))
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: 30.0,
            repetitions: 5,
            plant: PlantIntegrator::Euler,
            success_radius: 0.05,
            heading_tolerance: 0.1,
            actuation_noise: 0.0,
            goal: State::default(),
            starts: default_starts(),
            methods: Method::ALL.to_vec(),
            horizons: vec![12, 2],
            settings: Method::ALL.iter().map(|m| (*m, MethodSettings::default())).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    evals_per_dim: Option<usize>,
    tolerance: Option<f64>,
    initial_step: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCritic {
    ridge: Option<f64>,
    project_psd: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    delta: Option<f64>,
    gamma: Option<f64>,
    cost: Option<[f64; 5]>,
    buffer_size: Option<usize>,
    v_max: Option<f64>,
    omega_max: Option<f64>,
    init_jitter: Option<f64>,
    optimizer: Option<RawOptimizer>,
    critic: Option<RawCritic>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    duration: Option<f64>,
    repetitions: Option<usize>,
    plant: Option<PlantIntegrator>,
    success_radius: Option<f64>,
    heading_tolerance: Option<f64>,
    actuation_noise: Option<f64>,
    goal: Option<[f64; 3]>,
    starts: Option<Vec<[f64; 3]>>,
    methods: Option<Vec<Method>>,
    horizons: Option<Vec<usize>>,
    controller: Option<RawController>,
    mpc: Option<RawController>,
    rql: Option<RawController>,
    sql: Option<RawController>,
}

impl RawController {
    fn apply(&self, base: &MethodSettings) -> MethodSettings {
        let mut s = base.clone();
        if let Some(v) = self.delta {
            s.delta = v;
        }
        if let Some(v) = self.gamma {
            s.gamma = v;
        }
        if let Some(v) = self.cost {
            // validated later with a field-named error
            s.cost = CostMatrix::from_raw(v);
        }
        if let Some(v) = self.buffer_size {
            s.buffer_size = v;
        }
        if let Some(v) = self.v_max {
            s.v_max = v;
        }
        if let Some(v) = self.omega_max {
            s.omega_max = v;
        }
        if let Some(v) = self.init_jitter {
            s.init_jitter = v;
        }
        if let Some(o) = &self.optimizer {
            if let Some(v) = o.evals_per_dim {
                s.optimizer.evals_per_dim = v;
            }
            if let Some(v) = o.tolerance {
                s.optimizer.tolerance = v;
            }
            if let Some(v) = o.initial_step {
                s.optimizer.initial_step = v;
            }
        }
        if let Some(c) = &self.critic {
            if let Some(v) = c.ridge {
                s.critic.ridge = v;
            }
            if let Some(v) = c.project_psd {
                s.critic.project_psd = v;
            }
        }
        s
    }

    fn resolved(s: &MethodSettings) -> Self {
        Self {
            delta: Some(s.delta),
            gamma: Some(s.gamma),
            cost: Some(*s.cost.diag()),
            buffer_size: Some(s.buffer_size),
            v_max: Some(s.v_max),
            omega_max: Some(s.omega_max),
            init_jitter: Some(s.init_jitter),
            optimizer: Some(RawOptimizer {
                evals_per_dim: Some(s.optimizer.evals_per_dim),
                tolerance: Some(s.optimizer.tolerance),
                initial_step: Some(s.optimizer.initial_step),
            }),
            critic: Some(RawCritic {
                ridge: Some(s.critic.ridge),
                project_psd: Some(s.critic.project_psd),
            }),
        }
    }
}

fn section_name(m: Method) -> &'static str {
    match m {
        Method::Mpc => "mpc",
        Method::Rql => "rql",
        Method::Sql => "sql",
    }
}

/// A validation failure that names the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    /// Dotted key path, e.g. `controller.delta`.
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(source: &str) -> Result<Self> {
        let value: toml::Table = source
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        Self::from_table(value, source)
    }

    /// Parses `source`, applies `key=value` overrides (dotted keys, TOML
    /// values; bare words are taken as strings) and validates the result.
    pub fn from_toml_with_overrides(source: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = source
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table, source)
    }

    fn from_table(table: toml::Table, source: &str) -> Result<Self> {
        let raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        let cfg = Self::resolve(&raw);
        cfg.validate_fields().map_err(|e| {
            let key = e.field.rsplit('.').next().unwrap_or(&e.field);
            match locate_key(source, &e.field) {
                Some(line) => Error::InvalidConfig(format!("line {line}: {e}")),
                None => Error::InvalidConfig(format!("{e} (key `{key}`)")),
            }
        })?;
        Ok(cfg)
    }

    fn resolve(raw: &RawConfig) -> Self {
        let d = Self::default();
        let shared = raw
            .controller
            .as_ref()
            .map(|c| c.apply(&MethodSettings::default()))
            .unwrap_or_default();
        let settings = Method::ALL
            .iter()
            .map(|m| {
                let section = match m {
                    Method::Mpc => &raw.mpc,
                    Method::Rql => &raw.rql,
                    Method::Sql => &raw.sql,
                };
                let s = section.as_ref().map(|c| c.apply(&shared)).unwrap_or_else(|| shared.clone());
                (*m, s)
            })
            .collect();
        let pose = |p: [f64; 3]| State::new(p[0], p[1], p[2]);
        Self {
            seed: raw.seed.unwrap_or(d.seed),
            duration: raw.duration.unwrap_or(d.duration),
            repetitions: raw.repetitions.unwrap_or(d.repetitions),
            plant: raw.plant.unwrap_or(d.plant),
            success_radius: raw.success_radius.unwrap_or(d.success_radius),
            heading_tolerance: raw.heading_tolerance.unwrap_or(d.heading_tolerance),
            actuation_noise: raw.actuation_noise.unwrap_or(d.actuation_noise),
            goal: raw.goal.map(pose).unwrap_or(d.goal),
            starts: raw
                .starts
                .as_ref()
                .map(|v| v.iter().copied().map(pose).collect())
                .unwrap_or(d.starts),
            methods: raw.methods.clone().unwrap_or(d.methods),
            horizons: raw.horizons.clone().unwrap_or(d.horizons),
            settings,
        }
    }

    fn validate_fields(&self) -> std::result::Result<(), FieldError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.seed > i64::MAX as u64 {
            // TOML integers are signed 64-bit
            return Err(field_err("seed", format!("must be below 2^63, got {}", self.seed)));
        }
        if self.repetitions == 0 {
            return Err(field_err("repetitions", "must be >= 1"));
        }
        if !positive(self.duration) {
            return Err(field_err("duration", format!("must be > 0, got {}", self.duration)));
        }
        if !positive(self.success_radius) {
            return Err(field_err("success_radius", "must be > 0"));
        }
        if !positive(self.heading_tolerance) {
            return Err(field_err("heading_tolerance", "must be > 0"));
        }
        if !(self.actuation_noise.is_finite() && self.actuation_noise >= 0.0) {
            return Err(field_err("actuation_noise", "must be >= 0"));
        }
        if !self.goal.is_finite() {
            return Err(field_err("goal", "must be finite"));
        }
        if self.starts.is_empty() {
            return Err(field_err("starts", "at least one starting pose is required"));
        }
        if self.starts.iter().any(|s| !s.is_finite()) {
            return Err(field_err("starts", "all poses must be finite"));
        }
        if self.methods.is_empty() {
            return Err(field_err("methods", "at least one method is required"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(field_err("horizons", "must be a non-empty list of values >= 1"));
        }
        for (m, s) in &self.settings {
            // report against [controller] unless the method section differs from it
            let shared_equal = self.settings.values().all(|o| o == s);
            let section = if shared_equal { "controller" } else { section_name(*m) };
            let f = |k: &str| format!("{section}.{k}");
            if !positive(s.delta) {
                return Err(field_err(f("delta"), format!("must be > 0, got {}", s.delta)));
            }
            if !(s.gamma > 0.0 && s.gamma <= 1.0) {
                return Err(field_err(f("gamma"), format!("must lie in (0, 1], got {}", s.gamma)));
            }
            if let Err(e) = CostMatrix::new(*s.cost.diag()) {
                return Err(field_err(f("cost"), e.to_string()));
            }
            if s.buffer_size == 0 {
                return Err(field_err(f("buffer_size"), "must be >= 1"));
            }
            if !positive(s.v_max) {
                return Err(field_err(f("v_max"), "must be > 0"));
            }
            if !positive(s.omega_max) {
                return Err(field_err(f("omega_max"), "must be > 0"));
            }
            if !(0.0..=1.0).contains(&s.init_jitter) {
                return Err(field_err(f("init_jitter"), "must lie in [0, 1]"));
            }
            if let Err(e) = s.optimizer.validate() {
                return Err(field_err(f("optimizer"), e.to_string()));
            }
            if let Err(e) = s.critic.validate() {
                return Err(field_err(f("critic.ridge"), e.to_string()));
            }
        }
        Ok(())
    }

    /// Validates an in-memory config.
    pub fn validate(&self) -> Result<()> {
        self.validate_fields().map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn method_settings(&self, method: Method) -> &MethodSettings {
        &self.settings[&method]
    }

    pub fn spec(&self, method: Method, horizon: usize) -> ControllerSpec {
        self.method_settings(method).spec(method, horizon)
    }

    pub fn goal_pose(&self) -> Pose {
        Pose::world(self.goal)
    }

    /// Fully resolved TOML document; parsing it yields `self` again.
    pub fn to_toml(&self) -> String {
        let arr = |s: &State| [s.x, s.y, s.theta];
        let raw = RawConfig {
            seed: Some(self.seed),
            duration: Some(self.duration),
            repetitions: Some(self.repetitions),
            plant: Some(self.plant),
            success_radius: Some(self.success_radius),
            heading_tolerance: Some(self.heading_tolerance),
            actuation_noise: Some(self.actuation_noise),
            goal: Some(arr(&self.goal)),
            starts: Some(self.starts.iter().map(arr).collect()),
            methods: Some(self.methods.clone()),
            horizons: Some(self.horizons.clone()),
            controller: None,
            mpc: Some(RawController::resolved(&self.settings[&Method::Mpc])),
            rql: Some(RawController::resolved(&self.settings[&Method::Rql])),
            sql: Some(RawController::resolved(&self.settings[&Method::Sql])),
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let value = value.trim();
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts
        .pop()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::InvalidConfig(format!("empty override key in {assignment:?}")))?;
    let mut node = table;
    for part in parts {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override key {key:?}: {part} is not a table")))?;
    }
    node.insert(leaf.to_string(), parsed);
    Ok(())
}

/// 1-based line of `field` (dotted path) in `source`, if it appears there.
fn locate_key(source: &str, field: &str) -> Option<usize> {
    let (section, key) = match field.rsplit_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, field),
    };
    let mut current: Option<String> = None;
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            current = Some(h.trim().to_string());
            continue;
        }
        let Some((k, _)) = t.split_once('=') else { continue };
        let k = k.trim();
        let full = match &current {
            Some(c) => format!("{c}.{k}"),
            None => k.to_string(),
        };
        let wanted = match section {
            Some(s) => format!("{s}.{key}"),
            None => key.to_string(),
        };
        if full == wanted {
            return Some(i + 1);
        }
        // a method-section value inherited from [controller]
        if let (Some(c), Some(s)) = (&current, section) {
            if c == "controller" && k == key && ["mpc", "rql", "sql"].contains(&s) {
                return Some(i + 1);
            }
        }
    }
    None
}
