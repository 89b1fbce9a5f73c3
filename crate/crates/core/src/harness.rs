//! Closed-loop episodes and the benchmark grid over methods, horizons,
//! starting poses and repetitions.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actors::{Controller, ControllerSpec, Method};
use crate::config::{ExperimentConfig, PlantIntegrator};
use crate::costs::{accumulated_cost, running_cost, StageRecord};
use crate::dynamics::{euler_step, from_goal_frame, rk4_fine, to_goal_frame, Action, Pose, State};
use crate::{Error, Result};

/// RK4 substeps per sampling period in `rk4-fine` plant mode.
pub const FINE_SUBSTEPS: usize = 10;

/// Identifies one episode of the benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub horizon: usize,
    pub start_index: usize,
    pub repetition: usize,
}

impl Cell {
    /// File stem used when the episode is persisted.
    pub fn stem(&self) -> String {
        format!(
            "{}_N{}_s{}_r{}",
            self.method.as_str().to_ascii_lowercase(),
            self.horizon,
            self.start_index,
            self.repetition
        )
    }
}

/// Controller parameters echoed into every log and report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecEcho {
    pub cost: [f64; 5],
    pub gamma: f64,
    pub delta: f64,
    pub horizon: usize,
    pub buffer_size: usize,
}

impl From<&ControllerSpec> for SpecEcho {
    fn from(s: &ControllerSpec) -> Self {
        Self {
            cost: *s.cost.diag(),
            gamma: s.gamma,
            delta: s.delta,
            horizon: s.horizon,
            buffer_size: s.buffer_size,
        }
    }
}

/// A recorded closed-loop run. States in `records` are goal-frame states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub cell: Cell,
    pub seed: u64,
    /// Starting pose in the world frame.
    pub start: State,
    pub goal: State,
    pub spec: SpecEcho,
    pub success_radius: f64,
    pub heading_tolerance: f64,
    pub records: Vec<StageRecord>,
    pub accumulated_cost: f64,
    /// First time the goal region was reached; `None` if never.
    pub time_to_goal: Option<f64>,
    /// Pose after the last recorded action, in the world frame.
    pub final_pose: State,
    /// Controller error that ended the episode early.
    pub failure: Option<String>,
}

impl EpisodeLog {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn reached_goal(&self) -> bool {
        !self.failed() && self.time_to_goal.is_some()
    }

    /// Recomputes the derived fields from `records`.
    pub fn refresh_metrics(&mut self) {
        self.accumulated_cost = accumulated_cost(&self.records, self.spec.delta);
        self.time_to_goal = time_to_goal(&self.records, self.success_radius, self.heading_tolerance);
    }
}

/// Time of the first record inside the goal region.
pub fn time_to_goal(records: &[StageRecord], radius: f64, heading_tolerance: f64) -> Option<f64> {
    records
        .iter()
        .find(|r| r.state.distance() < radius && r.state.theta.abs() < heading_tolerance)
        .map(|r| r.time)
}

/// Episode seed of `cell`: a pure function of the master seed and the cell indices.
pub fn cell_seed(master: u64, cell: &Cell) -> u64 {
    let method = Method::ALL.iter().position(|m| *m == cell.method).unwrap_or(0) as u64;
    [method, cell.horizon as u64, cell.start_index as u64, cell.repetition as u64]
        .iter()
        .fold(splitmix(master), |h, v| splitmix(h ^ splitmix(*v)))
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Number of control steps in an episode of `duration` at sampling time `delta`.
pub fn episode_steps(duration: f64, delta: f64) -> usize {
    let ratio = duration / delta;
    let nearest = ratio.round();
    // guard against 30.0 / 0.1 = 300.00000000000006
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Simulates one closed-loop episode from the world-frame pose `start`.
pub fn run_episode(cfg: &ExperimentConfig, cell: Cell, start: State, seed: u64) -> Result<EpisodeLog> {
    let spec = cfg.spec(cell.method, cell.horizon);
    let goal = cfg.goal_pose();
    let mut controller = Controller::with_seed(spec.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_a0c7);
    let noise = if cfg.actuation_noise > 0.0 {
        Some((
            Normal::new(0.0, cfg.actuation_noise * spec.bounds.v_max)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?,
            Normal::new(0.0, cfg.actuation_noise * spec.bounds.omega_max)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?,
        ))
    } else {
        None
    };

    let steps = episode_steps(cfg.duration, spec.delta);
    let mut records = Vec::with_capacity(steps);
    let mut world = start;
    let mut failure = None;
    for k in 0..steps {
        let local = to_goal_frame(&Pose::world(world), &goal)?.state;
        let action = match controller.compute_action(&local) {
            Ok(a) => a,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        records.push(StageRecord {
            time: k as f64 * spec.delta,
            state: local,
            action,
            cost: running_cost(&local, &action, &spec.cost)?,
        });
        let applied = match &noise {
            Some((nv, nw)) => spec
                .bounds
                .clamp(Action::new(action.v + nv.sample(&mut rng), action.omega + nw.sample(&mut rng))),
            None => action,
        };
        let next = match cfg.plant {
            PlantIntegrator::Euler => euler_step(&world, &applied, spec.delta),
            PlantIntegrator::Rk4Fine => rk4_fine(&world, &applied, spec.delta, FINE_SUBSTEPS),
        };
        match next {
            Ok(s) if s.is_finite() => world = s,
            Ok(s) => {
                failure = Some(format!("plant diverged to {s:?}"));
                break;
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }

    let mut log = EpisodeLog {
        cell,
        seed,
        start,
        goal: cfg.goal,
        spec: SpecEcho::from(&spec),
        success_radius: cfg.success_radius,
        heading_tolerance: cfg.heading_tolerance,
        records,
        accumulated_cost: 0.0,
        time_to_goal: None,
        final_pose: world,
        failure,
    };
    log.refresh_metrics();
    Ok(log)
}

/// All cells of the grid in canonical order: horizon, method, start, repetition.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &horizon in &cfg.horizons {
        for &method in &cfg.methods {
            for start_index in 0..cfg.starts.len() {
                for repetition in 0..cfg.repetitions {
                    out.push(Cell {
                        method,
                        horizon,
                        start_index,
                        repetition,
                    });
                }
            }
        }
    }
    out
}

/// Runs every cell of the grid, in parallel on the current rayon pool.
/// The result is in [`cells`] order regardless of scheduling.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<EpisodeLog>> {
    cfg.validate()?;
    cells(cfg)
        .into_par_iter()
        .map(|cell| run_episode(cfg, cell, cfg.starts[cell.start_index], cell_seed(cfg.seed, &cell)))
        .collect()
}

/// Aggregates of one (method, horizon, start) cell over its repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub horizon: usize,
    pub start_index: usize,
    pub start: State,
    pub spec: SpecEcho,
    pub episodes: usize,
    pub failed: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over non-failed episodes; `None` when all failed.
    pub mean_accumulated_cost: Option<f64>,
    pub min_accumulated_cost: Option<f64>,
    pub max_accumulated_cost: Option<f64>,
    /// Over episodes that reached the goal.
    pub mean_time_to_goal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub episodes: usize,
    pub cells: Vec<CellSummary>,
}

impl BenchmarkReport {
    /// Aggregates logs; needs nothing but the logs themselves.
    pub fn from_logs(logs: &[EpisodeLog]) -> Self {
        let mut groups: BTreeMap<(usize, Method, usize), Vec<&EpisodeLog>> = BTreeMap::new();
        for log in logs {
            groups
                .entry((log.cell.horizon, log.cell.method, log.cell.start_index))
                .or_default()
                .push(log);
        }
        let mut cells: Vec<CellSummary> = groups
            .into_values()
            .map(|mut group| {
                group.sort_by_key(|l| l.cell.repetition);
                summarize(&group)
            })
            .collect();
        // descending horizon first, matching the usual long/short presentation
        cells.sort_by(|a, b| {
            b.horizon
                .cmp(&a.horizon)
                .then(a.method.cmp(&b.method))
                .then(a.start_index.cmp(&b.start_index))
        });
        Self {
            episodes: logs.len(),
            cells,
        }
    }

    pub fn cell(&self, method: Method, horizon: usize, start_index: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.horizon == horizon && c.start_index == start_index)
    }

    /// Mean over starting poses of the per-cell mean accumulated cost.
    pub fn method_mean_cost(&self, method: Method, horizon: usize) -> Option<f64> {
        let means: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.method == method && c.horizon == horizon)
            .filter_map(|c| c.mean_accumulated_cost)
            .collect();
        (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
    }
}

fn summarize(group: &[&EpisodeLog]) -> CellSummary {
    let first = group[0];
    let ok: Vec<f64> = group.iter().filter(|l| !l.failed()).map(|l| l.accumulated_cost).collect();
    let times: Vec<f64> = group
        .iter()
        .filter(|l| l.reached_goal())
        .filter_map(|l| l.time_to_goal)
        .collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let successes = group.iter().filter(|l| l.reached_goal()).count();
    CellSummary {
        method: first.cell.method,
        horizon: first.cell.horizon,
        start_index: first.cell.start_index,
        start: first.start,
        spec: first.spec,
        episodes: group.len(),
        failed: group.len() - ok.len(),
        successes,
        success_rate: successes as f64 / group.len() as f64,
        mean_accumulated_cost: mean(&ok),
        min_accumulated_cost: ok.iter().cloned().reduce(f64::min),
        max_accumulated_cost: ok.iter().cloned().reduce(f64::max),
        mean_time_to_goal: mean(&times),
    }
}

/// Runs the whole grid and aggregates it.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<(BenchmarkReport, Vec<EpisodeLog>)> {
    let logs = run_all(cfg)?;
    Ok((BenchmarkReport::from_logs(&logs), logs))
}

/// World-frame trajectory of a log, for plotting.
pub fn world_path(log: &EpisodeLog) -> Result<Vec<State>> {
    let goal = Pose::world(log.goal);
    log.records
        .iter()
        .map(|r| from_goal_frame(&Pose::goal(r.state), &goal).map(|p| p.state))
        .collect()
}
