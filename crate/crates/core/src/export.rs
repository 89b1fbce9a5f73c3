//! On-disk formats of a benchmark run.
//!
//! ```text
//! <out>/
//!   config.toml              resolved configuration
//!   report.json              BenchmarkReport
//!   episodes/<stem>.csv      one row per control step
//!   episodes/<stem>.json     episode metadata (everything but the rows)
//!   plots/N<h>/distance.csv  distance to goal vs time
//!   plots/N<h>/heading.csv   heading error vs time
//!   plots/N<h>/accumulated_cost.csv
//!   plots/N<h>/trajectory.csv  world-frame x, y
//! ```
//!
//! Episode CSV columns are fixed: `t,x,y,theta,v,omega,running_cost,accumulated_cost`,
//! with the state in the goal frame. Every float is written with 17
//! significant digits, so reading a log back yields bit-identical values.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::costs::StageRecord;
use crate::dynamics::{Action, State};
use crate::harness::{world_path, BenchmarkReport, Cell, EpisodeLog, SpecEcho};
use crate::{Error, Result};

pub const EPISODE_COLUMNS: [&str; 8] = [
    "t",
    "x",
    "y",
    "theta",
    "v",
    "omega",
    "running_cost",
    "accumulated_cost",
];

pub const EPISODES_DIR: &str = "episodes";
pub const PLOTS_DIR: &str = "plots";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Round-trip exact float formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Episode metadata stored next to its CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMeta {
    pub cell: Cell,
    pub seed: u64,
    pub start: State,
    pub goal: State,
    pub spec: SpecEcho,
    pub success_radius: f64,
    pub heading_tolerance: f64,
    pub steps: usize,
    pub accumulated_cost: f64,
    pub time_to_goal: Option<f64>,
    pub final_pose: State,
    pub failure: Option<String>,
}

impl From<&EpisodeLog> for EpisodeMeta {
    fn from(l: &EpisodeLog) -> Self {
        Self {
            cell: l.cell,
            seed: l.seed,
            start: l.start,
            goal: l.goal,
            spec: l.spec,
            success_radius: l.success_radius,
            heading_tolerance: l.heading_tolerance,
            steps: l.records.len(),
            accumulated_cost: l.accumulated_cost,
            time_to_goal: l.time_to_goal,
            final_pose: l.final_pose,
            failure: l.failure.clone(),
        }
    }
}

/// Serializes the records of `log` as episode CSV.
pub fn episode_csv(log: &EpisodeLog) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let map = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(EPISODE_COLUMNS).map_err(map)?;
    let mut running = 0.0;
    for r in &log.records {
        running += r.cost * log.spec.delta;
        w.write_record(
            [
                r.time,
                r.state.x,
                r.state.y,
                r.state.theta,
                r.action.v,
                r.action.omega,
                r.cost,
                running,
            ]
            .map(fmt_f64),
        )
        .map_err(map)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Parses episode CSV rows back into stage records.
pub fn parse_episode_csv(bytes: &[u8]) -> Result<Vec<StageRecord>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr.headers().map_err(|e| Error::Corrupt(e.to_string()))?;
    if headers.iter().ne(EPISODE_COLUMNS.iter().copied()) {
        return Err(Error::Corrupt(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Corrupt(e.to_string()))?;
        let mut v = [0.0_f64; 8];
        for (dst, field) in v.iter_mut().zip(row.iter()) {
            *dst = field
                .parse()
                .map_err(|_| Error::Corrupt(format!("row {}: bad number {field:?}", i + 1)))?;
        }
        if row.len() != 8 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corrupt(format!("row {}: malformed", i + 1)));
        }
        out.push(StageRecord {
            time: v[0],
            state: State::new(v[1], v[2], v[3]),
            action: Action::new(v[4], v[5]),
            cost: v[6],
        });
    }
    Ok(out)
}

/// Rebuilds a log from its metadata and CSV, checking they agree.
pub fn read_episode(meta_path: &Path) -> Result<EpisodeLog> {
    let meta_bytes = fs::read(meta_path).map_err(|e| io_err(meta_path, e))?;
    let meta: EpisodeMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::Corrupt(format!("{}: {e}", meta_path.display())))?;
    let csv_path = meta_path.with_extension("csv");
    let csv_bytes = fs::read(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let records = parse_episode_csv(&csv_bytes).map_err(|e| Error::Corrupt(format!("{}: {e}", csv_path.display())))?;
    if records.len() != meta.steps {
        return Err(Error::Corrupt(format!(
            "{}: {} rows, metadata says {}",
            csv_path.display(),
            records.len(),
            meta.steps
        )));
    }
    let mut log = EpisodeLog {
        cell: meta.cell,
        seed: meta.seed,
        start: meta.start,
        goal: meta.goal,
        spec: meta.spec,
        success_radius: meta.success_radius,
        heading_tolerance: meta.heading_tolerance,
        records,
        accumulated_cost: 0.0,
        time_to_goal: None,
        final_pose: meta.final_pose,
        failure: meta.failure,
    };
    log.refresh_metrics();
    if log.accumulated_cost.to_bits() != meta.accumulated_cost.to_bits() || log.time_to_goal != meta.time_to_goal {
        return Err(Error::Corrupt(format!(
            "{}: metrics disagree with metadata",
            meta_path.display()
        )));
    }
    Ok(log)
}

/// Outcome of scanning a run directory.
#[derive(Debug, Default)]
pub struct LoadedLogs {
    /// In the canonical cell order.
    pub logs: Vec<EpisodeLog>,
    pub skipped: Vec<(PathBuf, Error)>,
}

/// Reads every episode under `dir/episodes`, skipping unreadable ones with a warning.
pub fn read_logs(dir: &Path) -> Result<LoadedLogs> {
    let episodes = dir.join(EPISODES_DIR);
    let entries = fs::read_dir(&episodes).map_err(|e| io_err(&episodes, e))?;
    let mut metas: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    metas.sort();
    let mut out = LoadedLogs::default();
    for path in metas {
        match read_episode(&path) {
            Ok(log) => out.logs.push(log),
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                out.skipped.push((path, e));
            }
        }
    }
    out.logs.sort_by_key(|l| {
        (
            std::cmp::Reverse(l.cell.horizon),
            l.cell.method,
            l.cell.start_index,
            l.cell.repetition,
        )
    });
    Ok(out)
}

pub fn report_json(report: &BenchmarkReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Io(e.to_string()))
}

/// Which series a plot file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Distance,
    Heading,
    AccumulatedCost,
    Trajectory,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::Distance,
        PlotKind::Heading,
        PlotKind::AccumulatedCost,
        PlotKind::Trajectory,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Distance => "distance.csv",
            PlotKind::Heading => "heading.csv",
            PlotKind::AccumulatedCost => "accumulated_cost.csv",
            PlotKind::Trajectory => "trajectory.csv",
        }
    }
}

/// Long-format plot data for all `logs` with the given horizon:
/// `method,start,repetition,t,<value columns>`.
pub fn plot_csv(logs: &[EpisodeLog], horizon: usize, kind: PlotKind) -> Result<Vec<u8>> {
    let map = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method", "start", "repetition", "t"];
    match kind {
        PlotKind::Distance => header.push("distance"),
        PlotKind::Heading => header.push("theta"),
        PlotKind::AccumulatedCost => header.push("accumulated_cost"),
        PlotKind::Trajectory => header.extend(["x", "y"]),
    }
    w.write_record(&header).map_err(map)?;
    for log in logs.iter().filter(|l| l.cell.horizon == horizon) {
        let prefix = [
            log.cell.method.to_string(),
            log.cell.start_index.to_string(),
            log.cell.repetition.to_string(),
        ];
        let path = match kind {
            PlotKind::Trajectory => world_path(log)?,
            _ => Vec::new(),
        };
        let mut acc = 0.0;
        for (k, r) in log.records.iter().enumerate() {
            acc += r.cost * log.spec.delta;
            let values = match kind {
                PlotKind::Distance => vec![r.state.distance()],
                PlotKind::Heading => vec![r.state.theta],
                PlotKind::AccumulatedCost => vec![acc],
                PlotKind::Trajectory => vec![path[k].x, path[k].y],
            };
            let row = prefix
                .iter()
                .cloned()
                .chain(std::iter::once(fmt_f64(r.time)))
                .chain(values.into_iter().map(fmt_f64));
            w.write_record(row).map_err(map)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn write(path: &Path, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Writes the report and the plot files; returns the paths written.
pub fn write_report(dir: &Path, report: &BenchmarkReport, logs: &[EpisodeLog]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    write(&dir.join(REPORT_FILE), report_json(report)?.as_bytes(), &mut written)?;
    let mut horizons: Vec<usize> = logs.iter().map(|l| l.cell.horizon).collect();
    horizons.sort_unstable_by(|a, b| b.cmp(a));
    horizons.dedup();
    for h in horizons {
        let sub = dir.join(PLOTS_DIR).join(format!("N{h}"));
        for kind in PlotKind::ALL {
            write(&sub.join(kind.file_name()), &plot_csv(logs, h, kind)?, &mut written)?;
        }
    }
    Ok(written)
}

/// Writes every episode (CSV plus metadata); returns the paths written.
pub fn write_episodes(dir: &Path, logs: &[EpisodeLog]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let episodes = dir.join(EPISODES_DIR);
    for log in logs {
        let stem = log.cell.stem();
        write(&episodes.join(format!("{stem}.csv")), &episode_csv(log)?, &mut written)?;
        let meta = serde_json::to_string_pretty(&EpisodeMeta::from(log)).map_err(|e| Error::Io(e.to_string()))?;
        write(&episodes.join(format!("{stem}.json")), meta.as_bytes(), &mut written)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::Method;
    use crate::config::ExperimentConfig;
    use crate::harness::run_benchmark;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            duration: 1.5,
            repetitions: 1,
            horizons: vec![3, 2],
            methods: vec![Method::Mpc, Method::Rql],
            starts: vec![State::new(-0.4, 0.1, 0.3)],
            ..Default::default()
        }
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, f64::MAX, 1e-7, 0.0, -0.0] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v}");
        }
    }

    #[test]
    fn episode_round_trip() {
        let (report, logs) = run_benchmark(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_episodes(dir.path(), &logs).unwrap();
        let loaded = read_logs(dir.path()).unwrap();
        assert!(loaded.skipped.is_empty());
        assert_eq!(loaded.logs, logs);
        assert_eq!(BenchmarkReport::from_logs(&loaded.logs), report);
    }

    #[test]
    fn csv_header_and_last_column() {
        let (_, logs) = run_benchmark(&small()).unwrap();
        let text = String::from_utf8(episode_csv(&logs[0]).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), EPISODE_COLUMNS.join(","));
        let last: f64 = text.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert!((last - logs[0].accumulated_cost).abs() < 1e-12);
        assert_eq!(text.lines().count(), logs[0].records.len() + 1);
    }

    #[test]
    fn corrupt_episode_is_skipped() {
        let (_, logs) = run_benchmark(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_episodes(dir.path(), &logs).unwrap();
        let victim = dir.path().join(EPISODES_DIR).join(format!("{}.csv", logs[1].cell.stem()));
        let text = fs::read_to_string(&victim).unwrap();
        fs::write(&victim, text.replacen("e-", "x-", 1)).unwrap();
        let loaded = read_logs(dir.path()).unwrap();
        assert_eq!(loaded.skipped.len(), 1);
        assert_eq!(loaded.logs.len(), logs.len() - 1);
    }

    #[test]
    fn truncated_csv_is_corrupt() {
        let (_, logs) = run_benchmark(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_episodes(dir.path(), &logs[..1]).unwrap();
        let victim = dir.path().join(EPISODES_DIR).join(format!("{}.csv", logs[0].cell.stem()));
        let text = fs::read_to_string(&victim).unwrap();
        let cut: Vec<&str> = text.lines().take(4).collect();
        fs::write(&victim, cut.join("\n")).unwrap();
        let meta = victim.with_extension("json");
        assert!(matches!(read_episode(&meta), Err(Error::Corrupt(_))));
    }

    #[test]
    fn plot_files_per_horizon() {
        let (report, logs) = run_benchmark(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_report(dir.path(), &report, &logs).unwrap();
        assert_eq!(written.len(), 1 + 2 * 4);
        let traj = fs::read_to_string(dir.path().join("plots/N3/trajectory.csv")).unwrap();
        assert_eq!(traj.lines().next().unwrap(), "method,start,repetition,t,x,y");
        // two methods, one episode each
        assert_eq!(traj.lines().count(), 1 + 2 * logs[0].records.len());
        let first: Vec<&str> = traj.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(first[0], "MPC");
        assert!((first[4].parse::<f64>().unwrap() + 0.4).abs() < 1e-12);
    }
}
