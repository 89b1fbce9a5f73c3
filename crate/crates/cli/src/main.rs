//! `pcbench`: run, validate and re-report controller benchmarks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use predictive_control::export::{self, CONFIG_FILE};
use predictive_control::harness::run_benchmark;
use predictive_control::{BenchmarkReport, ExperimentConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "pcbench", version, about = "Benchmark MPC, RQL and SQL on a differential-drive robot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark grid and write logs, report and plot data.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the master seed.
        #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
        seed: Option<u64>,
        /// Output directory (default: <PCBENCH_OUT>/run-<config hash>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output root used when --out is absent.
        #[arg(long, env = "PCBENCH_OUT", default_value = "runs", hide_env_values = true)]
        out_root: PathBuf,
        /// Config override as dotted `key=value`, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Parse and validate a config, then print the effective config.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Regenerate report and plot data from persisted logs.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<predictive_control::Error> for CliError {
    fn from(e: predictive_control::Error) -> Self {
        use predictive_control::Error as E;
        match e {
            E::Io(_) | E::Corrupt(_) => CliError::Io(e.to_string()),
            E::InvalidConfig(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    /// Seconds since the Unix epoch.
    timestamp: u64,
    /// SHA-256 of the resolved config document.
    config_sha256: String,
    config: &'static str,
    episodes: usize,
    /// Every file written by the run, relative to the output directory.
    files: Vec<String>,
}

fn read_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let source =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml_with_overrides(&source, overrides)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_run(
    config: &Path,
    jobs: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    out_root: PathBuf,
    set: &[String],
) -> Result<(), CliError> {
    let mut overrides = set.to_vec();
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = read_config(config, &overrides)?;
    if jobs == Some(0) {
        return Err(CliError::Validation("--jobs must be >= 1".into()));
    }
    let resolved = cfg.to_toml();
    let hash = sha256_hex(&resolved);
    let out = out.unwrap_or_else(|| out_root.join(format!("run-{}", &hash[..12])));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    let (report, logs) = pool.install(|| run_benchmark(&cfg))?;

    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, &resolved).map_err(|e| CliError::Io(format!("{}: {e}", config_path.display())))?;
    let mut written = vec![config_path];
    written.extend(export::write_episodes(&out, &logs)?);
    written.extend(export::write_report(&out, &report, &logs)?);

    let mut files: Vec<String> = written
        .iter()
        .map(|p| p.strip_prefix(&out).unwrap_or(p).to_string_lossy().replace('\\', "/"))
        .collect();
    files.sort();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config_sha256: hash,
        config: CONFIG_FILE,
        episodes: logs.len(),
        files,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", manifest_path.display())))?;

    print_summary(&report);
    println!("wrote {} episodes to {}", logs.len(), out.display());
    Ok(())
}

fn print_summary(report: &BenchmarkReport) {
    println!("{:>4} {:>4} {:>5} {:>12} {:>9} {:>8}", "N", "meth", "start", "mean cost", "success", "t_goal");
    for c in &report.cells {
        let cost = c.mean_accumulated_cost.map_or("-".into(), |v| format!("{v:.4}"));
        let t = c.mean_time_to_goal.map_or("-".into(), |v| format!("{v:.1}"));
        println!(
            "{:>4} {:>4} {:>5} {:>12} {:>4}/{:<4} {:>8}",
            c.horizon, c.method, c.start_index, cost, c.successes, c.episodes, t
        );
    }
}

fn cmd_validate(config: &Path) -> Result<(), CliError> {
    let cfg = read_config(config, &[])?;
    print!("{}", cfg.to_toml());
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<(), CliError> {
    let loaded = export::read_logs(dir)?;
    if !loaded.skipped.is_empty() {
        eprintln!("warning: skipped {} corrupt log(s)", loaded.skipped.len());
    }
    if loaded.logs.is_empty() {
        return Err(CliError::Io(format!("no readable episode logs in {}", dir.display())));
    }
    let report = BenchmarkReport::from_logs(&loaded.logs);
    export::write_report(dir, &report, &loaded.logs)?;
    print_summary(&report);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            jobs,
            seed,
            out,
            out_root,
            set,
        } => cmd_run(&config, jobs, seed, out, out_root, &set),
        Command::Validate { config } => cmd_validate(&config),
        Command::Report { dir } => cmd_report(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
