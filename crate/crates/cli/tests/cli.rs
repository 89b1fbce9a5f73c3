use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MINIMAL: &str = "duration = 2.0\nrepetitions = 1\nhorizons = [3]\nmethods = [\"MPC\"]\nstarts = [[-0.5, 0.0, 0.0]]\n";
const SMALL: &str = "duration = 1.5\nrepetitions = 1\nhorizons = [3, 2]\nmethods = [\"MPC\", \"RQL\"]\n";

fn pcbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcbench"))
        .args(args)
        .env_remove("PCBENCH_OUT")
        .output()
        .expect("spawn pcbench")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run_into(cfg: &Path, out: &Path) -> Output {
    pcbench(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_run_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("out");
    let o = run_into(&cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let csvs: Vec<_> = fs::read_dir(out.join("episodes"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csvs.len(), 1);
    assert!(out.join("report.json").is_file());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in &files {
        assert!(out.join(f).is_file(), "manifest lists missing {f}");
    }
    assert!(files.contains(&"report.json"));
    assert!(files.contains(&"plots/N3/trajectory.csv"));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let header = fs::read_to_string(csvs[0].path()).unwrap();
    assert_eq!(header.lines().next().unwrap(), "t,x,y,theta,v,omega,running_cost,accumulated_cost");
}

#[test]
fn every_written_file_is_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    assert!(run_into(&cfg, &out).status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let mut listed: Vec<String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_owned())
        .collect();
    listed.push("manifest.json".into());
    listed.sort();
    let mut on_disk = Vec::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                on_disk.push(p.strip_prefix(&out).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    on_disk.sort();
    assert_eq!(listed, on_disk);
}

#[test]
fn resolved_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    assert!(run_into(&cfg, &a).status.success());
    let b = tmp.path().join("b");
    assert!(run_into(&a.join("config.toml"), &b).status.success());
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("config.toml")).unwrap(), fs::read(b.join("config.toml")).unwrap());
}

#[test]
fn negative_delta_is_exit_2_naming_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 3\n[controller]\ndelta = -0.1\n");
    let o = run_into(&cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("delta") && msg.contains("line 3"), "{msg}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn validate_dumps_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sql]\nbuffer_size = 30\n");
    let o = pcbench(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let dump = String::from_utf8(o.stdout).unwrap();
    for key in ["cost", "gamma", "delta", "horizons", "buffer_size = 30", "buffer_size = 20", "ridge"] {
        assert!(dump.contains(key), "missing {key} in\n{dump}");
    }
}

#[test]
fn unknown_key_is_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[rql]\nhorizon_length = 4\n");
    let o = pcbench(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon_length"));
}

#[test]
fn missing_file_is_exit_1() {
    let o = pcbench(&["validate", "--config", "/nonexistent/pc.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn set_and_seed_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("out");
    let o = pcbench(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "99",
        "--set",
        "controller.cost=[2.0, 2.0, 0.5, 0.01, 0.01]",
        "--set",
        "duration=1.0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 99"));
    assert!(resolved.contains("duration = 1.0"));
    let meta = fs::read_to_string(out.join("episodes/mpc_N3_s0_r0.json")).unwrap();
    assert!(meta.contains("0.5"));
    let rows = fs::read_to_string(out.join("episodes/mpc_N3_s0_r0.csv")).unwrap().lines().count();
    assert_eq!(rows, 11);
}

#[test]
fn env_var_sets_default_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let root = tmp.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_pcbench"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("PCBENCH_OUT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let runs: Vec<_> = fs::read_dir(&root).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run = runs[0].as_ref().unwrap().path();
    assert!(run.file_name().unwrap().to_string_lossy().starts_with("run-"));
    assert!(run.join("manifest.json").is_file());
}

#[test]
fn jobs_flag_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let c = cfg.to_str().unwrap();
    assert!(pcbench(&["run", "--config", c, "--out", a.to_str().unwrap(), "--jobs", "1"]).status.success());
    assert!(pcbench(&["run", "--config", c, "--out", b.to_str().unwrap(), "--jobs", "3"]).status.success());
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert_eq!(pcbench(&["run", "--config", c, "--jobs", "0", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn report_over_empty_directory_is_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcbench(&["report", "--dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    fs::create_dir(tmp.path().join("episodes")).unwrap();
    let o = pcbench(&["report", "--dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_skips_corrupt_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    assert!(run_into(&cfg, &out).status.success());
    fs::write(out.join("episodes/mpc_N2_s1_r0.csv"), "garbage\n").unwrap();
    fs::write(out.join("episodes/rql_N3_s0_r0.json"), "{").unwrap();
    let o = pcbench(&["report", "--dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("skipped 2 corrupt"), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"].as_u64(), Some(10));

    // all corrupt
    for e in fs::read_dir(out.join("episodes")).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            fs::write(p, "null").unwrap();
        }
    }
    let o = pcbench(&["report", "--dir", out.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
}
