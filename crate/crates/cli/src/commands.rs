//! The `run`, `analyze`, `plotdata`, `calibrate`, and `verify` verbs.

use std::fs;
use std::path::{Path, PathBuf};

use ckn_core::snapshot_io::{load, save};
use ckn_core::solver::Trajectory;

use crate::analysis::{self, Calibration};
use crate::config::RunConfig;
use crate::report::{plot_csvs, samples_csv, RegularityMap, RunManifest, RunStatus, TrajectoryManifest, SCHEMA_VERSION};
use crate::verify::{self, SuiteOptions, SuiteReport};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const MAP_JSON: &str = "regularity_map.json";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const CALIBRATION_JSON: &str = "calibration.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_trajectory(dir: &Path, sub: &str, traj: &Trajectory) -> Result<TrajectoryManifest, CliError> {
    let target = dir.join(sub);
    create_dir(&target)?;
    let mut files = Vec::new();
    for (i, snap) in traj.snapshots().iter().enumerate() {
        let name = format!("{sub}/snap_{i:05}.ckn");
        save(&dir.join(&name), snap)?;
        files.push(name);
    }
    Ok(TrajectoryManifest {
        id: analysis::trajectory_id(traj),
        files,
        times: traj.times(),
        ledger: traj.ledger().to_vec(),
    })
}

/// Solves and writes snapshots plus `manifest.json`. On blow-up the partial
/// output is kept and the error is returned afterwards.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    create_dir(out)?;
    let solved = analysis::solve(cfg)?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        status: if solved.error.is_some() {
            RunStatus::BlowUp
        } else {
            RunStatus::Complete
        },
        error: solved.error.as_ref().map(|e| e.to_string()),
        trajectory: write_trajectory(out, "trajectory", &solved.trajectory)?,
        reference: write_trajectory(out, "reference", &solved.reference)?,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&out.join(MANIFEST), text)?;
    match solved.error {
        Some(e) => Err(CliError::BlowUp(e.to_string())),
        None => Ok(manifest),
    }
}

fn read_trajectory(dir: &Path, cfg: &RunConfig, m: &TrajectoryManifest) -> Result<Trajectory, CliError> {
    let snaps = m
        .files
        .iter()
        .map(|name| {
            let path = dir.join(name);
            if !path.exists() {
                return Err(io_err(&path, "missing snapshot"));
            }
            Ok(load(&path)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory::new(cfg.solver, snaps, m.ledger.clone())?)
}

/// Reads a run directory written by [`cmd_run`].
pub fn load_run(dir: &Path) -> Result<(RunManifest, Trajectory, Trajectory), CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CliError::Schema(format!(
            "manifest schema version mismatch: expected {SCHEMA_VERSION}, found {}",
            manifest.schema_version
        )));
    }
    let traj = read_trajectory(dir, &manifest.config, &manifest.trajectory)?;
    let reference = read_trajectory(dir, &manifest.config, &manifest.reference)?;
    Ok((manifest, traj, reference))
}

/// The analysis config must describe the same run; only constants and
/// sampling may differ.
fn check_compatible(run: &RunConfig, cfg: &RunConfig) -> Result<(), CliError> {
    let same = run.grid == cfg.grid
        && run.solver == cfg.solver
        && run.initial == cfg.initial
        && run.reference == cfg.reference
        && run.seed == cfg.seed;
    if same {
        Ok(())
    } else {
        Err(CliError::Config(
            "config describes a different run (grid, solver, initial data, reference, or seed differ)".into(),
        ))
    }
}

pub fn cmd_analyze(run_dir: &Path, cfg: Option<&RunConfig>, out: &Path, format: Format) -> Result<RegularityMap, CliError> {
    let (manifest, traj, reference) = load_run(run_dir)?;
    let cfg = match cfg {
        Some(c) => {
            check_compatible(&manifest.config, c)?;
            c.clone()
        }
        None => manifest.config.clone(),
    };
    let map = analysis::analyze(&cfg, &traj, &reference)?;
    create_dir(out)?;
    write(&out.join(MAP_JSON), map.to_json())?;
    if format == Format::Csv {
        write(&out.join(SAMPLES_CSV), samples_csv(&map))?;
    }
    Ok(map)
}

pub fn cmd_plotdata(map_path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let text = fs::read_to_string(map_path).map_err(|e| io_err(map_path, e))?;
    let map = RegularityMap::from_json(&text)?;
    create_dir(out)?;
    plot_csvs(&map)
        .into_iter()
        .map(|(name, bytes)| {
            let path = out.join(name);
            write(&path, bytes)?;
            Ok(path)
        })
        .collect()
}

pub fn cmd_calibrate(run_dir: &Path, cfg: Option<&RunConfig>, out: &Path) -> Result<Calibration, CliError> {
    let (manifest, traj, reference) = load_run(run_dir)?;
    let cfg = cfg.cloned().unwrap_or(manifest.config.clone());
    check_compatible(&manifest.config, &cfg)?;
    let map = analysis::analyze(&cfg, &traj, &reference)?;
    let cal = analysis::calibrate(&cfg, &map);
    create_dir(out)?;
    let mut text = serde_json::to_string_pretty(&cal).expect("calibration serializes");
    text.push('\n');
    write(&out.join(CALIBRATION_JSON), text)?;
    Ok(cal)
}

/// Runs the suite, printing one line per criterion, and writes the report
/// when `out` is given.
pub fn cmd_verify(opts: &SuiteOptions, out: Option<&Path>, format: Format) -> Result<SuiteReport, CliError> {
    let report = verify::run_suite(opts, |r, elapsed| println!("{}", verify::format_line(r, elapsed)));
    if let Some(dir) = out {
        create_dir(dir)?;
        match format {
            Format::Json => write(&dir.join("verify.json"), report.to_json())?,
            Format::Csv => write(&dir.join("verify.csv"), report.to_csv())?,
        }
    }
    Ok(report)
}
