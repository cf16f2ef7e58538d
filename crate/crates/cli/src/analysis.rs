//! Solve, analyze, and calibrate.

use ckn_core::criteria::{
    lemma41_delta, m_functional, prop1_verdict, prop2_limsup, singular_candidates, theorem_ti_schedule, thmd_region,
    weighted_data_norm, DeltaOutcome, ParabolicCylinder, ScheduleParams, ScheduleReport, SpaceTimePoint,
};
use ckn_core::grid::{Point, VectorLattice};
use ckn_core::mollifier::mollify;
use ckn_core::snapshot_io::encode;
use ckn_core::solver::{Solver, Trajectory};
use ckn_core::weighted::{good_sets, psi_sequence, weighted_budget, Ball};
use ckn_core::CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::report::{
    MapMeta, MetaConstants, RegularityMap, SampleRecord, SampleStatus, CONSTANTS_NOTE, LEBESGUE_NOTE, SCHEMA_VERSION,
    SOLUTION_NOTE,
};
use crate::CliError;

/// Solver output for the data and its smooth reference.
#[derive(Debug)]
pub struct Solved {
    pub trajectory: Trajectory,
    pub reference: Trajectory,
    /// The error that stopped either run early, if any.
    pub error: Option<CoreError>,
}

pub fn initial_data(cfg: &RunConfig) -> Result<VectorLattice, CliError> {
    Ok(cfg.initial.build(&cfg.grid, cfg.seed)?)
}

/// `v₀` from the config, or the finest mollification of `u₀`.
pub fn reference_data(cfg: &RunConfig, u0: &VectorLattice) -> Result<VectorLattice, CliError> {
    match &cfg.reference {
        Some(data) => Ok(data.build(&cfg.grid, cfg.seed)?),
        None => {
            let schedule = cfg.schedule()?;
            Ok(mollify(u0, &cfg.grid, &schedule, schedule.len() - 1)?)
        }
    }
}

pub fn solve(cfg: &RunConfig) -> Result<Solved, CliError> {
    let solver = Solver::new(cfg.grid, cfg.solver)?;
    let u0 = initial_data(cfg)?;
    let v0 = reference_data(cfg, &u0)?;
    let main = solver.run(&u0)?;
    let reference = solver.run(&v0)?;
    Ok(Solved {
        trajectory: main.trajectory,
        reference: reference.trajectory,
        error: main.error.or(reference.error),
    })
}

pub fn trajectory_id(traj: &Trajectory) -> String {
    let mut hasher = Sha256::new();
    for snap in traj.snapshots() {
        hasher.update(encode(snap));
    }
    format!("{:x}", hasher.finalize())
}

fn sample_times(cfg: &RunConfig, traj: &Trajectory) -> Vec<f64> {
    traj.times()
        .into_iter()
        .enumerate()
        .filter(|&(i, t)| t > 0.0 && t >= cfg.sampling.t_min && i % cfg.sampling.t_stride == 0)
        .map(|(_, t)| t)
        .collect()
}

struct PointSummary {
    t_star: f64,
    certified: bool,
    delta: Option<f64>,
    schedule_status: String,
    schedule: ScheduleReport,
}

fn point_summary(cfg: &RunConfig, traj: &Trajectory, reference: &Trajectory, x: Point) -> PointSummary {
    let k = &cfg.constants;
    let mu = cfg.sampling.mu;
    let (t_star, certified) = match weighted_budget(traj, reference, x, mu, k.mass_constant_c) {
        Ok(b) => (b.t_star, b.certified),
        Err(_) => (0.0, false),
    };
    let (delta, delta_note) = if certified {
        match lemma41_delta(traj, x, t_star, k.epsilon1, k.mass_constant_c, mu) {
            Ok(r) => match r.outcome {
                DeltaOutcome::Found { delta } => (Some(delta), None),
                DeltaOutcome::NoSchedule { offending_t } => (None, Some(format!("no delta schedule (fails at t = {offending_t})"))),
            },
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("budget not certified".to_string()))
    };
    let params = ScheduleParams {
        c_constant: k.mass_constant_c,
        epsilon1: k.epsilon1,
        c0: k.c0,
        samples: cfg.sampling.schedule_samples,
    };
    let schedule = theorem_ti_schedule(traj, x, t_star, delta, &params);
    let schedule_status = match (&schedule, delta_note) {
        (ScheduleReport::Available { .. }, _) => "available".to_string(),
        (ScheduleReport::Unavailable { reason }, Some(note)) => format!("unavailable: {reason}; {note}"),
        (ScheduleReport::Unavailable { reason }, None) => format!("unavailable: {reason}"),
    };
    PointSummary {
        t_star,
        certified,
        delta,
        schedule_status,
        schedule,
    }
}

/// Runs every criterion over the configured samples.
pub fn analyze(cfg: &RunConfig, traj: &Trajectory, reference: &Trajectory) -> Result<RegularityMap, CliError> {
    if traj.grid() != &cfg.grid || reference.grid() != &cfg.grid {
        return Err(CliError::Config("trajectory grid differs from the config grid".into()));
    }
    let grid = cfg.grid;
    let k = cfg.constants;
    let points = cfg.sample_points()?;
    let schedule = cfg.schedule()?;
    let u0 = traj.snapshots()[0].velocity();
    let trajectory_id = trajectory_id(traj);
    let config_hash = cfg.hash();

    let gauge = weighted_data_norm(u0, &grid, k.l0)?;
    let psi = psi_sequence(u0, &grid, &schedule, &points)?;
    let region = Ball {
        center: grid.center(),
        radius: grid.box_length() / 4.0,
    };
    let good = good_sets(u0, &grid, &schedule, k.eta, &region, k.epsilon_measure).ok();

    let summaries: Vec<PointSummary> = points
        .par_iter()
        .map(|&x| point_summary(cfg, traj, reference, x))
        .collect();

    let times = sample_times(cfg, traj);
    let jobs: Vec<(usize, f64)> = (0..points.len())
        .flat_map(|p| times.iter().map(move |&t| (p, t)))
        .collect();
    let center = grid.center();
    let samples: Vec<SampleRecord> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let x = points[p];
            let summary = &summaries[p];
            let cyl = ParabolicCylinder::q(t, x, cfg.sampling.prop1_radius);
            let (m, m_terms, m_error, prop1_pass, measured_sup, sup_bound) =
                match prop1_verdict(traj, &cyl, k.epsilon1, k.c0) {
                    Ok(v) => (Some(v.m.total), Some(v.m), None, v.passes, Some(v.measured_sup), Some(v.sup_bound)),
                    Err(e) => (None, None, Some(e.to_string()), false, None, None),
                };
            let m_profile = cfg
                .sampling
                .radii
                .iter()
                .map(|&r| m_functional(traj, &ParabolicCylinder::q(t, x, r)).ok().map(|v| v.total))
                .collect();
            let (prop2_value, prop2_pass, prop2_no_limsup, prop2_error) =
                match prop2_limsup(traj, t, x, &cfg.sampling.radii, k.epsilon3) {
                    Ok(r) => (Some(r.value), r.passes, r.no_limsup, None),
                    Err(e) => (None, false, false, Some(e.to_string())),
                };
            let status = if prop1_pass || prop2_pass {
                SampleStatus::Regular
            } else if m.is_some() || prop2_value.is_some() {
                SampleStatus::Failing
            } else {
                SampleStatus::Unclassified
            };
            let psi_at: Vec<f64> = psi.values.iter().map(|row| row[p]).collect();
            let good_set = psi_at.iter().any(|&v| v < k.eta);
            SampleRecord {
                trajectory_id: trajectory_id.clone(),
                config_hash: config_hash.clone(),
                t,
                x,
                m,
                m_terms,
                m_error,
                prop1_pass,
                measured_sup,
                sup_bound,
                m_profile,
                prop2_value,
                prop2_pass,
                prop2_no_limsup,
                prop2_error,
                status,
                t_star: summary.t_star,
                t_star_certified: summary.certified,
                delta: summary.delta,
                schedule_status: summary.schedule_status.clone(),
                schedule: summary.schedule.entries().to_vec(),
                thmd_region: thmd_region(&gauge, t, [x[0] - center[0], x[1] - center[1], x[2] - center[2]]),
                psi: psi_at,
                good_set,
            }
        })
        .collect();

    let failing: Vec<SpaceTimePoint> = samples
        .iter()
        .filter(|s| s.status == SampleStatus::Failing)
        .map(|s| SpaceTimePoint { t: s.t, x: s.x })
        .collect();
    let covering = singular_candidates(&failing, cfg.cover_radius());

    Ok(RegularityMap {
        schema_version: SCHEMA_VERSION,
        meta: MapMeta {
            config_hash,
            trajectory_id,
            reference_id: self::trajectory_id(reference),
            constants: MetaConstants {
                epsilon1: k.epsilon1,
                epsilon3: k.epsilon3,
                c0: k.c0,
                c: k.mass_constant_c,
                l0: k.l0,
            },
            mu: cfg.sampling.mu,
            prop1_radius: cfg.sampling.prop1_radius,
            radii: cfg.sampling.radii.clone(),
            mollifier_radii: schedule.radii().to_vec(),
            gauge,
            notes: vec![LEBESGUE_NOTE.into(), CONSTANTS_NOTE.into(), SOLUTION_NOTE.into()],
        },
        samples,
        covering,
        good_sets: good,
    })
}

/// Threshold sweep against a run assumed smooth: the smallest constants on a
/// geometric grid under which every evaluable sample passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config_hash: String,
    pub trajectory_id: String,
    pub sweep_grid: Vec<f64>,
    /// max M over samples
    pub required_epsilon1: Option<f64>,
    pub epsilon1: Option<f64>,
    /// max gradient-criterion value over samples
    pub required_epsilon3: Option<f64>,
    pub epsilon3: Option<f64>,
    /// smallest c₀ with measured_sup ≤ √(c₀ ε₁^(2/3))/r at the configured ε₁
    pub required_c0: Option<f64>,
    pub c0: Option<f64>,
    /// max of |u| τ^(1/2) over schedule decay checks
    pub required_c: Option<f64>,
    pub c: Option<f64>,
}

pub fn sweep_grid() -> Vec<f64> {
    (-24..=12).map(|e| 2f64.powf(e as f64 / 2.0)).collect()
}

pub fn calibrate(cfg: &RunConfig, map: &RegularityMap) -> Calibration {
    let grid = sweep_grid();
    let pick = |need: Option<f64>| need.and_then(|v| grid.iter().copied().find(|&g| g >= v));
    let max_of = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    let r = cfg.sampling.prop1_radius;
    let e1 = cfg.constants.epsilon1;
    let required_epsilon1 = max_of(&mut map.samples.iter().filter_map(|s| s.m));
    let required_epsilon3 = max_of(&mut map.samples.iter().filter_map(|s| s.prop2_value));
    let required_c0 = if e1 > 0.0 {
        max_of(
            &mut map
                .samples
                .iter()
                .filter_map(|s| s.measured_sup)
                .map(|sup| (sup * r).powi(2) / e1.powf(2.0 / 3.0)),
        )
    } else {
        None
    };
    let required_c = max_of(
        &mut map
            .samples
            .iter()
            .flat_map(|s| s.schedule.iter())
            .filter_map(|e| e.decay_value),
    );
    Calibration {
        config_hash: map.meta.config_hash.clone(),
        trajectory_id: map.meta.trajectory_id.clone(),
        epsilon1: pick(required_epsilon1),
        epsilon3: pick(required_epsilon3),
        c0: pick(required_c0),
        c: pick(required_c),
        required_epsilon1,
        required_epsilon3,
        required_c0,
        required_c,
        sweep_grid: grid,
    }
}
