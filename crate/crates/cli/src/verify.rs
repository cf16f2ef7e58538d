//! Acceptance suite: criteria 1 to 11, one result per criterion.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ckn_core::criteria::{
    lemma41_delta, m_functional_with, ns_rescale, singular_candidates, theorem_ti_schedule, weighted_data_norm, MHook,
    ParabolicCylinder, ScheduleParams, SpaceTimePoint,
};
use ckn_core::grid::{norm, Point, VectorLattice};
use ckn_core::initial::{curl_bump, random_field, shear_layer, taylor_green};
use ckn_core::mollifier::MollifierSchedule;
use ckn_core::pressure::{pressure_oracle, solve_pressure};
use ckn_core::solver::{local_energy_residual, strong_energy_residual, Solver, SolverConfig, TestFunctionSpec, Trajectory};
use ckn_core::weighted::{
    extrapolate_ladder, hls_ratio, interpolation_ratio, median, mu_ladder, psi, psi_sequence, weighted_budget,
    weighted_integral, Ball, Exponents, KernelRule, WeightSpec,
};
use ckn_core::{FieldSnapshot, Result, TorusGrid};
use serde::{Deserialize, Serialize};

use crate::analysis::analyze;
use crate::config::RunConfig;
use crate::report::SampleStatus;

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "pressure oracle equivalence"),
    (2, "strong energy equality residual"),
    (3, "local energy identity"),
    (4, "scale invariance of M"),
    (5, "mu-monotonicity and ladder convergence"),
    (6, "closed-form weighted integrals"),
    (7, "psi^k decay and HLS uniformity"),
    (8, "interpolation-inequality direction"),
    (9, "budget and schedule end-to-end"),
    (10, "covering soundness"),
    (11, "determinism across thread counts"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "name", "passed", "measured", "detail"]).expect("in-memory write");
        for c in &self.criteria {
            let measured = c
                .measured
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([c.id.to_string(), c.name.clone(), c.passed.to_string(), measured, c.detail.clone()])
                .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Criterion ids to run; all when empty.
    pub only: Vec<u8>,
    /// Fault injected into M, for checking that the suite notices.
    pub m_hook: MHook,
    /// Thread count for the parallel half of the determinism check.
    pub threads: Option<usize>,
}

/// One line of the console report.
pub fn format_line(r: &CriterionResult, elapsed: Duration) -> String {
    let measured = r
        .measured
        .iter()
        .map(|(k, v)| format!("{k}={v:.3e}"))
        .collect::<Vec<_>>()
        .join(" ");
    let detail = if r.detail.is_empty() {
        String::new()
    } else {
        format!(" [{}]", r.detail)
    };
    format!(
        "criterion {:>2} {:<40} {}  {}{} ({:.1}s)",
        r.id,
        r.name,
        if r.passed { "PASS" } else { "FAIL" },
        measured,
        detail,
        elapsed.as_secs_f64()
    )
}

struct Check {
    measured: BTreeMap<String, f64>,
    notes: Vec<String>,
    passed: bool,
}

impl Check {
    fn new() -> Self {
        Self {
            measured: BTreeMap::new(),
            notes: Vec::new(),
            passed: true,
        }
    }

    fn value(&mut self, key: &str, v: f64) -> f64 {
        self.measured.insert(key.to_string(), v);
        v
    }

    /// Records `ok` under a description; non-finite comparisons fail.
    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.passed = false;
            self.notes.push(format!("failed: {}", what.into()));
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

/// Trajectories shared by several criteria.
#[derive(Default)]
struct Fixtures {
    tg: [OnceLock<Result<Trajectory>>; 3],
}

const TG_DTS: [f64; 3] = [4e-3, 2e-3, 1e-3];

fn grid32() -> TorusGrid {
    TorusGrid::new(32, TAU).expect("valid grid")
}

impl Fixtures {
    fn taylor_green(&self, i: usize) -> std::result::Result<&Trajectory, String> {
        self.tg[i]
            .get_or_init(|| {
                let grid = grid32();
                Solver::new(grid, SolverConfig::new(TG_DTS[i], 0.5))?
                    .run(&taylor_green(&grid, 1.0))?
                    .into_result()
            })
            .as_ref()
            .map_err(|e| e.to_string())
    }
}

pub fn run_suite(opts: &SuiteOptions, mut on_result: impl FnMut(&CriterionResult, Duration)) -> SuiteReport {
    let fixtures = Fixtures::default();
    let mut results = Vec::new();
    for (id, name) in CRITERIA {
        if !opts.only.is_empty() && !opts.only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = match id {
            1 => c1_pressure(),
            2 => c2_energy(&fixtures),
            3 => c3_local(&fixtures),
            4 => c4_scaling(&fixtures, opts.m_hook),
            5 => c5_ladder(),
            6 => c6_closed_form(),
            7 => c7_psi(),
            8 => c8_interpolation(),
            9 => c9_budget(),
            10 => c10_covering(),
            _ => c11_determinism(opts.threads.unwrap_or(4)),
        };
        let check = outcome.unwrap_or_else(|e| {
            let mut c = Check::new();
            c.require(false, format!("error: {e}"));
            c
        });
        let result = CriterionResult {
            id,
            name: name.to_string(),
            passed: check.passed,
            measured: check.measured,
            detail: check.notes.join("; "),
        };
        on_result(&result, start.elapsed());
        results.push(result);
    }
    SuiteReport {
        schema_version: crate::report::SCHEMA_VERSION,
        passed: results.iter().all(|r| r.passed),
        criteria: results,
    }
}

type Outcome = std::result::Result<Check, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c1_pressure() -> Outcome {
    let grid = TorusGrid::new(16, TAU).map_err(err)?;
    let mut c = Check::new();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let u = random_field(&grid, 100 + seed, 7, 1.0).map_err(err)?;
        let fast = solve_pressure(&u, &grid, 1e-10).map_err(err)?;
        let slow = pressure_oracle(&u, &grid).map_err(err)?;
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    c.value("max_abs_diff", worst);
    c.require(worst <= 1e-8, "max |diff| <= 1e-8 over 20 fields");
    Ok(c)
}

fn c2_energy(f: &Fixtures) -> Outcome {
    let mut c = Check::new();
    let mut res = [0.0; 3];
    for (i, r) in res.iter_mut().enumerate() {
        let traj = f.taylor_green(i)?;
        let e0 = traj.snapshots()[0].energy();
        *r = strong_energy_residual(traj, 0.0, 0.5).map_err(err)?.abs() / e0;
    }
    c.value("rel_residual_dt1e-3", res[2]);
    let q1 = c.value("ratio_4e-3_2e-3", res[0] / res[1]);
    let q2 = c.value("ratio_2e-3_1e-3", res[1] / res[2]);
    c.require(res[2] <= 1e-6, "|R|/|u0|^2 <= 1e-6 at dt = 1e-3");
    c.require(q1 >= 12.0 && q2 >= 12.0, "halving dt reduces |R| by >= 12");
    Ok(c)
}

fn c3_local(f: &Fixtures) -> Outcome {
    let traj = f.taylor_green(2)?;
    let mut c = Check::new();
    let centers: [Point; 5] = [
        [3.0, 3.0, 3.0],
        [2.9, 3.4, 3.1],
        [2.6, 3.5, 3.0],
        [3.6, 2.8, 3.3],
        [3.1, 3.2, 2.7],
    ];
    let mut worst: f64 = 0.0;
    for x in centers {
        let phi = TestFunctionSpec::bump(0.25, x, 2.6, 0.25, 5.0);
        let r = local_energy_residual(traj, &phi, 0.0, 0.5).map_err(err)?;
        worst = worst.max(r.relative().abs());
    }
    c.value("worst_relative_residual", worst);
    c.require(worst <= 1e-4, "relative local residual <= 1e-4 for 5 bumps");
    let e0 = traj.snapshots()[0].energy();
    let flat = local_energy_residual(traj, &TestFunctionSpec::constant(), 0.0, 0.5).map_err(err)?;
    let strong = strong_energy_residual(traj, 0.0, 0.5).map_err(err)?;
    let gap = c.value("constant_phi_gap", (flat.residual - strong).abs() / e0);
    c.require(gap <= 1e-12, "constant phi matches the strong residual to 1e-12");
    Ok(c)
}

fn c4_scaling(f: &Fixtures, hook: MHook) -> Outcome {
    let traj = f.taylor_green(0)?;
    let scaled = ns_rescale(traj, 2.0).map_err(err)?;
    let center = traj.grid().center();
    let mut c = Check::new();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let s = i as f64;
        let t = 0.3 + 0.02 * s;
        let r = 0.3 + 0.025 * s;
        let x = [center[0] + 0.1 * s, center[1] - 0.05 * s, center[2] + 0.13];
        let a = m_functional_with(traj, &ParabolicCylinder::q(t, x, r), hook).map_err(err)?;
        let b = m_functional_with(&scaled, &ParabolicCylinder::q(t / 4.0, x.map(|v| v / 2.0), r / 2.0), hook)
            .map_err(err)?;
        worst = worst.max((b.total / a.total - 1.0).abs());
    }
    c.value("max_relative_deviation", worst);
    c.require(worst <= 1e-8, "M invariant under lambda = 2 to 1e-8 on 10 cylinders");
    Ok(c)
}

fn c5_ladder() -> Outcome {
    let grid = grid32();
    let x = grid.center();
    let h = grid.spacing();
    let mus = [8.0 * h, 4.0 * h, 2.0 * h, h, 0.5 * h, 0.25 * h];
    let mut c = Check::new();
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for seed in 0..10 {
        let u = random_field(&grid, 200 + seed, 3, 1.0).map_err(err)?;
        let snap = FieldSnapshot::new(grid, 0.0, u, grid.zeros()).map_err(err)?;
        for density in [ckn_core::grid::magnitude_sq(snap.velocity()), snap.grad_sq().clone()] {
            let values = mus
                .iter()
                .map(|&mu| weighted_integral(&density, &grid, &WeightSpec::new(x, mu), KernelRule::Midpoint))
                .collect::<Result<Vec<_>>>()
                .map_err(err)?;
            monotone &= values.windows(2).all(|w| w[0] <= w[1]);
            let singular =
                weighted_integral(&density, &grid, &WeightSpec::new(x, 0.0), KernelRule::SingularCell).map_err(err)?;
            let extrapolated = extrapolate_ladder(&mu_ladder(&density, &grid, x).map_err(err)?);
            worst = worst.max((extrapolated / singular - 1.0).abs());
        }
    }
    c.value("worst_ladder_error", worst);
    c.value("monotone", if monotone { 1.0 } else { 0.0 });
    c.require(monotone, "E and D nonincreasing in mu (zero tolerance)");
    c.require(worst <= 5e-3, "ladder extrapolation within 0.5% of the singular-cell value");
    Ok(c)
}

fn ball_indicator(grid: &TorusGrid, center: Point, r: f64) -> Vec<f64> {
    grid.sample(|p| {
        if norm([p[0] - center[0], p[1] - center[1], p[2] - center[2]]) < r {
            1.0
        } else {
            0.0
        }
    })
}

fn c6_closed_form() -> Outcome {
    let grid = grid32();
    let x = grid.center();
    let r = 2.5;
    let ind = ball_indicator(&grid, x, r);
    let target = 2.0 * PI * r * r;
    let mut c = Check::new();
    let e = weighted_integral(&ind, &grid, &WeightSpec::new(x, 0.0), KernelRule::SingularCell).map_err(err)?;
    let u0: VectorLattice = [ind.clone(), grid.zeros(), grid.zeros()];
    let p = psi(&u0, &grid.zero_vector(), &grid, x).map_err(err)?;
    let gauge = weighted_data_norm(&[ind.clone(), ind.clone(), ind], &grid, 1.0).map_err(err)?;
    let e_err = c.value("weighted_E_rel_error", (e / target - 1.0).abs());
    let p_err = c.value("psi_rel_error", (p / target - 1.0).abs());
    let l_err = c.value("data_norm_rel_error", (gauge.l * gauge.l / (3.0 * target) - 1.0).abs());
    c.require(e_err <= 0.01, "weighted_E within 1% of 2 pi R^2");
    c.require(p_err <= 0.01, "psi within 1% of 2 pi R^2");
    c.require(l_err <= 0.01, "L^2 within 1% of 6 pi R^2");
    Ok(c)
}

fn c7_psi() -> Outcome {
    let grid = grid32();
    let u0 = shear_layer(&grid, 1.0);
    let h = grid.spacing();
    let schedule = MollifierSchedule::geometric(8.0 * h, 0.75, 6).map_err(err)?;
    let points: Vec<Point> = (0..grid.len())
        .map(|i| grid.position(i))
        .filter(|p| grid.in_core(*p, grid.box_length() / 8.0))
        .step_by(97)
        .collect();
    let table = psi_sequence(&u0, &grid, &schedule, &points).map_err(err)?;
    let mut c = Check::new();
    let strict = table.medians.windows(2).all(|w| w[1] < w[0]);
    c.value("first_median", table.medians[0]);
    c.value("last_median", *table.medians.last().unwrap());
    c.require(strict, "median psi^k strictly decreasing");
    let ball = Ball {
        center: grid.center(),
        radius: 1.0,
    };
    let ratios = (0..schedule.len())
        .map(|k| {
            hls_ratio(&u0, &grid, &schedule, k, &ball, 2.0)
                .map_err(err)?
                .value()
                .ok_or_else(|| "hls ratio undefined".to_string())
        })
        .collect::<std::result::Result<Vec<f64>, String>>()?;
    let m = median(&ratios);
    let worst = c.value("max_hls_over_median", ratios.iter().fold(0.0_f64, |a, &r| a.max(r / m)));
    c.require(worst <= 2.0, "hls_ratio <= 2x its median across k");
    Ok(c)
}

fn c8_interpolation() -> Outcome {
    let grid = grid32();
    let x = grid.center();
    let tuples = [
        Exponents::new(4.0, -0.25, -0.25, -0.25, 0.75),
        Exponents::new(3.0, -2.0 / 3.0, -0.5, -0.5, 2.0 / 3.0),
        Exponents::new(3.0, 0.0, 0.0, 0.0, 0.5),
        Exponents::new(6.0, 0.0, 0.0, 0.0, 1.0),
        Exponents::new(2.0, -1.0, 0.0, 0.0, 1.0),
    ];
    let mut c = Check::new();
    let mut ratios = vec![Vec::new(); tuples.len()];
    let mut dilation: f64 = 0.0;
    let dilated = grid.dilated(2.0).map_err(err)?;
    for seed in 0..100 {
        let u = random_field(&grid, 1000 + seed, 3, 1.0).map_err(err)?;
        for (i, e) in tuples.iter().enumerate() {
            let r = interpolation_ratio(&u, &grid, e, x).map_err(err)?;
            let v = r.value().ok_or_else(|| "ratio undefined".to_string())?;
            ratios[i].push(v);
            if seed < 5 {
                let d = interpolation_ratio(&u, &dilated, e, x.map(|c| c / 2.0)).map_err(err)?;
                let dv = d.value().ok_or_else(|| "ratio undefined".to_string())?;
                dilation = dilation.max((dv / v - 1.0).abs());
            }
        }
    }
    let worst = ratios.iter().fold(0.0_f64, |acc, r| {
        let m = median(r);
        r.iter().fold(acc, |a, &v| a.max(v / m))
    });
    c.value("max_ratio_over_median", worst);
    c.value("dilation_deviation", dilation);
    c.require(worst <= 3.0, "all ratios <= 3x the ensemble median");
    c.require(dilation <= 1e-8, "ratio invariant under dilation to 1e-8");
    Ok(c)
}

/// Sample point of the end-to-end budget check, off the flow's stagnation point.
pub fn budget_point(grid: &TorusGrid) -> Point {
    let c = grid.center();
    [c[0] + 0.5, c[1] + 0.3, c[2] + 0.2]
}

fn c9_budget() -> Outcome {
    let grid = grid32();
    let t_end = 0.25;
    let solver = Solver::new(grid, SolverConfig::new(5e-3, t_end)).map_err(err)?;
    let v0 = taylor_green(&grid, 0.05);
    let bump = curl_bump(&grid, grid.center(), 1.5, 1e-3);
    let u0: VectorLattice = std::array::from_fn(|i| v0[i].iter().zip(&bump[i]).map(|(a, b)| a + b).collect());
    let u = solver.run(&u0).map_err(err)?.into_result().map_err(err)?;
    let v = solver.run(&v0).map_err(err)?.into_result().map_err(err)?;
    let x = budget_point(&grid);
    let (epsilon1, c_mass) = (0.05, 1.0);
    let budget = weighted_budget(&u, &v, x, 0.0, c_mass).map_err(err)?;
    let mut c = Check::new();
    c.value("t_star", budget.t_star);
    c.value("max_H", budget.h_term.iter().fold(0.0_f64, |a, &b| a.max(b)));
    c.require(budget.hp_at_zero, "(HP) holds at t = 0");
    c.require(budget.hpn_holds_throughout(), "(HPN) holds on the run");
    c.require(budget.certified && budget.t_star >= t_end - 1e-12, "t_star covers the run");
    let delta = lemma41_delta(&u, x, budget.t_star, epsilon1, c_mass, 0.0).map_err(err)?;
    let d = delta.delta();
    c.value("delta", d.unwrap_or(f64::NAN));
    c.require(d.is_some_and(|d| d >= 1.0 / 7.0), "delta >= 1/7");
    let params = ScheduleParams {
        c_constant: c_mass,
        epsilon1,
        c0: 1.0,
        samples: 10,
    };
    let schedule = theorem_ti_schedule(&u, x, budget.t_star, d, &params);
    let passed = schedule.pass_count();
    c.value("schedule_passed", passed as f64);
    c.value(
        "max_decay",
        schedule
            .entries()
            .iter()
            .filter_map(|e| e.decay_value)
            .fold(0.0, f64::max),
    );
    c.require(passed == 10, "schedule passes 10/10 sampled s");
    Ok(c)
}

/// Failing samples along a segment of length `ell` at fixed time.
pub fn line_fixture(ell: f64, spacing: f64) -> Vec<SpaceTimePoint> {
    let count = (ell / spacing).round() as usize;
    (0..=count)
        .map(|i| SpaceTimePoint {
            t: 0.5,
            x: [1.0 + i as f64 * spacing, 2.0, 2.0],
        })
        .collect()
}

/// Small smooth run used by the covering and determinism checks.
pub fn smooth_config() -> RunConfig {
    RunConfig::from_toml(SMOOTH_CONFIG).expect("built-in config is valid")
}

pub const SMOOTH_CONFIG: &str = r#"
seed = 7

[grid]
n_per_axis = 32
box_length = 6.283185307179586

[solver]
dt = 0.005
t_end = 0.4

[initial]
kind = "taylor_green"
amplitude = 0.1

[sampling]
points = [[3.0, 3.2, 2.9], [3.6, 2.7, 3.3], [2.6, 3.5, 3.1]]
t_stride = 10
t_min = 0.3
radii = [0.6, 0.5, 0.4]
prop1_radius = 0.5

[sampling.mollifier]
first_radius = 1.2
ratio = 0.6
count = 4
"#;

fn smooth_map_json() -> std::result::Result<String, String> {
    let cfg = smooth_config();
    let solved = crate::analysis::solve(&cfg).map_err(err)?;
    if let Some(e) = solved.error {
        return Err(e.to_string());
    }
    Ok(analyze(&cfg, &solved.trajectory, &solved.reference).map_err(err)?.to_json())
}

fn c10_covering() -> Outcome {
    let mut c = Check::new();
    let (ell, rho) = (2.0, 0.1);
    let failing = line_fixture(ell, 0.01);
    let cover = singular_candidates(&failing, rho);
    let covered = failing
        .iter()
        .filter(|p| cover.cylinders.iter().any(|cyl| cyl.contains(p)))
        .count();
    let frac = c.value("covered_fraction", covered as f64 / failing.len() as f64);
    let dev = c.value("sum_r_deviation", (cover.sum_r / (ell / 2.0) - 1.0).abs());
    c.value("count", cover.count as f64);
    c.require(frac == 1.0, "every failing sample covered");
    c.require(dev <= 0.25, "sum r within 25% of l/2");
    let map = crate::report::RegularityMap::from_json(&smooth_map_json()?).map_err(err)?;
    let failing_smooth = map.count(SampleStatus::Failing);
    c.value("smooth_failures", failing_smooth as f64);
    c.value("smooth_sum_r", map.covering.sum_r);
    c.require(failing_smooth == 0 && map.covering.sum_r == 0.0, "smooth run has no failures and sum r = 0");
    c.require(map.count(SampleStatus::Regular) == map.samples.len(), "every smooth sample is certified");
    Ok(c)
}

/// Deterministic slice of the suite re-run inside each thread pool.
fn determinism_payload() -> std::result::Result<String, String> {
    let mut out = smooth_map_json()?;
    for check in [c1_pressure()?, c6_closed_form()?] {
        out.push_str(&serde_json::to_string(&check.measured).map_err(err)?);
    }
    Ok(out)
}

fn c11_determinism(threads: usize) -> Outcome {
    let run_in = |n: usize| -> std::result::Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(err)?;
        pool.install(determinism_payload)
    };
    let one = run_in(1)?;
    let many = run_in(threads.max(2))?;
    let mut c = Check::new();
    c.value("bytes", one.len() as f64);
    c.value("threads", threads.max(2) as f64);
    c.require(one == many, "reports byte-identical across thread counts");
    c.note(format!("1 vs {} threads", threads.max(2)));
    Ok(c)
}
