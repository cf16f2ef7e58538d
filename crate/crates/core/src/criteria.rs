//! Parabolic cylinders, the criterion functional M, regularity verdicts, the
//! δ-schedule, the cylinder schedule with its decay check, the region test
//! for small weighted data, and greedy covering of failing samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fields::FieldSnapshot;
use crate::grid::{magnitude_sq, Point, TorusGrid, VectorLattice};
use crate::quadrature::windowed_trapezoid;
use crate::solver::Trajectory;
use crate::weighted::{power_weighted_integral, weighted_d, weighted_e, KernelRule, WeightSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CylinderVariant {
    /// `(t − r², t) × B(x, r)`
    Q,
    /// `(t − 7r²/8, t + r²/8) × B(x, r)`
    QStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub t: f64,
    pub x: Point,
    pub r: f64,
    pub variant: CylinderVariant,
}

impl ParabolicCylinder {
    pub fn q(t: f64, x: Point, r: f64) -> Self {
        Self {
            t,
            x,
            r,
            variant: CylinderVariant::Q,
        }
    }

    pub fn q_star(t: f64, x: Point, r: f64) -> Self {
        Self {
            t,
            x,
            r,
            variant: CylinderVariant::QStar,
        }
    }

    pub fn time_span(&self) -> (f64, f64) {
        let r2 = self.r * self.r;
        match self.variant {
            CylinderVariant::Q => (self.t - r2, self.t),
            CylinderVariant::QStar => (self.t - 0.875 * r2, self.t + 0.125 * r2),
        }
    }

    /// The concentric cylinder of half the radius, same variant.
    pub fn half(&self) -> Self {
        Self { r: 0.5 * self.r, ..*self }
    }

    /// Checks the time span against the trajectory and the ball against the box.
    pub fn check(&self, traj: &Trajectory) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(CoreError::Cylinder(format!("radius must be positive, got {}", self.r)));
        }
        let (a, b) = self.time_span();
        let slack = 1e-9 * traj.config().dt;
        for t in [a, b] {
            if t < traj.start_time() - slack || t > traj.end_time() + slack {
                return Err(CoreError::TimeOutOfRange {
                    time: t,
                    start: traj.start_time(),
                    end: traj.end_time(),
                });
            }
        }
        if !traj.grid().in_core(self.x, self.r) {
            return Err(CoreError::Cylinder(format!(
                "ball of radius {} around {:?} leaves the box",
                self.r, self.x
            )));
        }
        Ok(())
    }
}

/// Cells overlapping `B(x, r)` with the fraction of their 8 corners inside.
pub fn ball_weights(grid: &TorusGrid, x: Point, r: f64) -> Vec<(usize, f64)> {
    let h = grid.spacing();
    let reach = r + h;
    let r2 = r * r;
    let mut out = Vec::new();
    for idx in 0..grid.len() {
        let d = grid.displacement(x, idx);
        if d.iter().any(|v| v.abs() > reach) {
            continue;
        }
        let mut inside = 0;
        for corner in 0..8 {
            let mut s = 0.0;
            for (axis, &dv) in d.iter().enumerate() {
                let off = if corner >> axis & 1 == 1 { 0.5 * h } else { -0.5 * h };
                let c = dv + off;
                s += c * c;
            }
            if s <= r2 {
                inside += 1;
            }
        }
        if inside > 0 {
            out.push((idx, inside as f64 / 8.0));
        }
    }
    out
}

/// Grid points with `|y − x| ≤ r`.
fn ball_points(grid: &TorusGrid, x: Point, r: f64) -> Vec<usize> {
    (0..grid.len())
        .filter(|&idx| crate::grid::norm(grid.displacement(x, idx)) <= r)
        .collect()
}

/// Snapshot index range bracketing `[a, b]`.
fn bracket(traj: &Trajectory, a: f64, b: f64) -> (usize, usize) {
    let snaps = traj.snapshots();
    let lo = snaps.partition_point(|s| s.time() <= a).saturating_sub(1);
    let hi = snaps.partition_point(|s| s.time() < b).min(snaps.len() - 1);
    (lo, hi)
}

/// Integrates per-snapshot spatial values over `[a, b]` in time.
fn time_integral<F>(traj: &Trajectory, a: f64, b: f64, f: F) -> Vec<f64>
where
    F: Fn(&FieldSnapshot) -> Vec<f64> + Sync,
{
    let (lo, hi) = bracket(traj, a, b);
    let snaps = &traj.snapshots()[lo..=hi];
    let times: Vec<f64> = snaps.iter().map(|s| s.time()).collect();
    let rows: Vec<Vec<f64>> = snaps.par_iter().map(&f).collect();
    let width = rows.first().map_or(0, |r| r.len());
    (0..width)
        .map(|k| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            windowed_trapezoid(&times, &col, a, b)
        })
        .collect()
}

/// Test hook for the criterion functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MHook {
    #[default]
    Standard,
    /// Uses `r^(+13/4)` on the pressure term; breaks scale invariance.
    FlippedPressureExponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MValue {
    pub total: f64,
    /// `r⁻² ∬ |u|³`
    pub velocity_term: f64,
    /// `r⁻² ∬ |u||π|`
    pub mixed_term: f64,
    /// `r^(−13/4) ∫ (∫ |π|)^(5/4)`
    pub pressure_term: f64,
}

/// M(t, x, r) over a past cylinder.
pub fn m_functional(traj: &Trajectory, cyl: &ParabolicCylinder) -> Result<MValue> {
    m_functional_with(traj, cyl, MHook::Standard)
}

pub fn m_functional_with(traj: &Trajectory, cyl: &ParabolicCylinder, hook: MHook) -> Result<MValue> {
    if cyl.variant != CylinderVariant::Q {
        return Err(CoreError::Cylinder("M is defined on the past cylinder Q".into()));
    }
    cyl.check(traj)?;
    let grid = *traj.grid();
    let weights = ball_weights(&grid, cyl.x, cyl.r);
    let h3 = grid.cell_volume();
    let (a, b) = cyl.time_span();
    let integrals = time_integral(traj, a, b, |snap| {
        let u = snap.velocity();
        let p = snap.pressure();
        let (mut cube, mut mixed, mut pres) = (0.0, 0.0, 0.0);
        for &(idx, w) in &weights {
            let speed = (u[0][idx] * u[0][idx] + u[1][idx] * u[1][idx] + u[2][idx] * u[2][idx]).sqrt();
            cube += w * speed * speed * speed;
            mixed += w * speed * p[idx].abs();
            pres += w * p[idx].abs();
        }
        vec![cube * h3, mixed * h3, (pres * h3).powf(1.25)]
    });
    let r = cyl.r;
    let exponent = match hook {
        MHook::Standard => -3.25,
        MHook::FlippedPressureExponent => 3.25,
    };
    let velocity_term = integrals[0] / (r * r);
    let mixed_term = integrals[1] / (r * r);
    let pressure_term = r.powf(exponent) * integrals[2];
    Ok(MValue {
        total: velocity_term + mixed_term + pressure_term,
        velocity_term,
        mixed_term,
        pressure_term,
    })
}

/// Largest `|u|` over grid samples of the cylinder.
pub fn cylinder_sup(traj: &Trajectory, cyl: &ParabolicCylinder) -> f64 {
    let (a, b) = cyl.time_span();
    let points = ball_points(traj.grid(), cyl.x, cyl.r);
    traj.snapshots_between(a, b)
        .iter()
        .map(|s| {
            let u = s.velocity();
            points
                .iter()
                .map(|&i| (u[0][i] * u[0][i] + u[1][i] * u[1][i] + u[2][i] * u[2][i]).sqrt())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CknVerdict {
    pub m: MValue,
    pub epsilon1: f64,
    pub passes: bool,
    /// `√c₁ / r` with `c₁ = c₀ ε₁^(2/3)`
    pub sup_bound: f64,
    /// max `|u|` over grid samples of `Q_{r/2}`
    pub measured_sup: f64,
}

pub fn prop1_verdict(traj: &Trajectory, cyl: &ParabolicCylinder, epsilon1: f64, c0: f64) -> Result<CknVerdict> {
    let m = m_functional(traj, cyl)?;
    let c1 = c0 * epsilon1.powf(2.0 / 3.0);
    Ok(CknVerdict {
        m,
        epsilon1,
        passes: m.total <= epsilon1,
        sup_bound: c1.sqrt() / cyl.r,
        measured_sup: cylinder_sup(traj, &cyl.half()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Result {
    pub value: f64,
    /// `(r, r⁻¹ ∬_{Q*_r} |∇u|²)` per admissible radius
    pub table: Vec<(f64, f64)>,
    pub epsilon3: f64,
    pub passes: bool,
    /// Set when only one radius was supplied.
    pub no_limsup: bool,
}

/// Max of `r⁻¹ ∬_{Q*_r} |∇u|²` over the three smallest radii.
pub fn prop2_limsup(traj: &Trajectory, t: f64, x: Point, radii: &[f64], epsilon3: f64) -> Result<Prop2Result> {
    if radii.is_empty() {
        return Err(CoreError::Rejected("prop2 needs at least one radius".into()));
    }
    let floor = 2.0 * traj.grid().spacing();
    if let Some(&r) = radii.iter().find(|&&r| r < floor) {
        return Err(CoreError::BelowResolution { radius: r, floor });
    }
    let mut sorted = radii.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let grid = *traj.grid();
    let h3 = grid.cell_volume();
    let table = sorted
        .iter()
        .map(|&r| {
            let cyl = ParabolicCylinder::q_star(t, x, r);
            cyl.check(traj)?;
            let weights = ball_weights(&grid, x, r);
            let (a, b) = cyl.time_span();
            let v = time_integral(traj, a, b, |snap| {
                let g = snap.grad_sq();
                vec![weights.iter().map(|&(i, w)| w * g[i]).sum::<f64>() * h3]
            });
            Ok((r, v[0] / r))
        })
        .collect::<Result<Vec<_>>>()?;
    let tail = &table[table.len().saturating_sub(3)..];
    let value = tail.iter().map(|&(_, v)| v).fold(0.0, f64::max);
    Ok(Prop2Result {
        value,
        passes: value <= epsilon3,
        epsilon3,
        no_limsup: table.len() == 1,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DeltaOutcome {
    Found { delta: f64 },
    NoSchedule { offending_t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub outcome: DeltaOutcome,
    /// `(t, ε₁ − (N₁ + N₂))` at the returned δ
    pub margins: Vec<(f64, f64)>,
}

impl DeltaResult {
    pub fn delta(&self) -> Option<f64> {
        match self.outcome {
            DeltaOutcome::Found { delta } => Some(delta),
            DeltaOutcome::NoSchedule { .. } => None,
        }
    }
}

/// Resolution of the δ bisection grid.
pub const DELTA_BITS: i32 = 20;

/// Largest δ on a dyadic grid such that `N₁ + N₂ < ε₁` for every sampled
/// `t ∈ (0, t_star]`, with `N₁ = c∫𝓔^(1/2)𝓓` over `((1−δ)t, t)` and
/// `N₂ = N₁^(5/6)`.
pub fn lemma41_delta(traj: &Trajectory, x: Point, t_star: f64, epsilon1: f64, c: f64, mu: f64) -> Result<DeltaResult> {
    if !(t_star > 0.0) {
        return Err(CoreError::Precondition(format!(
            "lemma41_delta needs a certified horizon t_star > 0, got {t_star}"
        )));
    }
    let spec = WeightSpec::new(x, mu);
    let rule = if mu == 0.0 { KernelRule::SingularCell } else { KernelRule::Midpoint };
    let snaps = traj.snapshots();
    let times = traj.times();
    let f: Vec<f64> = snaps
        .par_iter()
        .map(|s| Ok(weighted_e(s, &spec, rule)?.max(0.0).sqrt() * weighted_d(s, &spec, rule)?))
        .collect::<Result<_>>()?;
    let slack = 1e-9 * traj.config().dt;
    let sample_t: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0 && t <= t_star + slack).collect();
    let surrogate = |delta: f64, t: f64| {
        let n1 = c * windowed_trapezoid(&times, &f, (1.0 - delta) * t, t);
        n1 + n1.max(0.0).powf(5.0 / 6.0)
    };
    let first_failure = |delta: f64| sample_t.iter().copied().find(|&t| !(surrogate(delta, t) < epsilon1));
    let grid_eps = 2f64.powi(-DELTA_BITS);
    let delta = if first_failure(1.0 - grid_eps).is_none() {
        1.0 - grid_eps
    } else if let Some(t) = first_failure(grid_eps) {
        return Ok(DeltaResult {
            outcome: DeltaOutcome::NoSchedule { offending_t: t },
            margins: sample_t.iter().map(|&t| (t, epsilon1 - surrogate(grid_eps, t))).collect(),
        });
    } else {
        let (mut lo, mut hi) = (grid_eps, 1.0 - grid_eps);
        for _ in 0..DELTA_BITS {
            let mid = 0.5 * (lo + hi);
            if first_failure(mid).is_none() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Ok(DeltaResult {
        outcome: DeltaOutcome::Found { delta },
        margins: sample_t.iter().map(|&t| (t, epsilon1 - surrogate(delta, t))).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub s: f64,
    pub cylinder: ParabolicCylinder,
    pub m_value: Option<f64>,
    pub prop1_pass: bool,
    /// sup over `Q_{r/2}` grid samples of `|u(τ, y)| τ^(1/2)`
    pub decay_value: Option<f64>,
    pub decay_pass: bool,
    pub error: Option<String>,
}

impl ScheduleEntry {
    pub fn passes(&self) -> bool {
        self.error.is_none() && self.prop1_pass && self.decay_pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScheduleReport {
    Available { entries: Vec<ScheduleEntry> },
    Unavailable { reason: String },
}

impl ScheduleReport {
    pub fn entries(&self) -> &[ScheduleEntry] {
        match self {
            ScheduleReport::Available { entries } => entries,
            ScheduleReport::Unavailable { .. } => &[],
        }
    }

    pub fn pass_count(&self) -> usize {
        self.entries().iter().filter(|e| e.passes()).count()
    }
}

/// Parameters of the cylinder schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub c_constant: f64,
    pub epsilon1: f64,
    pub c0: f64,
    pub samples: usize,
}

/// Cylinders `Q_{√s}(7s/6, x)` for `s` spread over `(0, 6 t_star / 7)`, each
/// with its criterion verdict and the decay check `|u| τ^(1/2) ≤ c` on `Q_{√s/2}`.
/// The window `(s/6, 7s/6)` is the fraction `6/7` of its end time, so `δ ≥ 6/7`
/// is required.
pub fn theorem_ti_schedule(traj: &Trajectory, x: Point, t_star: f64, delta: Option<f64>, params: &ScheduleParams) -> ScheduleReport {
    if !(t_star > 0.0) {
        return ScheduleReport::Unavailable {
            reason: format!("no certified horizon (t_star = {t_star})"),
        };
    }
    match delta {
        None => {
            return ScheduleReport::Unavailable {
                reason: "lemma41_delta found no schedule".into(),
            }
        }
        Some(d) if d * 7.0 < 6.0 => {
            return ScheduleReport::Unavailable {
                reason: format!("delta = {d} is below the window fraction 6/7 the schedule uses"),
            }
        }
        _ => {}
    }
    let span = 6.0 / 7.0 * t_star;
    let entries = (0..params.samples)
        .map(|i| {
            let s = span * (i as f64 + 0.5) / params.samples as f64;
            schedule_entry(traj, x, s, params)
        })
        .collect();
    ScheduleReport::Available { entries }
}

/// Entry for a single `s`; range problems are recorded, not raised.
pub fn schedule_entry(traj: &Trajectory, x: Point, s: f64, params: &ScheduleParams) -> ScheduleEntry {
    let r = s.sqrt();
    let cylinder = ParabolicCylinder::q(7.0 * s / 6.0, x, r);
    let mut entry = ScheduleEntry {
        s,
        cylinder,
        m_value: None,
        prop1_pass: false,
        decay_value: None,
        decay_pass: false,
        error: None,
    };
    match prop1_verdict(traj, &cylinder, params.epsilon1, params.c0) {
        Ok(v) => {
            entry.m_value = Some(v.m.total);
            entry.prop1_pass = v.passes;
            let half = cylinder.half();
            let (a, b) = half.time_span();
            let points = ball_points(traj.grid(), x, half.r);
            let decay = traj
                .snapshots_between(a, b)
                .iter()
                .map(|snap| {
                    let sq = magnitude_sq(snap.velocity());
                    points.iter().map(|&i| sq[i].sqrt()).fold(0.0, f64::max) * snap.time().sqrt()
                })
                .fold(0.0, f64::max);
            entry.decay_value = Some(decay);
            entry.decay_pass = decay <= params.c_constant;
        }
        Err(e) => entry.error = Some(e.to_string()),
    }
    entry
}

/// `L = ‖u₀ |x|^(−1/2)‖₂` with the weight centered at the box center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialDataGauge {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
}

pub fn weighted_data_norm(u0: &VectorLattice, grid: &TorusGrid, l0: f64) -> Result<InitialDataGauge> {
    grid.check_vector(u0)?;
    let l2 = power_weighted_integral(&magnitude_sq(u0), grid, grid.center(), -1.0);
    Ok(InitialDataGauge { l: l2.max(0.0).sqrt(), l0 })
}

/// Membership in `{(t, x) : |x|² < t (L₀ − L)}`; `x` is measured from the weight center.
pub fn thmd_region(gauge: &InitialDataGauge, t: f64, x_rel: Point) -> bool {
    if !(gauge.l < gauge.l0) {
        return false;
    }
    let x2 = x_rel[0] * x_rel[0] + x_rel[1] * x_rel[1] + x_rel[2] * x_rel[2];
    x2 < t * (gauge.l0 - gauge.l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Point,
}

/// Closed cylinder `|y − c| ≤ r`, `|s − t_c| ≤ r²` used by the cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverCylinder {
    pub t: f64,
    pub x: Point,
    pub r: f64,
}

impl CoverCylinder {
    pub fn contains(&self, p: &SpaceTimePoint) -> bool {
        parabolic_distance(&SpaceTimePoint { t: self.t, x: self.x }, p) <= self.r * (1.0 + 1e-12)
    }
}

/// `max(|x − y|, |t − s|^(1/2))`
pub fn parabolic_distance(a: &SpaceTimePoint, b: &SpaceTimePoint) -> f64 {
    let d = [a.x[0] - b.x[0], a.x[1] - b.x[1], a.x[2] - b.x[2]];
    crate::grid::norm(d).max((a.t - b.t).abs().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covering {
    pub count: usize,
    pub sum_r: f64,
    pub cylinders: Vec<CoverCylinder>,
}

/// Greedy cover: samples sorted by time then position; each step takes the
/// first uncovered sample, gathers uncovered samples within parabolic
/// distance `2ρ`, and covers them with a cylinder centered on their bounding
/// box, of radius at least `ρ`.
pub fn singular_candidates(failing: &[SpaceTimePoint], min_radius: f64) -> Covering {
    let mut pts = failing.to_vec();
    pts.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then(a.x[0].total_cmp(&b.x[0]))
            .then(a.x[1].total_cmp(&b.x[1]))
            .then(a.x[2].total_cmp(&b.x[2]))
    });
    let mut covered = vec![false; pts.len()];
    let mut cylinders = Vec::new();
    while let Some(first) = covered.iter().position(|&c| !c) {
        let seed = pts[first];
        let cluster: Vec<usize> = (first..pts.len())
            .filter(|&i| !covered[i] && parabolic_distance(&seed, &pts[i]) <= 2.0 * min_radius)
            .collect();
        let mut lo = [seed.t, seed.x[0], seed.x[1], seed.x[2]];
        let mut hi = lo;
        for &i in &cluster {
            let p = pts[i];
            for (k, v) in [p.t, p.x[0], p.x[1], p.x[2]].into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let mid: Vec<f64> = (0..4).map(|k| 0.5 * (lo[k] + hi[k])).collect();
        let center = SpaceTimePoint {
            t: mid[0],
            x: [mid[1], mid[2], mid[3]],
        };
        let needed = cluster
            .iter()
            .map(|&i| parabolic_distance(&center, &pts[i]))
            .fold(0.0, f64::max);
        let cyl = CoverCylinder {
            t: center.t,
            x: center.x,
            r: needed.max(min_radius),
        };
        for (i, p) in pts.iter().enumerate() {
            if !covered[i] && cyl.contains(p) {
                covered[i] = true;
            }
        }
        cylinders.push(cyl);
    }
    Covering {
        count: cylinders.len(),
        sum_r: cylinders.iter().fold(0.0, |acc, c| acc + c.r),
        cylinders,
    }
}

/// Rescaled trajectory `λ u(λ² t, λ x)`, `λ² π(λ² t, λ x)` on the box `L/λ`.
pub fn ns_rescale(traj: &Trajectory, lambda: f64) -> Result<Trajectory> {
    let grid = traj.grid().dilated(lambda)?;
    let l2 = lambda * lambda;
    let snaps = traj
        .snapshots()
        .iter()
        .map(|s| {
            let v = s.velocity().clone().map(|c| c.into_iter().map(|x| x * lambda).collect());
            let p = s.pressure().iter().map(|x| x * l2).collect();
            FieldSnapshot::new(grid, s.time() / l2, v, p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = *traj.config();
    cfg.dt /= l2;
    cfg.t_end /= l2;
    Trajectory::new(cfg, snaps, Vec::new())
}
