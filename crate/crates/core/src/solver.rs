//! Pseudo-spectral integration of the unit-viscosity Navier-Stokes equations
//! with an integrating-factor RK4 scheme and energy-residual checks.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fields::{leray_project, project_spectral, FieldSnapshot};
use crate::grid::{magnitude_sq, max_abs, Point, TorusGrid, VectorLattice};
use crate::pressure::{pressure_unchecked, PAIRS};
use crate::quadrature::{corrected_trapezoid, trapezoid};
use crate::spectral::{Complex, Spectral, SpectralLattice, SpectralVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_dealias")]
    pub dealias: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_cfl")]
    pub cfl_cap: f64,
}

fn default_dealias() -> f64 {
    2.0 / 3.0
}
fn default_stride() -> usize {
    1
}
fn default_cfl() -> f64 {
    1.0
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            dealias: default_dealias(),
            snapshot_stride: default_stride(),
            cfl_cap: default_cfl(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Configuration(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("solver.dt must be positive, got {}", self.dt));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return bad(format!("solver.t_end must be positive, got {}", self.t_end));
        }
        if !(self.dealias > 0.0 && self.dealias <= 1.0) {
            return bad(format!("solver.dealias must lie in (0, 1], got {}", self.dealias));
        }
        if self.snapshot_stride == 0 {
            return bad("solver.snapshot_stride must be positive".into());
        }
        if !(self.cfl_cap.is_finite() && self.cfl_cap > 0.0) {
            return bad(format!("solver.cfl_cap must be positive, got {}", self.cfl_cap));
        }
        Ok(())
    }

    /// Global step index of the final time.
    pub fn total_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn step_index(&self, time: f64) -> usize {
        (time / self.dt).round() as usize
    }
}

/// Selects the nonlinear term. `Disabled` leaves the Stokes problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    #[default]
    Full,
    Disabled,
}

/// Per-step values recorded at every time node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub time: f64,
    /// `‖u‖₂²`
    pub energy: f64,
    /// `‖∇u‖₂²`
    pub enstrophy: f64,
    /// `d/dt ‖∇u‖₂²`
    pub enstrophy_rate: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: TorusGrid,
    config: SolverConfig,
    snapshots: Vec<FieldSnapshot>,
    ledger: Vec<LedgerEntry>,
}

impl Trajectory {
    pub fn new(config: SolverConfig, snapshots: Vec<FieldSnapshot>, ledger: Vec<LedgerEntry>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| CoreError::Rejected("trajectory has no snapshots".into()))?;
        let grid = *first.grid();
        if snapshots.iter().any(|s| *s.grid() != grid) {
            return Err(CoreError::GridMismatch("snapshots use different grids".into()));
        }
        if snapshots.windows(2).any(|w| w[1].time() <= w[0].time()) {
            return Err(CoreError::Rejected("snapshot times must be strictly increasing".into()));
        }
        if ledger.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(CoreError::Rejected("ledger times must be strictly increasing".into()));
        }
        if snapshots.iter().any(|s| !s.energy().is_finite()) {
            return Err(CoreError::Rejected("snapshot energy is not finite".into()));
        }
        Ok(Self {
            grid,
            config,
            snapshots,
            ledger,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn viscosity(&self) -> f64 {
        1.0
    }

    pub fn snapshots(&self) -> &[FieldSnapshot] {
        &self.snapshots
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time()).collect()
    }

    pub fn start_time(&self) -> f64 {
        self.snapshots[0].time()
    }

    pub fn end_time(&self) -> f64 {
        self.snapshots[self.snapshots.len() - 1].time()
    }

    fn range_error(&self, time: f64) -> CoreError {
        CoreError::TimeOutOfRange {
            time,
            start: self.start_time(),
            end: self.end_time(),
        }
    }

    fn check_range(&self, time: f64) -> Result<()> {
        let slack = 1e-9 * self.config.dt;
        if !(time >= self.start_time() - slack && time <= self.end_time() + slack) {
            return Err(self.range_error(time));
        }
        Ok(())
    }

    /// Index of the snapshot sampled at `time`.
    pub fn snapshot_index(&self, time: f64) -> Result<usize> {
        self.check_range(time)?;
        find_node(self.snapshots.iter().map(|s| s.time()), time, self.config.dt)
    }

    /// Index of the ledger node at `time`.
    pub fn ledger_index(&self, time: f64) -> Result<usize> {
        self.check_range(time)?;
        find_node(self.ledger.iter().map(|e| e.time), time, self.config.dt)
    }

    /// Snapshots whose times fall in `[a, b]` (with a small tolerance).
    pub fn snapshots_between(&self, a: f64, b: f64) -> &[FieldSnapshot] {
        let slack = 1e-9 * self.config.dt;
        let lo = self.snapshots.partition_point(|s| s.time() < a - slack);
        let hi = self.snapshots.partition_point(|s| s.time() <= b + slack);
        &self.snapshots[lo..hi.max(lo)]
    }

    /// Pointwise difference `self − other` at every snapshot.
    pub fn difference(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.grid != other.grid {
            return Err(CoreError::Rejected("trajectories use different grids".into()));
        }
        if self.snapshots.len() != other.snapshots.len()
            || self
                .snapshots
                .iter()
                .zip(&other.snapshots)
                .any(|(a, b)| a.time().to_bits() != b.time().to_bits())
        {
            return Err(CoreError::Rejected("trajectories have different time sampling".into()));
        }
        let snaps = self
            .snapshots
            .iter()
            .zip(&other.snapshots)
            .map(|(a, b)| {
                let sub = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p - q).collect() };
                let v = std::array::from_fn(|c| sub(&a.velocity()[c], &b.velocity()[c]));
                FieldSnapshot::new(self.grid, a.time(), v, sub(a.pressure(), b.pressure()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            grid: self.grid,
            config: self.config,
            snapshots: snaps,
            ledger: Vec::new(),
        })
    }

    /// Trajectory with velocity scaled by `lambda` (pressure by `lambda²`).
    pub fn scaled(&self, lambda: f64) -> Trajectory {
        Trajectory {
            grid: self.grid,
            config: self.config,
            snapshots: self.snapshots.iter().map(|s| s.scaled(lambda)).collect(),
            ledger: Vec::new(),
        }
    }
}

fn find_node(times: impl Iterator<Item = f64>, time: f64, dt: f64) -> Result<usize> {
    let slack = 1e-9 * dt;
    times
        .enumerate()
        .find(|(_, t)| (t - time).abs() <= slack)
        .map(|(i, _)| i)
        .ok_or(CoreError::NotANode { time })
}

/// A run's trajectory together with the error that stopped it, if any.
#[derive(Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub error: Option<CoreError>,
}

impl RunOutcome {
    pub fn into_result(self) -> Result<Trajectory> {
        match self.error {
            None => Ok(self.trajectory),
            Some(e) => Err(e),
        }
    }
}

pub struct Solver {
    grid: TorusGrid,
    config: SolverConfig,
    nonlinearity: Nonlinearity,
    sp: Arc<Spectral>,
    mask: Vec<bool>,
    k_sq: Vec<f64>,
}

impl Solver {
    pub fn new(grid: TorusGrid, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let sp = Spectral::shared(&grid);
        let mask = sp.dealias_mask(config.dealias);
        let k_sq = (0..grid.len()).map(|i| sp.k_sq(i)).collect();
        Ok(Self {
            grid,
            config,
            nonlinearity: Nonlinearity::Full,
            sp,
            mask,
            k_sq,
        })
    }

    pub fn with_nonlinearity(mut self, nonlinearity: Nonlinearity) -> Self {
        self.nonlinearity = nonlinearity;
        self
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Dealiased, projected `−∇·(u ⊗ u)` in spectral space.
    fn nonlinear(&self, hat: &SpectralVector) -> SpectralVector {
        let len = self.grid.len();
        if self.nonlinearity == Nonlinearity::Disabled {
            return std::array::from_fn(|_| vec![Complex::default(); len]);
        }
        let u = self.sp.inverse_vector(hat);
        let products: Vec<SpectralLattice> = PAIRS
            .iter()
            .map(|&(i, j)| {
                let prod: Vec<f64> = u[i].iter().zip(&u[j]).map(|(a, b)| a * b).collect();
                self.sp.forward(&prod)
            })
            .collect();
        let mut out: SpectralVector = std::array::from_fn(|_| vec![Complex::default(); len]);
        let pair = |i: usize, j: usize| -> usize {
            PAIRS
                .iter()
                .position(|&(a, b)| (a, b) == (i.min(j), i.max(j)))
                .expect("pair exists")
        };
        let index: [[usize; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| pair(i, j)));
        for idx in 0..len {
            if !self.mask[idx] {
                continue;
            }
            let k = self.sp.k_vec(idx);
            for i in 0..3 {
                let mut s = Complex::default();
                for (j, kj) in k.iter().enumerate() {
                    s += products[index[i][j]][idx] * *kj;
                }
                // −i s
                out[i][idx] = Complex::new(s.im, -s.re);
            }
        }
        project_spectral(&self.sp, &mut out);
        out
    }

    fn spectral_state(&self, velocity: &VectorLattice) -> SpectralVector {
        let mut hat = self.sp.forward_vector(velocity);
        project_spectral(&self.sp, &mut hat);
        hat
    }

    /// `û_t = −|k|² û + N(û)`.
    fn spectral_rate(&self, hat: &SpectralVector, nl: &SpectralVector) -> SpectralVector {
        std::array::from_fn(|c| {
            hat[c]
                .iter()
                .zip(&nl[c])
                .zip(&self.k_sq)
                .map(|((u, n), k2)| -*u * *k2 + *n)
                .collect()
        })
    }

    /// Physical-space `∂_t u` of the discrete system at `velocity`.
    pub fn time_derivative(&self, velocity: &VectorLattice) -> VectorLattice {
        let hat = self.spectral_state(velocity);
        let nl = self.nonlinear(&hat);
        self.sp.inverse_vector(&self.spectral_rate(&hat, &nl))
    }

    fn ledger_entry(&self, time: f64, velocity: &VectorLattice, hat: &SpectralVector, nl: &SpectralVector) -> LedgerEntry {
        let scale = self.grid.cell_volume() / self.grid.len() as f64;
        let rate = self.spectral_rate(hat, nl);
        let mut enstrophy = 0.0;
        let mut enstrophy_rate = 0.0;
        for c in 0..3 {
            for idx in 0..self.grid.len() {
                let k2 = self.k_sq[idx];
                enstrophy += k2 * hat[c][idx].norm_sqr();
                enstrophy_rate += 2.0 * k2 * (hat[c][idx].conj() * rate[c][idx]).re;
            }
        }
        LedgerEntry {
            time,
            energy: self.grid.integrate(&magnitude_sq(velocity)),
            enstrophy: enstrophy * scale,
            enstrophy_rate: enstrophy_rate * scale,
        }
    }

    fn check_cfl(&self, time: f64, velocity: &VectorLattice) -> Result<()> {
        let speed = max_abs(&magnitude_sq(velocity)).sqrt();
        if speed > 0.0 {
            let limit_dt = self.config.cfl_cap * self.grid.spacing() / speed;
            if self.config.dt > limit_dt {
                return Err(CoreError::CflViolation {
                    time,
                    max_speed: speed,
                    limit_dt,
                });
            }
        }
        Ok(())
    }

    /// One IF-RK4 step from the physical state; returns the new velocity and
    /// the ledger entry at the starting node.
    fn advance(&self, time: f64, velocity: &VectorLattice) -> Result<(VectorLattice, LedgerEntry)> {
        self.check_cfl(time, velocity)?;
        let dt = self.config.dt;
        let hat = self.spectral_state(velocity);
        let e_full: Vec<f64> = self.k_sq.iter().map(|k2| (-k2 * dt).exp()).collect();
        let e_half: Vec<f64> = self.k_sq.iter().map(|k2| (-k2 * 0.5 * dt).exp()).collect();
        let combine = |f: &dyn Fn(usize, usize) -> Complex| -> SpectralVector {
            std::array::from_fn(|c| (0..self.grid.len()).map(|i| f(c, i)).collect())
        };

        let k1 = self.nonlinear(&hat);
        let entry = self.ledger_entry(time, velocity, &hat, &k1);
        let a = combine(&|c, i| (hat[c][i] + k1[c][i] * (0.5 * dt)) * e_half[i]);
        let k2 = self.nonlinear(&a);
        let b = combine(&|c, i| hat[c][i] * e_half[i] + k2[c][i] * (0.5 * dt));
        let k3 = self.nonlinear(&b);
        let d = combine(&|c, i| hat[c][i] * e_full[i] + k3[c][i] * (dt * e_half[i]));
        let k4 = self.nonlinear(&d);
        let next = combine(&|c, i| {
            hat[c][i] * e_full[i]
                + (k1[c][i] * e_full[i] + (k2[c][i] + k3[c][i]) * (2.0 * e_half[i]) + k4[c][i]) * (dt / 6.0)
        });
        let out = self.sp.inverse_vector(&next);
        if out.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(CoreError::BlowUp { last_valid_time: time });
        }
        Ok((out, entry))
    }

    fn snapshot(&self, time: f64, velocity: VectorLattice) -> FieldSnapshot {
        let pressure = pressure_unchecked(&velocity, &self.grid);
        FieldSnapshot::new(self.grid, time, velocity, pressure).expect("solver state has grid shape")
    }

    /// Single step from `state`, pressure recomputed.
    pub fn step(&self, state: &FieldSnapshot) -> Result<FieldSnapshot> {
        let n0 = self.config.step_index(state.time());
        let (u, _) = self.advance(state.time(), state.velocity())?;
        Ok(self.snapshot((n0 + 1) as f64 * self.config.dt, u))
    }

    /// Projects `u0` and integrates from `t = 0` to `t_end`.
    pub fn run(&self, u0: &VectorLattice) -> Result<RunOutcome> {
        let velocity = leray_project(u0, &self.grid)?;
        Ok(self.integrate(0, velocity))
    }

    /// Continues from an emitted snapshot; the tail matches the original run bit for bit.
    pub fn run_from(&self, start: &FieldSnapshot) -> Result<RunOutcome> {
        if *start.grid() != self.grid {
            return Err(CoreError::GridMismatch("start snapshot grid differs from solver grid".into()));
        }
        Ok(self.integrate(self.config.step_index(start.time()), start.velocity().clone()))
    }

    fn integrate(&self, first_step: usize, mut velocity: VectorLattice) -> RunOutcome {
        let dt = self.config.dt;
        let total = self.config.total_steps();
        let stride = self.config.snapshot_stride;
        let mut snapshots = vec![self.snapshot(first_step as f64 * dt, velocity.clone())];
        let mut ledger = Vec::with_capacity(total.saturating_sub(first_step) + 1);
        let mut error = None;
        let mut step = first_step;
        while step < total {
            let time = step as f64 * dt;
            match self.advance(time, &velocity) {
                Ok((next, entry)) => {
                    ledger.push(entry);
                    velocity = next;
                    step += 1;
                    if step % stride == 0 || step == total {
                        snapshots.push(self.snapshot(step as f64 * dt, velocity.clone()));
                    }
                }
                Err(e) => {
                    error = Some(e);
                    break;
                }
            }
        }
        if error.is_none() {
            let hat = self.spectral_state(&velocity);
            let nl = self.nonlinear(&hat);
            ledger.push(self.ledger_entry(step as f64 * dt, &velocity, &hat, &nl));
        }
        let trajectory = Trajectory {
            grid: self.grid,
            config: self.config,
            snapshots,
            ledger,
        };
        RunOutcome { trajectory, error }
    }
}

/// `R = ‖u(t)‖² + 2∫ₛᵗ ‖∇u‖² dτ − ‖u(s)‖²` using the ledger and the
/// endpoint-corrected trapezoid rule.
pub fn strong_energy_residual(traj: &Trajectory, s: f64, t: f64) -> Result<f64> {
    if !(s < t) {
        return Err(CoreError::Precondition(format!("need s < t, got s = {s}, t = {t}")));
    }
    let a = traj.ledger_index(s)?;
    let b = traj.ledger_index(t)?;
    let nodes = &traj.ledger()[a..=b];
    let times: Vec<f64> = nodes.iter().map(|e| e.time).collect();
    let values: Vec<f64> = nodes.iter().map(|e| 2.0 * e.enstrophy).collect();
    let derivs: Vec<f64> = nodes.iter().map(|e| 2.0 * e.enstrophy_rate).collect();
    let dissipation = corrected_trapezoid(&times, &values, &derivs);
    Ok(nodes[nodes.len() - 1].energy + dissipation - nodes[0].energy)
}

/// Cutoff in one variable: a smooth bump of given radius, or identically one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cutoff {
    Bump { radius: f64, sharpness: f64 },
    Constant,
}

impl Cutoff {
    /// Value and first two derivatives at signed distance `d` from the center.
    pub fn eval(&self, d: f64) -> [f64; 3] {
        match *self {
            Cutoff::Constant => [1.0, 0.0, 0.0],
            Cutoff::Bump { radius, sharpness } => {
                let [b, b1, b2] = bump(d / radius, sharpness);
                [b, b1 / radius, b2 / (radius * radius)]
            }
        }
    }
}

/// `b(s) = exp(α(1 − 1/(1 − s²)))` with `b(0) = 1`, and its derivatives.
pub fn bump(s: f64, alpha: f64) -> [f64; 3] {
    if s.abs() >= 1.0 {
        return [0.0; 3];
    }
    let q = 1.0 - s * s;
    let b = (alpha * (1.0 - 1.0 / q)).exp();
    let a1 = -2.0 * alpha * s / (q * q);
    let a1p = -alpha * (2.0 / (q * q) + 8.0 * s * s / (q * q * q));
    [b, b * a1, b * (a1 * a1 + a1p)]
}

/// `φ(τ, x) = S(|x − c|) · T(τ − t_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub center_time: f64,
    pub center: Point,
    pub spatial: Cutoff,
    pub temporal: Cutoff,
}

impl TestFunctionSpec {
    pub fn bump(center_time: f64, center: Point, spatial_radius: f64, temporal_radius: f64, sharpness: f64) -> Self {
        Self {
            center_time,
            center,
            spatial: Cutoff::Bump {
                radius: spatial_radius,
                sharpness,
            },
            temporal: Cutoff::Bump {
                radius: temporal_radius,
                sharpness,
            },
        }
    }

    pub fn constant() -> Self {
        Self {
            center_time: 0.0,
            center: [0.0; 3],
            spatial: Cutoff::Constant,
            temporal: Cutoff::Constant,
        }
    }

    pub fn temporal(&self, tau: f64) -> [f64; 3] {
        self.temporal.eval(tau - self.center_time)
    }

    /// Lattices of `S`, `∇S` and `ΔS`.
    fn spatial_lattices(&self, grid: &TorusGrid) -> Result<(Vec<f64>, VectorLattice, Vec<f64>)> {
        match self.spatial {
            Cutoff::Constant => Ok((vec![1.0; grid.len()], grid.zero_vector(), grid.zeros())),
            Cutoff::Bump { radius, .. } => {
                if !grid.in_core(self.center, radius) {
                    return Err(CoreError::Precondition(format!(
                        "test function support of radius {radius} around {:?} leaves the box",
                        self.center
                    )));
                }
                let mut s = grid.zeros();
                let mut g = grid.zero_vector();
                let mut lap = grid.zeros();
                for idx in 0..grid.len() {
                    let p = grid.position(idx);
                    let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
                    let rho = crate::grid::norm(d);
                    let [b, b1, b2] = self.spatial.eval(rho);
                    s[idx] = b;
                    if rho > 0.0 {
                        for c in 0..3 {
                            g[c][idx] = b1 * d[c] / rho;
                        }
                        lap[idx] = b2 + 2.0 * b1 / rho;
                    } else {
                        lap[idx] = 3.0 * b2;
                    }
                }
                Ok((s, g, lap))
            }
        }
    }
}

/// Residual of the localized energy balance:
/// `∫|u(t)|²φ(t) − ∫|u(σ)|²φ(σ) + ∫_σ^t G dτ` with
/// `G = ∫ 2|∇u|²φ − |u|²(φ_t + Δφ) − (|u|² + 2π) u·∇φ`.
/// `σ` and `t` must be snapshot times.
pub fn local_energy_residual(traj: &Trajectory, phi: &TestFunctionSpec, sigma: f64, t: f64) -> Result<LocalEnergyResidual> {
    if !(sigma < t) {
        return Err(CoreError::Precondition(format!("need sigma < t, got {sigma}, {t}")));
    }
    let a = traj.snapshot_index(sigma)?;
    let b = traj.snapshot_index(t)?;
    let grid = *traj.grid();
    let (s, grad_s, lap_s) = phi.spatial_lattices(&grid)?;
    let snaps = &traj.snapshots()[a..=b];
    let h3 = grid.cell_volume();

    // Spatial moments A = ∫2|∇u|²S, B = ∫|u|²S, C = ∫|u|²ΔS, D = ∫(|u|²+2π)u·∇S.
    let moments: Vec<[f64; 4]> = snaps
        .par_iter()
        .map(|snap| {
            let u = snap.velocity();
            let gsq = snap.grad_sq();
            let p = snap.pressure();
            let mut m = [0.0; 4];
            for idx in 0..grid.len() {
                let u2 = u[0][idx] * u[0][idx] + u[1][idx] * u[1][idx] + u[2][idx] * u[2][idx];
                let udg = u[0][idx] * grad_s[0][idx] + u[1][idx] * grad_s[1][idx] + u[2][idx] * grad_s[2][idx];
                m[0] += 2.0 * gsq[idx] * s[idx];
                m[1] += u2 * s[idx];
                m[2] += u2 * lap_s[idx];
                m[3] += (u2 + 2.0 * p[idx]) * udg;
            }
            m.map(|v| v * h3)
        })
        .collect();
    let integrand = |tau: f64, m: &[f64; 4]| -> f64 {
        let [tv, t1, _] = phi.temporal(tau);
        tv * m[0] - t1 * m[1] - tv * m[2] - tv * m[3]
    };
    let times: Vec<f64> = snaps.iter().map(|s| s.time()).collect();
    let values: Vec<f64> = times.iter().zip(&moments).map(|(&tau, m)| integrand(tau, m)).collect();

    let solver = Solver::new(grid, *traj.config())?;
    let mut derivs = vec![0.0; times.len()];
    let last = times.len() - 1;
    for &node in &[0, last] {
        let snap = &snaps[node];
        let dm = moment_rates(&solver, snap, &s, &grad_s, &lap_s);
        let tau = snap.time();
        let [tv, t1, t2] = phi.temporal(tau);
        let m = &moments[node];
        derivs[node] = t1 * m[0] + tv * dm[0] - t2 * m[1] - t1 * dm[1] - t1 * m[2] - tv * dm[2] - t1 * m[3] - tv * dm[3];
    }
    let flux = corrected_trapezoid(&times, &values, &derivs);
    let end_mass = phi.temporal(times[last])[0] * moments[last][1];
    let start_mass = phi.temporal(times[0])[0] * moments[0][1];
    let dissipation = trapezoid(
        &times,
        &times.iter().zip(&moments).map(|(&tau, m)| phi.temporal(tau)[0] * m[0]).collect::<Vec<_>>(),
    );
    Ok(LocalEnergyResidual {
        residual: end_mass - start_mass + flux,
        lhs_scale: end_mass + dissipation,
    })
}

/// Residual and the size of the left-hand side it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalEnergyResidual {
    pub residual: f64,
    /// `∫|u(t)|²φ(t) + 2∫∫|∇u|²φ` (plain trapezoid in time)
    pub lhs_scale: f64,
}

impl LocalEnergyResidual {
    pub fn relative(&self) -> f64 {
        if self.lhs_scale == 0.0 {
            self.residual.abs()
        } else {
            self.residual.abs() / self.lhs_scale.abs()
        }
    }
}

/// Time derivatives of the four spatial moments at one snapshot.
fn moment_rates(solver: &Solver, snap: &FieldSnapshot, s: &[f64], grad_s: &VectorLattice, lap_s: &[f64]) -> [f64; 4] {
    let grid = *snap.grid();
    let sp = Spectral::shared(&grid);
    let u = snap.velocity();
    let p = snap.pressure();
    let ut = solver.time_derivative(u);
    let grad_u = crate::fields::velocity_gradient(u, &grid);
    let grad_ut = crate::fields::velocity_gradient(&ut, &grid);
    // π_t = −∂_i∂_j(u_i u_t,j + u_t,i u_j)/Δ
    let products: [SpectralLattice; 6] = PAIRS.map(|(i, j)| {
        let prod: Vec<f64> = (0..grid.len())
            .map(|x| u[i][x] * ut[j][x] + ut[i][x] * u[j][x])
            .collect();
        sp.forward(&prod)
    });
    let pt = sp.inverse(&crate::pressure::pressure_from_products(&sp, &products));
    let mut dm = [0.0; 4];
    for idx in 0..grid.len() {
        let mut gg = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                gg += grad_u[i][j][idx] * grad_ut[i][j][idx];
            }
        }
        let u2 = u[0][idx] * u[0][idx] + u[1][idx] * u[1][idx] + u[2][idx] * u[2][idx];
        let uut = u[0][idx] * ut[0][idx] + u[1][idx] * ut[1][idx] + u[2][idx] * ut[2][idx];
        let udg = u[0][idx] * grad_s[0][idx] + u[1][idx] * grad_s[1][idx] + u[2][idx] * grad_s[2][idx];
        let utdg = ut[0][idx] * grad_s[0][idx] + ut[1][idx] * grad_s[1][idx] + ut[2][idx] * grad_s[2][idx];
        dm[0] += 4.0 * gg * s[idx];
        dm[1] += 2.0 * uut * s[idx];
        dm[2] += 2.0 * uut * lap_s[idx];
        dm[3] += (2.0 * uut + 2.0 * pt[idx]) * udg + (u2 + 2.0 * p[idx]) * utdg;
    }
    dm.map(|v| v * grid.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let alpha = 3.0;
        for s in [-0.7, -0.2, 0.0, 0.4, 0.85] {
            let h = 1e-5;
            let [_, d1, d2] = bump(s, alpha);
            let fd1 = (bump(s + h, alpha)[0] - bump(s - h, alpha)[0]) / (2.0 * h);
            let fd2 = (bump(s + h, alpha)[1] - bump(s - h, alpha)[1]) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-7, "{s}: {d1} vs {fd1}");
            assert!((d2 - fd2).abs() < 1e-6, "{s}: {d2} vs {fd2}");
        }
        assert_eq!(bump(1.0, alpha), [0.0; 3]);
        assert_eq!(bump(0.0, alpha)[0], 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::new(1e-3, 0.1);
        assert!(c.validate().is_ok());
        c.dealias = 0.0;
        assert!(c.validate().is_err());
        c.dealias = 1.0;
        c.snapshot_stride = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = TorusGrid::new(8, TAU).unwrap();
        let solver = Solver::new(grid, SolverConfig::new(0.01, 0.05)).unwrap();
        let traj = solver.run(&grid.zero_vector()).unwrap().into_result().unwrap();
        assert_eq!(traj.snapshots().len(), 6);
        for s in traj.snapshots() {
            assert!(s.velocity().iter().all(|c| c.iter().all(|&v| v == 0.0)));
        }
        assert_eq!(strong_energy_residual(&traj, 0.0, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let grid = TorusGrid::new(8, TAU).unwrap();
        let u = grid.sample_vector(|p| [0.0, 0.0, 100.0 * p[0].sin()]);
        let solver = Solver::new(grid, SolverConfig::new(0.1, 0.2)).unwrap();
        let out = solver.run(&u).unwrap();
        assert!(matches!(out.error, Some(CoreError::CflViolation { .. })));
        assert_eq!(out.trajectory.snapshots().len(), 1);
    }

    #[test]
    fn range_and_node_errors() {
        let grid = TorusGrid::new(8, TAU).unwrap();
        let solver = Solver::new(grid, SolverConfig::new(0.01, 0.05)).unwrap();
        let traj = solver.run(&grid.zero_vector()).unwrap().into_result().unwrap();
        assert!(matches!(
            strong_energy_residual(&traj, 0.0, 0.2),
            Err(CoreError::TimeOutOfRange { .. })
        ));
        assert!(matches!(
            strong_energy_residual(&traj, 0.0, 0.015),
            Err(CoreError::NotANode { .. })
        ));
    }
}
