//! Riesz-weighted energies, the comparison potential ψ, interpolation ratios,
//! the perturbation budget, and the good sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fields::FieldSnapshot;
use crate::grid::{magnitude_sq, norm, Lattice, Point, TorusGrid, VectorLattice};
use crate::mollifier::{mollify, MollifierSchedule};
use crate::quadrature::{box_inverse_distance, cell_power_integral, trapezoid};
use crate::solver::Trajectory;
use crate::spectral::Spectral;

/// How the kernel is integrated over the cell containing the weight center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelRule {
    /// Midpoint value everywhere; requires `mu > 0`.
    Midpoint,
    /// Exact integral over the cell containing `x` when `mu = 0`.
    SingularCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub x: Point,
    pub mu: f64,
}

impl WeightSpec {
    pub fn new(x: Point, mu: f64) -> Self {
        Self { x, mu }
    }
}

/// `∫ density(y) (|x−y|² + μ²)^(−1/2) dy` with minimum-image distances.
pub fn weighted_integral(density: &[f64], grid: &TorusGrid, spec: &WeightSpec, rule: KernelRule) -> Result<f64> {
    grid.check_lattice(density)?;
    let mu = spec.mu;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(CoreError::Configuration(format!("mu must be finite and >= 0, got {mu}")));
    }
    let h3 = grid.cell_volume();
    if mu > 0.0 {
        let mu2 = mu * mu;
        let sum: f64 = density
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let d = grid.displacement(spec.x, idx);
                v / (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + mu2).sqrt()
            })
            .sum();
        return Ok(sum * h3);
    }
    if rule != KernelRule::SingularCell {
        return Err(CoreError::Configuration(
            "mu = 0 requires the singular-cell kernel rule".into(),
        ));
    }
    Ok(power_weighted_integral(density, grid, spec.x, -1.0))
}

/// `∫ density(y) |x−y|^s dy`: midpoint rule away from `x`, exact kernel
/// integral over the cell containing `x`.
pub fn power_weighted_integral(density: &[f64], grid: &TorusGrid, x: Point, s: f64) -> f64 {
    let h = grid.spacing();
    let h3 = grid.cell_volume();
    let center = grid.nearest_index(x);
    let mut sum = 0.0;
    for (idx, &v) in density.iter().enumerate() {
        if idx == center {
            let d = grid.displacement(x, idx);
            sum += v * cell_power_integral(d, h, s);
        } else {
            sum += v * h3 * norm(grid.displacement(x, idx)).powf(s);
        }
    }
    sum
}

/// 𝓔(v, x, μ) = ∫ |v|² (|x−y|² + μ²)^(−1/2) dy.
pub fn weighted_e(field: &FieldSnapshot, spec: &WeightSpec, rule: KernelRule) -> Result<f64> {
    weighted_integral(&magnitude_sq(field.velocity()), field.grid(), spec, rule)
}

/// 𝓓(v, x, μ) = ∫ |∇v|² (|x−y|² + μ²)^(−1/2) dy.
pub fn weighted_d(field: &FieldSnapshot, spec: &WeightSpec, rule: KernelRule) -> Result<f64> {
    weighted_integral(field.grad_sq(), field.grid(), spec, rule)
}

fn rule_for(mu: f64) -> KernelRule {
    if mu == 0.0 {
        KernelRule::SingularCell
    } else {
        KernelRule::Midpoint
    }
}

/// `μ = 0` potential of `density` at every grid point, by FFT convolution
/// with the singular-cell kernel.
pub fn riesz_potential_lattice(density: &[f64], grid: &TorusGrid) -> Lattice {
    let sp = Spectral::shared(grid);
    let h = grid.spacing();
    let h3 = grid.cell_volume();
    let kernel: Lattice = (0..grid.len())
        .map(|idx| {
            if idx == 0 {
                box_inverse_distance([-0.5 * h; 3], [0.5 * h; 3])
            } else {
                h3 / norm(grid.displacement([0.0; 3], idx))
            }
        })
        .collect();
    let kh = sp.forward(&kernel);
    let dh = sp.forward(density);
    let prod: Vec<_> = dh.iter().zip(&kh).map(|(a, b)| a * b).collect();
    sp.inverse(&prod)
}

fn diff_sq(u: &VectorLattice, v: &VectorLattice) -> Lattice {
    (0..u[0].len())
        .map(|i| {
            (0..3)
                .map(|c| {
                    let d = u[c][i] - v[c][i];
                    d * d
                })
                .sum()
        })
        .collect()
}

fn check_same(grid: &TorusGrid, u0: &VectorLattice, v0: &VectorLattice) -> Result<()> {
    for f in [u0, v0] {
        for c in f {
            if c.len() != grid.len() {
                return Err(CoreError::Rejected(format!(
                    "lattice of {} values does not match grid of {}",
                    c.len(),
                    grid.len()
                )));
            }
        }
    }
    Ok(())
}

/// ψ(x) = ∫ |u₀ − v₀|² / |x − y| dy (singular-cell rule).
pub fn psi(u0: &VectorLattice, v0: &VectorLattice, grid: &TorusGrid, x: Point) -> Result<f64> {
    check_same(grid, u0, v0)?;
    Ok(power_weighted_integral(&diff_sq(u0, v0), grid, x, -1.0))
}

/// Values at `μ ∈ {4h, 2h, h}` (midpoint rule).
pub fn mu_ladder(density: &[f64], grid: &TorusGrid, x: Point) -> Result<[(f64, f64); 3]> {
    let h = grid.spacing();
    let mut out = [(0.0, 0.0); 3];
    for (slot, m) in out.iter_mut().zip([4.0, 2.0, 1.0]) {
        let mu = m * h;
        *slot = (mu, weighted_integral(density, grid, &WeightSpec::new(x, mu), KernelRule::Midpoint)?);
    }
    Ok(out)
}

/// `μ → 0` limit from three rungs, fitting `E₀ + aμ² + bμ² ln μ`.
pub fn extrapolate_ladder(ladder: &[(f64, f64); 3]) -> f64 {
    let scale = ladder[2].0;
    let row = |(mu, e): (f64, f64)| {
        let t = mu / scale;
        [1.0, t * t, t * t * t.ln(), e]
    };
    let m = ladder.map(row);
    let det3 = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let full = det3([[m[0][0], m[0][1], m[0][2]], [m[1][0], m[1][1], m[1][2]], [m[2][0], m[2][1], m[2][2]]]);
    let first = det3([[m[0][3], m[0][1], m[0][2]], [m[1][3], m[1][1], m[1][2]], [m[2][3], m[2][1], m[2][2]]]);
    first / full
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub mu: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "D_integral")]
    pub d_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEnergyReport {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "D_integral")]
    pub d_integral: f64,
    pub mu_ladder: Vec<LadderRung>,
    /// Fit of the ladder's `E` values to `μ → 0`.
    pub extrapolated_e: f64,
}

/// 𝓔 at snapshot time `t` and `∫₀ᵗ 𝓓 dτ`, at `mu` and along the ladder.
pub fn weighted_energy_report(traj: &Trajectory, x: Point, t: f64, mu: f64) -> Result<WeightedEnergyReport> {
    let end = traj.snapshot_index(t)?;
    let grid = *traj.grid();
    let snaps = &traj.snapshots()[..=end];
    let times: Vec<f64> = snaps.iter().map(|s| s.time()).collect();
    let h = grid.spacing();
    let mus = [mu, 4.0 * h, 2.0 * h, h];
    let eval = |m: f64| -> Result<(f64, f64)> {
        let spec = WeightSpec::new(x, m);
        let rule = rule_for(m);
        let d: Vec<f64> = snaps
            .par_iter()
            .map(|s| weighted_d(s, &spec, rule))
            .collect::<Result<_>>()?;
        Ok((weighted_e(&snaps[end], &spec, rule)?, trapezoid(&times, &d)))
    };
    let values = mus.iter().map(|&m| eval(m)).collect::<Result<Vec<_>>>()?;
    let ladder: Vec<LadderRung> = mus[1..]
        .iter()
        .zip(&values[1..])
        .map(|(&mu, &(e, d))| LadderRung { mu, e, d_integral: d })
        .collect();
    let rungs = [(ladder[0].mu, ladder[0].e), (ladder[1].mu, ladder[1].e), (ladder[2].mu, ladder[2].e)];
    Ok(WeightedEnergyReport {
        e: values[0].0,
        d_integral: values[0].1,
        mu_ladder: ladder,
        extrapolated_e: extrapolate_ladder(&rungs),
    })
}

/// Ratio with an explicit marker for `0/0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ratio {
    Value(f64),
    BothZero,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(*v),
            Ratio::BothZero => None,
        }
    }
}

fn check_core_point(grid: &TorusGrid, x: Point) -> Result<()> {
    if !grid.in_core(x, grid.box_length() / 8.0) {
        return Err(CoreError::Rejected(format!(
            "sample point {x:?} lies within box/8 of the periodic boundary"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiTable {
    pub radii: Vec<f64>,
    pub points: Vec<Point>,
    /// `values[k][p] = ψ^k(points[p])`
    pub values: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
}

impl PsiTable {
    /// Whether the per-k median is nonincreasing up to `tol` (relative to the first median).
    pub fn medians_nonincreasing(&self, tol: f64) -> bool {
        let scale = self.medians.first().copied().unwrap_or(0.0).abs();
        self.medians.windows(2).all(|w| w[1] <= w[0] + tol * scale)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// ψ^k(x) = ψ(u₀, u₀^k, x) for every schedule index and sample point.
pub fn psi_sequence(u0: &VectorLattice, grid: &TorusGrid, schedule: &MollifierSchedule, points: &[Point]) -> Result<PsiTable> {
    if points.is_empty() {
        return Err(CoreError::Rejected("psi_sequence needs at least one sample point".into()));
    }
    for &p in points {
        check_core_point(grid, p)?;
    }
    let values = (0..schedule.len())
        .map(|k| {
            let uk = mollify(u0, grid, schedule, k)?;
            let density = diff_sq(u0, &uk);
            Ok(points
                .par_iter()
                .map(|&x| power_weighted_integral(&density, grid, x, -1.0))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let medians = values.iter().map(|v| median(v)).collect();
    Ok(PsiTable {
        radii: schedule.radii().to_vec(),
        points: points.to_vec(),
        values,
        medians,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn indices(&self, grid: &TorusGrid) -> Vec<usize> {
        (0..grid.len())
            .filter(|&idx| {
                let p = grid.position(idx);
                norm([p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]]) <= self.radius
            })
            .collect()
    }

    fn check_core(&self, grid: &TorusGrid) -> Result<()> {
        if !grid.in_core(self.center, grid.box_length() / 8.0 + self.radius) {
            return Err(CoreError::Rejected(format!(
                "region of radius {} around {:?} leaves the box core",
                self.radius, self.center
            )));
        }
        Ok(())
    }
}

/// `‖ψ^k‖_{L^r(K)} / ‖u₀^k − u₀‖₂²`.
pub fn hls_ratio(
    u0: &VectorLattice,
    grid: &TorusGrid,
    schedule: &MollifierSchedule,
    k: usize,
    region: &Ball,
    r_exponent: f64,
) -> Result<Ratio> {
    if !(1.0..3.0).contains(&r_exponent) {
        return Err(CoreError::Rejected(format!(
            "r_exponent must lie in [1, 3), got {r_exponent}"
        )));
    }
    region.check_core(grid)?;
    grid.check_vector(u0)?;
    let uk = mollify(u0, grid, schedule, k)?;
    let density = diff_sq(u0, &uk);
    let denom = grid.integrate(&density);
    let base = grid.integrate(&magnitude_sq(u0));
    if denom <= 1e-24 * base || denom == 0.0 {
        return Ok(Ratio::BothZero);
    }
    let potential = riesz_potential_lattice(&density, grid);
    let h3 = grid.cell_volume();
    let sum: f64 = region
        .indices(grid)
        .iter()
        .map(|&i| potential[i].abs().powf(r_exponent))
        .sum();
    Ok(Ratio::Value((sum * h3).powf(1.0 / r_exponent) / denom))
}

/// Exponent tuple `(r, γ, α, β, a)` of the weighted interpolation inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub r: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
}

impl Exponents {
    pub fn new(r: f64, gamma: f64, alpha: f64, beta: f64, a: f64) -> Self {
        Self { r, gamma, alpha, beta, a }
    }

    pub fn validate(&self) -> Result<()> {
        let Exponents { r, gamma, alpha, beta, a } = *self;
        let fail = |condition: &'static str, detail: String| Err(CoreError::ExponentCondition { condition, detail });
        if !(r >= 2.0 && gamma + 3.0 / r > 0.0 && alpha + 1.5 > 0.0 && beta + 1.5 > 0.0 && (0.5..=1.0).contains(&a)) {
            return fail(
                "i",
                format!("need r >= 2, gamma + 3/r > 0, alpha, beta > -3/2, a in [1/2, 1]; got {self:?}"),
            );
        }
        let lhs = gamma + 3.0 / r;
        let rhs = a * (alpha + 0.5) + (1.0 - a) * (beta + 1.5);
        if (lhs - rhs).abs() > 1e-12 * lhs.abs().max(1.0) {
            return fail("ii", format!("gamma + 3/r = {lhs} but a(alpha + 1/2) + (1-a)(beta + 3/2) = {rhs}"));
        }
        let lo = a * (alpha - 1.0) + (1.0 - a) * beta;
        let hi = a * alpha + (1.0 - a) * beta;
        let slack = 1e-12;
        if !(lo <= gamma + slack && gamma <= hi + slack) {
            return fail("iii", format!("gamma = {gamma} outside [{lo}, {hi}]"));
        }
        Ok(())
    }
}

/// `‖|y−x|^γ v‖_r / (‖|y−x|^α ∇v‖₂^a ‖|y−x|^β v‖₂^(1−a))`.
pub fn interpolation_ratio(v: &VectorLattice, grid: &TorusGrid, exps: &Exponents, x: Point) -> Result<Ratio> {
    exps.validate()?;
    grid.check_vector(v)?;
    let speed_sq = magnitude_sq(v);
    let speed_r: Vec<f64> = speed_sq.iter().map(|s| s.powf(0.5 * exps.r)).collect();
    let snap = FieldSnapshot::new(*grid, 0.0, v.clone(), grid.zeros())?;
    let num = power_weighted_integral(&speed_r, grid, x, exps.gamma * exps.r).powf(1.0 / exps.r);
    let grad = power_weighted_integral(snap.grad_sq(), grid, x, 2.0 * exps.alpha).sqrt();
    let lower = power_weighted_integral(&speed_sq, grid, x, 2.0 * exps.beta).sqrt();
    let den = grad.powf(exps.a) * lower.powf(1.0 - exps.a);
    if num == 0.0 && den == 0.0 {
        return Ok(Ratio::BothZero);
    }
    Ok(Ratio::Value(num / den))
}

/// Weighted perturbation budget for `w = u − v` at one center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBudget {
    pub x: Point,
    pub mu: f64,
    pub mass_constant_c: f64,
    pub times: Vec<f64>,
    /// 𝓔(w, t, x, μ)
    pub w_energy: Vec<f64>,
    /// ∫₀ᵗ 𝓓(w) dτ
    pub w_dissipation: Vec<f64>,
    /// H(v, t, x, μ) = c∫‖∇v‖₂⁴ + c∫𝓔(v)𝓓(v)
    pub h_term: Vec<f64>,
    /// 1/(4c)²
    pub threshold: f64,
    /// 1/(8c²)
    pub working_bound: f64,
    /// 𝓔(w, 0) < threshold
    pub hp_at_zero: bool,
    /// H(t) < threshold per snapshot
    pub hpn: Vec<bool>,
    pub t_star: f64,
    pub certified: bool,
}

impl PerturbationBudget {
    pub fn hpn_holds_throughout(&self) -> bool {
        self.hpn.iter().all(|&b| b)
    }
}

/// Horizon estimate from the budget series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TStar {
    pub t_star: f64,
    pub certified: bool,
}

/// Largest sampled time `T` with `𝓔(w,t) + ½∫₀ᵗ𝓓(w) < 1/(8c²)` for all
/// `t ≤ T`; no certificate when `𝓔(w,0) ≥ 1/(4c)²`.
pub fn estimate_t_star(times: &[f64], w_energy: &[f64], w_dissipation: &[f64], c: f64) -> TStar {
    let threshold = 1.0 / (16.0 * c * c);
    let bound = 1.0 / (8.0 * c * c);
    let none = TStar {
        t_star: 0.0,
        certified: false,
    };
    if times.is_empty() || !(w_energy[0] < threshold) {
        return none;
    }
    let mut t_star = None;
    for i in 0..times.len() {
        if w_energy[i] + 0.5 * w_dissipation[i] < bound {
            t_star = Some(times[i]);
        } else {
            break;
        }
    }
    match t_star {
        Some(t) => TStar {
            t_star: t,
            certified: true,
        },
        None => none,
    }
}

fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for i in 0..times.len() {
        if i > 0 {
            acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Evaluates the budget of `w = u − v` at `x`; `mu = 0` uses the singular-cell rule.
pub fn weighted_budget(u_traj: &Trajectory, v_traj: &Trajectory, x: Point, mu: f64, c: f64) -> Result<PerturbationBudget> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(CoreError::Configuration(format!("mass_constant_c must be positive, got {c}")));
    }
    let w_traj = u_traj.difference(v_traj)?;
    let spec = WeightSpec::new(x, mu);
    let rule = rule_for(mu);
    let per_snapshot: Vec<[f64; 4]> = w_traj
        .snapshots()
        .par_iter()
        .zip(v_traj.snapshots())
        .map(|(w, v)| {
            let ens = v.enstrophy();
            Ok([
                weighted_e(w, &spec, rule)?,
                weighted_d(w, &spec, rule)?,
                ens * ens,
                weighted_e(v, &spec, rule)? * weighted_d(v, &spec, rule)?,
            ])
        })
        .collect::<Result<_>>()?;
    let times = w_traj.times();
    let col = |i: usize| per_snapshot.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let w_energy = col(0);
    let w_dissipation = cumulative_trapezoid(&times, &col(1));
    let grad4 = cumulative_trapezoid(&times, &col(2));
    let ed = cumulative_trapezoid(&times, &col(3));
    let h_term: Vec<f64> = grad4.iter().zip(&ed).map(|(a, b)| c * a + c * b).collect();
    let threshold = 1.0 / (16.0 * c * c);
    let ts = estimate_t_star(&times, &w_energy, &w_dissipation, c);
    Ok(PerturbationBudget {
        x,
        mu,
        mass_constant_c: c,
        hp_at_zero: w_energy[0] < threshold,
        hpn: h_term.iter().map(|&h| h < threshold).collect(),
        times,
        w_energy,
        w_dissipation,
        h_term,
        threshold,
        working_bound: 1.0 / (8.0 * c * c),
        t_star: ts.t_star,
        certified: ts.certified,
    })
}

/// Masks over the grid points of a ball region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodSets {
    /// Grid indices of the region, in ascending order.
    pub region: Vec<usize>,
    /// `min_k ψ^k < η`
    pub e_mask: Vec<bool>,
    /// `ψ^k < η` for the chosen single `k`
    pub omega_mask: Vec<bool>,
    /// Smallest `k` meeting the coverage target, or the best `k` when none does.
    pub k_used: usize,
    pub coverage: f64,
    pub target: f64,
    pub coverage_met: bool,
}

/// Good set 𝔼 and its uniform-in-k refinement Ω over `region`. The measure
/// budget `epsilon` is compared with the grid measure of the region.
pub fn good_sets(
    u0: &VectorLattice,
    grid: &TorusGrid,
    schedule: &MollifierSchedule,
    eta: f64,
    region: &Ball,
    epsilon: f64,
) -> Result<GoodSets> {
    if !(eta > 0.0) {
        return Err(CoreError::Rejected(format!("eta must be positive, got {eta}")));
    }
    region.check_core(grid)?;
    grid.check_vector(u0)?;
    let indices = region.indices(grid);
    if indices.is_empty() {
        return Err(CoreError::Rejected("region contains no grid points".into()));
    }
    let measure = indices.len() as f64 * grid.cell_volume();
    let target = 1.0 - epsilon / measure;
    let below: Vec<Vec<bool>> = (0..schedule.len())
        .map(|k| {
            let uk = mollify(u0, grid, schedule, k)?;
            let pot = riesz_potential_lattice(&diff_sq(u0, &uk), grid);
            Ok(indices.iter().map(|&i| pot[i] < eta).collect())
        })
        .collect::<Result<_>>()?;
    let e_mask: Vec<bool> = (0..indices.len()).map(|p| below.iter().any(|row| row[p])).collect();
    let coverage_of = |row: &Vec<bool>| row.iter().filter(|&&b| b).count() as f64 / indices.len() as f64;
    let coverages: Vec<f64> = below.iter().map(coverage_of).collect();
    let (k_used, coverage_met) = match coverages.iter().position(|&c| c >= target) {
        Some(k) => (k, true),
        None => {
            let best = coverages
                .iter()
                .enumerate()
                .fold(0, |b, (k, &c)| if c > coverages[b] { k } else { b });
            (best, false)
        }
    };
    Ok(GoodSets {
        region: indices,
        e_mask,
        omega_mask: below[k_used].clone(),
        k_used,
        coverage: coverages[k_used],
        target,
        coverage_met,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn ball_indicator(grid: &TorusGrid, c: Point, r: f64) -> Lattice {
        grid.sample(|p| if norm([p[0] - c[0], p[1] - c[1], p[2] - c[2]]) < r { 1.0 } else { 0.0 })
    }

    #[test]
    fn zero_mu_needs_singular_rule() {
        let grid = TorusGrid::new(8, 1.0).unwrap();
        let d = grid.zeros();
        let spec = WeightSpec::new([0.5; 3], 0.0);
        assert!(matches!(
            weighted_integral(&d, &grid, &spec, KernelRule::Midpoint),
            Err(CoreError::Configuration(_))
        ));
        assert_eq!(weighted_integral(&d, &grid, &spec, KernelRule::SingularCell).unwrap(), 0.0);
    }

    #[test]
    fn large_mu_flattens_kernel() {
        let grid = TorusGrid::new(16, TAU).unwrap();
        let v = grid.sample_vector(|p| [p[1].sin(), 0.0, 0.0]);
        let snap = FieldSnapshot::new(grid, 0.0, v, grid.zeros()).unwrap();
        let mu = 10.0 * TAU;
        let d = weighted_d(&snap, &WeightSpec::new(grid.center(), mu), KernelRule::Midpoint).unwrap();
        let expected = TAU.powi(3) / 2.0 / mu;
        assert!((d / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn ladder_fit_recovers_model() {
        let model = |mu: f64| 3.0 - 0.4 * mu * mu + 0.1 * mu * mu * mu.ln();
        let ladder = [0.4, 0.2, 0.1].map(|m| (m, model(m)));
        assert!((extrapolate_ladder(&ladder) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn exponent_conditions_are_named() {
        assert!(Exponents::new(4.0, -0.25, -0.25, -0.25, 0.75).validate().is_ok());
        assert!(Exponents::new(2.0, -1.0, 0.0, 0.0, 1.0).validate().is_ok());
        let e = Exponents::new(1.5, 0.0, 0.0, 0.0, 1.0).validate().unwrap_err();
        assert!(matches!(e, CoreError::ExponentCondition { condition: "i", .. }));
        let e = Exponents::new(4.0, 0.0, -0.25, -0.25, 0.75).validate().unwrap_err();
        assert!(matches!(e, CoreError::ExponentCondition { condition: "ii", .. }));
        // balanced but outside the γ window
        let e = Exponents::new(8.0, 0.125, 0.0, 0.0, 1.0).validate().unwrap_err();
        assert!(matches!(e, CoreError::ExponentCondition { condition: "iii", .. }));
    }

    #[test]
    fn zero_field_ratio_marker() {
        let grid = TorusGrid::new(8, 1.0).unwrap();
        let r = interpolation_ratio(&grid.zero_vector(), &grid, &Exponents::new(3.0, 0.0, 0.0, 0.0, 0.5), grid.center());
        assert_eq!(r.unwrap(), Ratio::BothZero);
    }

    #[test]
    fn t_star_scan() {
        let t = [0.0, 0.1, 0.2, 0.3];
        let full = estimate_t_star(&t, &[0.0; 4], &[0.0; 4], 1.0);
        assert_eq!(full, TStar { t_star: 0.3, certified: true });
        let cut = estimate_t_star(&t, &[0.01, 0.01, 0.2, 0.0], &[0.0; 4], 1.0);
        assert_eq!(cut.t_star, 0.1);
        let none = estimate_t_star(&t, &[0.07, 0.0, 0.0, 0.0], &[0.0; 4], 1.0);
        assert_eq!(none, TStar { t_star: 0.0, certified: false });
    }

    #[test]
    fn fft_potential_matches_direct_sum() {
        let grid = TorusGrid::new(16, TAU).unwrap();
        let c = grid.center();
        let d = ball_indicator(&grid, c, 1.2);
        let pot = riesz_potential_lattice(&d, &grid);
        for idx in [grid.nearest_index(c), grid.index(3, 9, 12), 0] {
            let direct = power_weighted_integral(&d, &grid, grid.position(idx), -1.0);
            assert!((pot[idx] - direct).abs() < 1e-11 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn psi_of_identical_fields_is_zero() {
        let grid = TorusGrid::new(8, TAU).unwrap();
        let u = grid.sample_vector(|p| [p[0].sin(), 0.0, 1.0]);
        assert_eq!(psi(&u, &u, &grid, grid.center()).unwrap(), 0.0);
    }
}
