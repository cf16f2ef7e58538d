//! Velocity/pressure snapshots and the divergence-free projection.

use std::sync::OnceLock;

use crate::error::{CoreError, Result};
use crate::grid::{magnitude_sq, max_abs, Lattice, TorusGrid, VectorLattice};
use crate::spectral::{Complex, Spectral, SpectralVector};

/// Velocity and pressure at one time. Immutable after construction.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    grid: TorusGrid,
    time: f64,
    velocity: VectorLattice,
    pressure: Lattice,
    grad_sq: OnceLock<Lattice>,
}

impl PartialEq for FieldSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.time.to_bits() == other.time.to_bits()
            && bits_eq(&self.pressure, &other.pressure)
            && (0..3).all(|c| bits_eq(&self.velocity[c], &other.velocity[c]))
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl FieldSnapshot {
    pub fn new(grid: TorusGrid, time: f64, velocity: VectorLattice, pressure: Lattice) -> Result<Self> {
        grid.check_vector(&velocity)?;
        grid.check_lattice(&pressure)?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(CoreError::Rejected(format!("snapshot time must be finite and >= 0, got {time}")));
        }
        Ok(Self {
            grid,
            time,
            velocity,
            pressure,
            grad_sq: OnceLock::new(),
        })
    }

    /// Projects `raw`, then solves for the pressure.
    pub fn from_raw_velocity(grid: TorusGrid, time: f64, raw: &VectorLattice) -> Result<Self> {
        let velocity = leray_project(raw, &grid)?;
        let pressure = crate::pressure::pressure_unchecked(&velocity, &grid);
        Self::new(grid, time, velocity, pressure)
    }

    pub fn zero(grid: TorusGrid, time: f64) -> Self {
        Self::new(grid, time, grid.zero_vector(), grid.zeros()).expect("zero field is well formed")
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn velocity(&self) -> &VectorLattice {
        &self.velocity
    }

    pub fn pressure(&self) -> &Lattice {
        &self.pressure
    }

    pub fn into_parts(self) -> (TorusGrid, f64, VectorLattice, Lattice) {
        (self.grid, self.time, self.velocity, self.pressure)
    }

    pub fn spectral_velocity(&self) -> SpectralVector {
        Spectral::shared(&self.grid).forward_vector(&self.velocity)
    }

    /// `‖u‖₂²` by grid quadrature.
    pub fn energy(&self) -> f64 {
        self.grid.integrate(&magnitude_sq(&self.velocity))
    }

    /// Pointwise `|∇u|² = Σ_ij (∂_j u_i)²`, computed once per snapshot.
    pub fn grad_sq(&self) -> &Lattice {
        self.grad_sq.get_or_init(|| {
            let grads = velocity_gradient(&self.velocity, &self.grid);
            let mut out = self.grid.zeros();
            for row in &grads {
                for comp in row {
                    for (o, v) in out.iter_mut().zip(comp) {
                        *o += v * v;
                    }
                }
            }
            out
        })
    }

    /// `‖∇u‖₂²` by grid quadrature.
    pub fn enstrophy(&self) -> f64 {
        self.grid.integrate(self.grad_sq())
    }

    pub fn max_speed(&self) -> f64 {
        max_abs(&magnitude_sq(&self.velocity)).sqrt()
    }

    pub fn max_divergence(&self) -> f64 {
        max_divergence(&self.velocity, &self.grid)
    }

    /// Largest relative deviation of the transform round trip.
    pub fn round_trip_error(&self) -> f64 {
        let sp = Spectral::shared(&self.grid);
        let back = sp.inverse_vector(&sp.forward_vector(&self.velocity));
        let scale = (0..3).map(|c| max_abs(&self.velocity[c])).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        (0..3)
            .flat_map(|c| self.velocity[c].iter().zip(&back[c]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
            / scale
    }

    /// Largest absolute component mean.
    pub fn max_component_mean(&self) -> f64 {
        let len = self.grid.len() as f64;
        self.velocity
            .iter()
            .map(|c| (c.iter().sum::<f64>() / len).abs())
            .fold(0.0, f64::max)
    }

    /// Returns a copy with the velocity scaled by `lambda` and the pressure by `lambda²`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let velocity = self.velocity.clone().map(|c| c.into_iter().map(|v| v * lambda).collect());
        let pressure = self.pressure.iter().map(|p| p * lambda * lambda).collect();
        Self::new(self.grid, self.time, velocity, pressure).expect("same shape")
    }
}

/// Orthogonal projection onto mean-free, divergence-free fields.
///
/// The mean mode and every mode on a Nyquist plane are removed.
pub fn leray_project(raw: &VectorLattice, grid: &TorusGrid) -> Result<VectorLattice> {
    for c in raw {
        if c.len() != grid.len() {
            return Err(CoreError::Rejected(format!(
                "velocity component has {} values, grid needs {}",
                c.len(),
                grid.len()
            )));
        }
    }
    let sp = Spectral::shared(grid);
    let mut hat = sp.forward_vector(raw);
    project_spectral(&sp, &mut hat);
    Ok(sp.inverse_vector(&hat))
}

/// In-place spectral projection used by [`leray_project`] and the solver.
pub fn project_spectral(sp: &Spectral, hat: &mut SpectralVector) {
    for idx in 0..sp.grid().len() {
        let k2 = sp.k_sq(idx);
        if k2 == 0.0 || sp.is_nyquist(idx) {
            for c in hat.iter_mut() {
                c[idx] = Complex::default();
            }
            continue;
        }
        let k = sp.k_vec(idx);
        let dot = (hat[0][idx] * k[0] + hat[1][idx] * k[1] + hat[2][idx] * k[2]) / k2;
        for (c, kc) in hat.iter_mut().zip(k) {
            c[idx] -= dot * kc;
        }
    }
}

pub fn max_divergence(velocity: &VectorLattice, grid: &TorusGrid) -> f64 {
    let sp = Spectral::shared(grid);
    max_abs(&sp.divergence(&sp.forward_vector(velocity)))
}

/// `grads[i][j] = ∂_j u_i`.
pub fn velocity_gradient(velocity: &VectorLattice, grid: &TorusGrid) -> [VectorLattice; 3] {
    let sp = Spectral::shared(grid);
    [
        sp.gradient(&velocity[0]),
        sp.gradient(&velocity[1]),
        sp.gradient(&velocity[2]),
    ]
}

/// Scale for divergence checks: the largest `|u| k_max`, floored at 1.
pub(crate) fn divergence_scale(velocity: &VectorLattice, grid: &TorusGrid) -> f64 {
    let speed = max_abs(&magnitude_sq(velocity)).sqrt();
    let kmax = std::f64::consts::PI / grid.spacing();
    (speed * kmax).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn taylor_green(grid: &TorusGrid) -> VectorLattice {
        grid.sample_vector(|p| {
            [
                p[0].sin() * p[1].cos() * p[2].cos(),
                -p[0].cos() * p[1].sin() * p[2].cos(),
                0.0,
            ]
        })
    }

    #[test]
    fn gradient_field_is_annihilated() {
        let grid = TorusGrid::new(16, TAU).unwrap();
        let sp = Spectral::new(grid);
        let phi = grid.sample(|p| (p[0] + 2.0 * p[1]).sin() + p[2].cos() * p[0].cos());
        let g = sp.gradient(&phi);
        let projected = leray_project(&g, &grid).unwrap();
        for c in &projected {
            assert!(max_abs(c) < 1e-13);
        }
    }

    #[test]
    fn divergence_free_field_is_unchanged() {
        let grid = TorusGrid::new(16, TAU).unwrap();
        let tg = taylor_green(&grid);
        let projected = leray_project(&tg, &grid).unwrap();
        for c in 0..3 {
            let diff = tg[c].iter().zip(&projected[c]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        let grid = TorusGrid::new(8, 1.0).unwrap();
        let bad = [vec![0.0; 10], grid.zeros(), grid.zeros()];
        assert!(matches!(leray_project(&bad, &grid), Err(CoreError::Rejected(_))));
    }

    #[test]
    fn taylor_green_enstrophy() {
        // |∇u|² integrates to 3 L³ / 4 for unit amplitude.
        let grid = TorusGrid::new(16, TAU).unwrap();
        let snap = FieldSnapshot::new(grid, 0.0, taylor_green(&grid), grid.zeros()).unwrap();
        let expected = 0.75 * TAU.powi(3);
        assert!((snap.enstrophy() - expected).abs() < 1e-10 * expected);
        assert!((snap.energy() - TAU.powi(3) / 4.0).abs() < 1e-10);
    }
}
