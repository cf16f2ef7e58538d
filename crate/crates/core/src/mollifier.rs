//! Radial bump mollification on the torus.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{norm, Lattice, TorusGrid, VectorLattice};
use crate::spectral::{Complex, Spectral};

/// Decreasing sequence of mollification radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MollifierSchedule {
    radii: Vec<f64>,
}

impl TryFrom<Vec<f64>> for MollifierSchedule {
    type Error = CoreError;
    fn try_from(radii: Vec<f64>) -> Result<Self> {
        MollifierSchedule::new(radii)
    }
}

impl From<MollifierSchedule> for Vec<f64> {
    fn from(s: MollifierSchedule) -> Self {
        s.radii
    }
}

impl MollifierSchedule {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(CoreError::Rejected("mollifier schedule is empty".into()));
        }
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(CoreError::Rejected("mollifier radii must be positive and finite".into()));
        }
        if radii.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CoreError::Rejected("mollifier radii must be strictly decreasing".into()));
        }
        Ok(Self { radii })
    }

    /// `first · ratio^k` for `k < count`.
    pub fn geometric(first: f64, ratio: f64, count: usize) -> Result<Self> {
        if !(0.0 < ratio && ratio < 1.0) {
            return Err(CoreError::Rejected(format!("ratio must lie in (0, 1), got {ratio}")));
        }
        Self::new((0..count).map(|k| first * ratio.powi(k as i32)).collect())
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn radius(&self, k: usize) -> Result<f64> {
        self.radii.get(k).copied().ok_or(CoreError::IndexOutOfRange {
            index: k,
            len: self.radii.len(),
        })
    }
}

/// Unnormalized profile `exp(−1/(1−s²))` for `s < 1`, else zero.
pub fn bump_profile(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Kernel of radius `eps` sampled at minimum-image offsets and normalized so
/// that its grid quadrature is exactly one.
pub fn kernel_lattice(grid: &TorusGrid, eps: f64) -> Result<Lattice> {
    if eps > 0.5 * grid.box_length() {
        return Err(CoreError::Precondition(format!(
            "mollifier radius {eps} exceeds half the box {}",
            0.5 * grid.box_length()
        )));
    }
    let mut k: Lattice = (0..grid.len())
        .map(|idx| bump_profile(norm(grid.displacement([0.0; 3], idx)) / eps))
        .collect();
    let mass = grid.integrate(&k);
    for v in k.iter_mut() {
        *v /= mass;
    }
    Ok(k)
}

/// `u0^k = η_{ε_k} * u0`.
pub fn mollify(u0: &VectorLattice, grid: &TorusGrid, schedule: &MollifierSchedule, k: usize) -> Result<VectorLattice> {
    let eps = schedule.radius(k)?;
    grid.check_vector(u0)?;
    let sp = Spectral::shared(grid);
    let kernel = kernel_lattice(grid, eps)?;
    let h3 = grid.cell_volume();
    // The kernel is even, so its transform is real.
    let symbol: Vec<f64> = sp.forward(&kernel).iter().map(|c| c.re * h3).collect();
    Ok(u0.clone().map(|c| {
        let hat: Vec<Complex> = sp
            .forward(&c)
            .into_iter()
            .zip(&symbol)
            .map(|(v, s)| v * *s)
            .collect();
        sp.inverse(&hat)
    }))
}
