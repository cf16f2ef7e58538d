//! Periodic computational box.
//!
//! Lattice values are stored in a flat `Vec<f64>` of length `n³` with the
//! x index running fastest: `idx = i + n * (j + n * k)`. Grid point `(i, j, k)`
//! sits at `(i h, j h, k h)` and is the center of a cubic cell of side `h`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// A scalar lattice over a [`TorusGrid`].
pub type Lattice = Vec<f64>;

/// Three scalar lattices (x, y, z components).
pub type VectorLattice = [Lattice; 3];

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct TorusGrid {
    n: usize,
    box_length: f64,
    spacing: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_per_axis: usize,
    pub box_length: f64,
}

impl TryFrom<GridSpec> for TorusGrid {
    type Error = CoreError;
    fn try_from(spec: GridSpec) -> Result<Self> {
        TorusGrid::new(spec.n_per_axis, spec.box_length)
    }
}

impl From<TorusGrid> for GridSpec {
    fn from(grid: TorusGrid) -> Self {
        GridSpec {
            n_per_axis: grid.n,
            box_length: grid.box_length,
        }
    }
}

impl TorusGrid {
    /// `n` must be even and at least 8. The stored box length is recomputed
    /// as `spacing * n` so that the two agree exactly.
    pub fn new(n: usize, box_length: f64) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(CoreError::InvalidGrid(format!(
                "n_per_axis must be even and >= 8, got {n}"
            )));
        }
        if !(box_length.is_finite() && box_length > 0.0) {
            return Err(CoreError::InvalidGrid(format!(
                "box_length must be positive and finite, got {box_length}"
            )));
        }
        let spacing = box_length / n as f64;
        Ok(Self {
            n,
            box_length: spacing * n as f64,
            spacing,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of lattice points, `n³`.
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing * self.spacing * self.spacing
    }

    pub fn center(&self) -> Point {
        let c = 0.5 * self.box_length;
        [c, c, c]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    #[inline]
    pub fn position(&self, idx: usize) -> Point {
        let [i, j, k] = self.coords(idx);
        [
            i as f64 * self.spacing,
            j as f64 * self.spacing,
            k as f64 * self.spacing,
        ]
    }

    /// Wraps a coordinate difference into `[-L/2, L/2)`.
    #[inline]
    pub fn min_image(&self, d: f64) -> f64 {
        let l = self.box_length;
        d - l * (d / l + 0.5).floor()
    }

    /// Minimum-image displacement from `from` to grid point `idx`.
    #[inline]
    pub fn displacement(&self, from: Point, idx: usize) -> Point {
        let p = self.position(idx);
        [
            self.min_image(p[0] - from[0]),
            self.min_image(p[1] - from[1]),
            self.min_image(p[2] - from[2]),
        ]
    }

    /// Grid point whose cell contains `x` (periodic).
    pub fn nearest_index(&self, x: Point) -> usize {
        let n = self.n as i64;
        let c = |v: f64| -> usize { ((v / self.spacing).round() as i64).rem_euclid(n) as usize };
        self.index(c(x[0]), c(x[1]), c(x[2]))
    }

    /// Whether `x` lies at least `margin` away from every face of the box.
    pub fn in_core(&self, x: Point, margin: f64) -> bool {
        x.iter()
            .all(|&v| v >= margin && v <= self.box_length - margin)
    }

    /// The grid with the same resolution on a box shrunk by `lambda`.
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        TorusGrid::new(self.n, self.box_length / lambda)
    }

    pub fn check_lattice(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.len(),
                actual: values.len(),
            });
        }
        Ok(())
    }

    pub fn check_vector(&self, field: &VectorLattice) -> Result<()> {
        field.iter().try_for_each(|c| self.check_lattice(c))
    }

    pub fn zeros(&self) -> Lattice {
        vec![0.0; self.len()]
    }

    pub fn zero_vector(&self) -> VectorLattice {
        [self.zeros(), self.zeros(), self.zeros()]
    }

    /// Samples `f` at every grid point.
    pub fn sample<F: Fn(Point) -> f64>(&self, f: F) -> Lattice {
        (0..self.len()).map(|idx| f(self.position(idx))).collect()
    }

    /// Samples a vector-valued `f` at every grid point.
    pub fn sample_vector<F: Fn(Point) -> [f64; 3]>(&self, f: F) -> VectorLattice {
        let mut out = self.zero_vector();
        for idx in 0..self.len() {
            let v = f(self.position(idx));
            for c in 0..3 {
                out[c][idx] = v[c];
            }
        }
        out
    }

    /// Sum of `values` times the cell volume, accumulated in index order.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume()
    }
}

pub fn norm(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Pointwise `|v|²` of a vector lattice.
pub fn magnitude_sq(field: &VectorLattice) -> Lattice {
    field[0]
        .iter()
        .zip(&field[1])
        .zip(&field[2])
        .map(|((a, b), c)| a * a + b * b + c * c)
        .collect()
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_small_grids() {
        assert!(TorusGrid::new(7, 1.0).is_err());
        assert!(TorusGrid::new(9, 1.0).is_err());
        assert!(TorusGrid::new(6, 1.0).is_err());
        assert!(TorusGrid::new(8, 0.0).is_err());
        assert!(TorusGrid::new(8, f64::NAN).is_err());
    }

    #[test]
    fn spacing_times_n_is_exact() {
        for n in [8, 10, 12, 24, 30, 48] {
            let g = TorusGrid::new(n, std::f64::consts::TAU).unwrap();
            assert_eq!(g.spacing() * n as f64, g.box_length());
        }
    }

    #[test]
    fn index_round_trip() {
        let g = TorusGrid::new(8, 1.0).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn min_image_wraps_into_half_box() {
        let g = TorusGrid::new(8, 2.0).unwrap();
        assert_eq!(g.min_image(1.5), -0.5);
        assert_eq!(g.min_image(-1.5), 0.5);
        assert_eq!(g.min_image(0.25), 0.25);
        assert_eq!(g.min_image(-1.0), -1.0);
    }

    #[test]
    fn nearest_index_wraps() {
        let g = TorusGrid::new(8, 8.0).unwrap();
        assert_eq!(g.nearest_index([7.9, 0.0, 0.0]), g.index(0, 0, 0));
        assert_eq!(g.nearest_index([3.2, 1.9, 5.0]), g.index(3, 2, 5));
    }
}
