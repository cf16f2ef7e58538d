//! Initial velocity fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fields::leray_project;
use crate::grid::{max_abs, Point, TorusGrid, VectorLattice};
use crate::solver::bump;
use crate::spectral::{Complex, Spectral};

/// `(A sin x cos y cos z, −A cos x sin y cos z, 0)` in units where the box is `2π`.
pub fn taylor_green(grid: &TorusGrid, amplitude: f64) -> VectorLattice {
    let s = std::f64::consts::TAU / grid.box_length();
    grid.sample_vector(|p| {
        let (x, y, z) = (s * p[0], s * p[1], s * p[2]);
        [
            amplitude * x.sin() * y.cos() * z.cos(),
            -amplitude * x.cos() * y.sin() * z.cos(),
            0.0,
        ]
    })
}

/// Divergence-free random field with modes `|m|∞ ≤ kmax`, scaled so that the
/// largest velocity component equals `amplitude`.
pub fn random_field(grid: &TorusGrid, seed: u64, kmax: usize, amplitude: f64) -> Result<VectorLattice> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: VectorLattice = std::array::from_fn(|_| (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let sp = Spectral::shared(grid);
    let limited: VectorLattice = raw.map(|c| {
        let hat: Vec<Complex> = sp
            .forward(&c)
            .into_iter()
            .enumerate()
            .map(|(idx, v)| {
                let m = sp.signed_mode(idx);
                if sp.is_nyquist(idx) || m.iter().any(|x| x.unsigned_abs() as usize > kmax) {
                    Complex::default()
                } else {
                    v
                }
            })
            .collect();
        sp.inverse(&hat)
    });
    let mut u = leray_project(&limited, grid)?;
    let peak = u.iter().map(|c| max_abs(c)).fold(0.0, f64::max);
    if peak > 0.0 {
        for c in u.iter_mut() {
            for v in c.iter_mut() {
                *v *= amplitude / peak;
            }
        }
    }
    Ok(u)
}

/// Shear layer `u_x = 1` for `|z − L/2| < half_width`, minus its mean.
pub fn shear_layer(grid: &TorusGrid, half_width: f64) -> VectorLattice {
    let mid = 0.5 * grid.box_length();
    let mut ux = grid.sample(|p| if (p[2] - mid).abs() < half_width { 1.0 } else { 0.0 });
    let mean = ux.iter().sum::<f64>() / grid.len() as f64;
    for v in ux.iter_mut() {
        *v -= mean;
    }
    [ux, grid.zeros(), grid.zeros()]
}

/// Compact swirl `∇ × (0, 0, g)` with `g` a radial bump, differentiated
/// spectrally so the result is discretely divergence-free. The peak speed is
/// `amplitude`.
pub fn curl_bump(grid: &TorusGrid, center: Point, radius: f64, amplitude: f64) -> VectorLattice {
    let g = grid.sample(|p| {
        let d = crate::grid::norm([p[0] - center[0], p[1] - center[1], p[2] - center[2]]);
        bump(d / radius, 1.0)[0]
    });
    let sp = Spectral::shared(grid);
    let grad = sp.gradient(&g);
    let mut u = [grad[1].clone(), grad[0].iter().map(|v| -v).collect(), grid.zeros()];
    let peak = crate::grid::magnitude_sq(&u).iter().fold(0.0_f64, |m, v| m.max(*v)).sqrt();
    if peak > 0.0 {
        for c in u.iter_mut() {
            for v in c.iter_mut() {
                *v *= amplitude / peak;
            }
        }
    }
    u
}

/// Named initial data for configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    TaylorGreen {
        amplitude: f64,
    },
    Random {
        kmax: usize,
        amplitude: f64,
    },
    ShearLayer {
        half_width: f64,
    },
    /// Taylor-Green plus a centered swirl.
    TaylorGreenBump {
        amplitude: f64,
        bump_amplitude: f64,
        bump_radius: f64,
    },
}

impl InitialData {
    pub fn build(&self, grid: &TorusGrid, seed: u64) -> Result<VectorLattice> {
        Ok(match *self {
            InitialData::Zero => grid.zero_vector(),
            InitialData::TaylorGreen { amplitude } => taylor_green(grid, amplitude),
            InitialData::Random { kmax, amplitude } => random_field(grid, seed, kmax, amplitude)?,
            InitialData::ShearLayer { half_width } => shear_layer(grid, half_width),
            InitialData::TaylorGreenBump {
                amplitude,
                bump_amplitude,
                bump_radius,
            } => {
                let mut u = taylor_green(grid, amplitude);
                let b = curl_bump(grid, grid.center(), bump_radius, bump_amplitude);
                for c in 0..3 {
                    for (a, v) in u[c].iter_mut().zip(&b[c]) {
                        *a += v;
                    }
                }
                u
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::max_divergence;

    #[test]
    fn generated_fields_are_divergence_free() {
        let grid = TorusGrid::new(16, std::f64::consts::TAU).unwrap();
        let r = random_field(&grid, 7, 3, 1.0).unwrap();
        assert!(max_divergence(&r, &grid) < 1e-12);
        let b = curl_bump(&grid, grid.center(), 1.5, 0.1);
        assert!(max_divergence(&b, &grid) < 1e-12);
        let s = shear_layer(&grid, 0.5);
        assert!(max_divergence(&s, &grid) < 1e-12);
        assert!(s[0].iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn random_field_is_seeded() {
        let grid = TorusGrid::new(8, 1.0).unwrap();
        assert_eq!(random_field(&grid, 3, 2, 1.0).unwrap(), random_field(&grid, 3, 2, 1.0).unwrap());
        assert_ne!(random_field(&grid, 3, 2, 1.0).unwrap(), random_field(&grid, 4, 2, 1.0).unwrap());
    }
}
