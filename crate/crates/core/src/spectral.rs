//! Discrete Fourier machinery on a [`TorusGrid`].
//!
//! The forward transform is unnormalized and the inverse divides by `n³`.
//! Derivatives use the wavenumber `2π m / L` for signed index `m`, with the
//! Nyquist index `m = n/2` mapped to zero so that differentiation keeps real
//! fields real.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::grid::{Lattice, TorusGrid, VectorLattice};

pub use rustfft::num_complex::Complex64 as Complex;

pub type SpectralLattice = Vec<Complex>;
pub type SpectralVector = [SpectralLattice; 3];

pub struct Spectral {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

type CacheKey = (usize, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<Spectral>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<Spectral>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let scale = std::f64::consts::TAU / grid.box_length();
        let wavenumbers = (0..n).map(|m| signed_index(m, n) as f64 * scale).collect();
        Self {
            grid,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            wavenumbers,
        }
    }

    /// A process-wide shared instance for `grid`.
    pub fn shared(grid: &TorusGrid) -> Arc<Spectral> {
        let key = (grid.n(), grid.box_length().to_bits());
        let mut map = cache().lock().unwrap_or_else(|e| e.into_inner());
        map.entry(key)
            .or_insert_with(|| Arc::new(Spectral::new(*grid)))
            .clone()
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Derivative wavenumber for axis index `m` (zero at Nyquist).
    #[inline]
    pub fn wavenumber(&self, m: usize) -> f64 {
        self.wavenumbers[m]
    }

    #[inline]
    pub fn k_vec(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.grid.coords(idx);
        [self.wavenumbers[i], self.wavenumbers[j], self.wavenumbers[k]]
    }

    #[inline]
    pub fn k_sq(&self, idx: usize) -> f64 {
        let k = self.k_vec(idx);
        k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
    }

    /// Whether any component of the mode index sits on the Nyquist plane.
    #[inline]
    pub fn is_nyquist(&self, idx: usize) -> bool {
        let half = self.grid.n() / 2;
        self.grid.coords(idx).iter().any(|&m| m == half)
    }

    /// Signed mode indices of `idx`.
    #[inline]
    pub fn signed_mode(&self, idx: usize) -> [i64; 3] {
        let n = self.grid.n();
        let c = self.grid.coords(idx);
        [signed_index(c[0], n), signed_index(c[1], n), signed_index(c[2], n)]
    }

    pub fn forward(&self, values: &[f64]) -> SpectralLattice {
        let mut data: Vec<Complex> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    pub fn forward_vector(&self, field: &VectorLattice) -> SpectralVector {
        [
            self.forward(&field[0]),
            self.forward(&field[1]),
            self.forward(&field[2]),
        ]
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse(&self, spectrum: &[Complex]) -> Lattice {
        let mut data = spectrum.to_vec();
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        data.iter().map(|c| c.re * scale).collect()
    }

    pub fn inverse_vector(&self, spectrum: &SpectralVector) -> VectorLattice {
        [
            self.inverse(&spectrum[0]),
            self.inverse(&spectrum[1]),
            self.inverse(&spectrum[2]),
        ]
    }

    /// `i k_axis û`.
    pub fn derivative(&self, spectrum: &[Complex], axis: usize) -> SpectralLattice {
        spectrum
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                let k = self.k_vec(idx)[axis];
                Complex::new(-k * c.im, k * c.re)
            })
            .collect()
    }

    /// Physical-space gradient of a scalar lattice.
    pub fn gradient(&self, values: &[f64]) -> VectorLattice {
        let hat = self.forward(values);
        [
            self.inverse(&self.derivative(&hat, 0)),
            self.inverse(&self.derivative(&hat, 1)),
            self.inverse(&self.derivative(&hat, 2)),
        ]
    }

    /// Physical-space divergence from spectral components.
    pub fn divergence(&self, spectrum: &SpectralVector) -> Lattice {
        let div: SpectralLattice = (0..self.grid.len())
            .map(|idx| {
                let k = self.k_vec(idx);
                let s = spectrum[0][idx] * k[0] + spectrum[1][idx] * k[1] + spectrum[2][idx] * k[2];
                Complex::new(-s.im, s.re)
            })
            .collect();
        self.inverse(&div)
    }

    /// Mask of retained modes: every axis index satisfies
    /// `|m| < fraction · n/2`, with the Nyquist index counted as `n/2`.
    pub fn dealias_mask(&self, fraction: f64) -> Vec<bool> {
        let n = self.grid.n();
        let cutoff = fraction * (n / 2) as f64;
        (0..self.grid.len())
            .map(|idx| {
                self.grid
                    .coords(idx)
                    .iter()
                    .all(|&m| (m.min(n - m) as f64) < cutoff)
            })
            .collect()
    }

    fn transform(&self, data: &mut [Complex], fft: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n();
        let plane = n * n;
        // x lines are contiguous.
        data.par_chunks_mut(plane).for_each(|chunk| fft.process(chunk));
        // y lines: transpose each xy-plane, transform, transpose back.
        data.par_chunks_mut(plane).for_each(|chunk| {
            let mut buf = vec![Complex::default(); plane];
            for j in 0..n {
                for i in 0..n {
                    buf[j + n * i] = chunk[i + n * j];
                }
            }
            fft.process(&mut buf);
            for j in 0..n {
                for i in 0..n {
                    chunk[i + n * j] = buf[j + n * i];
                }
            }
        });
        // z lines: gather per fixed y into xz-planes.
        let mut buf = vec![Complex::default(); data.len()];
        buf.par_chunks_mut(plane).enumerate().for_each(|(j, out)| {
            for i in 0..n {
                for k in 0..n {
                    out[k + n * i] = data[i + n * (j + n * k)];
                }
            }
            fft.process(out);
        });
        data.par_chunks_mut(plane).enumerate().for_each(|(k, chunk)| {
            for j in 0..n {
                for i in 0..n {
                    chunk[i + n * j] = buf[k + n * (i + n * j)];
                }
            }
        });
    }
}

#[inline]
fn signed_index(m: usize, n: usize) -> i64 {
    if m == n / 2 {
        0
    } else if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// `Σ |û|²` over a spectral lattice.
pub fn spectral_energy(spectrum: &[Complex]) -> f64 {
    spectrum.iter().map(|c| c.norm_sqr()).sum()
}
