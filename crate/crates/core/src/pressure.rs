//! Pressure from velocity: `Δπ = −∂_i∂_j(u_i u_j)` with zero mean.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{CoreError, Result};
use crate::fields::{divergence_scale, max_divergence};
use crate::grid::{Lattice, TorusGrid, VectorLattice};
use crate::spectral::{Complex, Spectral, SpectralLattice};

/// Largest grid the brute-force oracle accepts.
pub const ORACLE_CAP: usize = 24;

/// Spectral pressure solve. Fails when `u` is not divergence-free to `div_tol`
/// (relative to `max|u| · k_max` when that exceeds one).
pub fn solve_pressure(velocity: &VectorLattice, grid: &TorusGrid, div_tol: f64) -> Result<Lattice> {
    grid.check_vector(velocity)?;
    let div = max_divergence(velocity, grid);
    let allowed = div_tol * divergence_scale(velocity, grid);
    if div > allowed {
        return Err(CoreError::Precondition(format!(
            "velocity divergence {div:e} exceeds tolerance {allowed:e}"
        )));
    }
    Ok(pressure_unchecked(velocity, grid))
}

pub(crate) fn pressure_unchecked(velocity: &VectorLattice, grid: &TorusGrid) -> Lattice {
    let sp = Spectral::shared(grid);
    let products = product_spectra(&sp, velocity);
    sp.inverse(&pressure_from_products(&sp, &products))
}

/// Spectra of `u_i u_j` for the six index pairs `(i ≤ j)`.
pub(crate) fn product_spectra(sp: &Spectral, velocity: &VectorLattice) -> [SpectralLattice; 6] {
    PAIRS.map(|(i, j)| {
        let prod: Vec<f64> = velocity[i].iter().zip(&velocity[j]).map(|(a, b)| a * b).collect();
        sp.forward(&prod)
    })
}

pub(crate) const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// `π̂ = −k_i k_j F̂_ij / |k|²`, zero where `|k| = 0`.
pub(crate) fn pressure_from_products(sp: &Spectral, products: &[SpectralLattice; 6]) -> SpectralLattice {
    (0..sp.grid().len())
        .map(|idx| {
            let k2 = sp.k_sq(idx);
            if k2 == 0.0 {
                return Complex::default();
            }
            let k = sp.k_vec(idx);
            let mut s = Complex::default();
            for (p, &(i, j)) in PAIRS.iter().enumerate() {
                let w = if i == j { 1.0 } else { 2.0 };
                s += products[p][idx] * (w * k[i] * k[j]);
            }
            -s / k2
        })
        .collect()
}

/// Spectral Laplacian of a scalar lattice.
pub fn laplacian(values: &[f64], grid: &TorusGrid) -> Lattice {
    let sp = Spectral::shared(grid);
    let hat = sp.forward(values);
    let lap: SpectralLattice = hat.iter().enumerate().map(|(idx, &c)| -c * sp.k_sq(idx)).collect();
    sp.inverse(&lap)
}

/// `−∂_i∂_j(u_i u_j)` with spectral derivatives.
pub fn pressure_source(velocity: &VectorLattice, grid: &TorusGrid) -> Lattice {
    let sp = Spectral::shared(grid);
    let products = product_spectra(&sp, velocity);
    let src: SpectralLattice = (0..grid.len())
        .map(|idx| {
            let k = sp.k_vec(idx);
            let mut s = Complex::default();
            for (p, &(i, j)) in PAIRS.iter().enumerate() {
                let w = if i == j { 1.0 } else { 2.0 };
                s += products[p][idx] * (w * k[i] * k[j]);
            }
            s
        })
        .collect();
    sp.inverse(&src)
}

/// Green-function summation: `π(x) = Σ_y K_ij(x − y) u_i u_j(y)`, where
/// `K_ij` is the periodic second-derivative kernel of the Newtonian potential
/// evaluated by direct cosine summation. Cost is `O(n⁶)`.
pub fn pressure_oracle(velocity: &VectorLattice, grid: &TorusGrid) -> Result<Lattice> {
    if grid.n() > ORACLE_CAP {
        return Err(CoreError::OracleTooLarge {
            n: grid.n(),
            cap: ORACLE_CAP,
        });
    }
    grid.check_vector(velocity)?;
    let kernel = green_kernel(grid);
    let n = grid.n();
    let len = grid.len();
    let products: Vec<Vec<f64>> = PAIRS
        .iter()
        .map(|&(i, j)| velocity[i].iter().zip(&velocity[j]).map(|(a, b)| a * b).collect())
        .collect();
    let mut out = vec![0.0; len];
    for (x, o) in out.iter_mut().enumerate() {
        let [xi, xj, xk] = grid.coords(x);
        let mut acc = 0.0;
        for y in 0..len {
            let [yi, yj, yk] = grid.coords(y);
            let r = grid.index((xi + n - yi) % n, (xj + n - yj) % n, (xk + n - yk) % n);
            for (p, &(i, j)) in PAIRS.iter().enumerate() {
                let w = if i == j { 1.0 } else { 2.0 };
                acc += w * kernel[p][r] * products[p][y];
            }
        }
        *o = acc;
    }
    Ok(out)
}

type Kernel = Arc<[Lattice; 6]>;

fn green_kernel(grid: &TorusGrid) -> Kernel {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Kernel>>> = OnceLock::new();
    let key = (grid.n(), grid.box_length().to_bits());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(k) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return k.clone();
    }
    let kernel = Arc::new(build_green_kernel(grid));
    cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(key, kernel.clone());
    kernel
}

fn build_green_kernel(grid: &TorusGrid) -> [Lattice; 6] {
    let n = grid.n();
    let len = grid.len();
    let sp = Spectral::new(*grid);
    // cos/sin of 2π m r / n for axis mode m and offset r.
    let w = std::f64::consts::TAU / n as f64;
    let cos: Vec<f64> = (0..n * n).map(|t| (w * ((t / n) * (t % n) % n) as f64).cos()).collect();
    let sin: Vec<f64> = (0..n * n).map(|t| (w * ((t / n) * (t % n) % n) as f64).sin()).collect();
    let symbols: Vec<[f64; 6]> = (0..len)
        .map(|m| {
            let k2 = sp.k_sq(m);
            if k2 == 0.0 {
                return [0.0; 6];
            }
            let k = sp.k_vec(m);
            PAIRS.map(|(i, j)| -k[i] * k[j] / k2)
        })
        .collect();
    let mut kernel: [Lattice; 6] = std::array::from_fn(|_| vec![0.0; len]);
    let scale = 1.0 / len as f64;
    for r in 0..len {
        let [ri, rj, rk] = grid.coords(r);
        let mut acc = [0.0; 6];
        for (m, sym) in symbols.iter().enumerate() {
            if sym.iter().all(|&s| s == 0.0) {
                continue;
            }
            let [a, b, c] = grid.coords(m);
            // Re(e^{iθa} e^{iθb} e^{iθc})
            let (ca, sa) = (cos[a * n + ri], sin[a * n + ri]);
            let (cb, sb) = (cos[b * n + rj], sin[b * n + rj]);
            let (cc, sc) = (cos[c * n + rk], sin[c * n + rk]);
            let (cab, sab) = (ca * cb - sa * sb, ca * sb + sa * cb);
            let phase = cab * cc - sab * sc;
            for p in 0..6 {
                acc[p] += sym[p] * phase;
            }
        }
        for p in 0..6 {
            kernel[p][r] = acc[p] * scale;
        }
    }
    kernel
}
