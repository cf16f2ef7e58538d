//! Run configuration: TOML on disk, canonical JSON for hashing.

use std::path::Path;

use ckn_core::grid::Point;
use ckn_core::initial::InitialData;
use ckn_core::mollifier::MollifierSchedule;
use ckn_core::solver::SolverConfig;
use ckn_core::TorusGrid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: TorusGrid,
    pub solver: SolverConfig,
    pub initial: InitialData,
    /// Smooth comparison data `v₀`; the finest mollification of `u₀` when absent.
    #[serde(default)]
    pub reference: Option<InitialData>,
    #[serde(default)]
    pub constants: Constants,
    pub sampling: Sampling,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
}

/// Criterion constants. The defaults are uncalibrated: only their existence is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    pub epsilon1: f64,
    pub epsilon3: f64,
    pub c0: f64,
    pub mass_constant_c: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
    pub eta: f64,
    pub epsilon_measure: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            epsilon1: 0.05,
            epsilon3: 0.05,
            c0: 1.0,
            mass_constant_c: 1.0,
            l0: 1.0,
            eta: 0.05,
            epsilon_measure: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierSpec {
    pub first_radius: f64,
    pub ratio: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    /// Explicit sample points; exclusive with `lattice_stride`.
    #[serde(default)]
    pub points: Option<Vec<Point>>,
    /// Every `stride`-th grid point per axis inside the sampling core.
    #[serde(default)]
    pub lattice_stride: Option<usize>,
    /// Every `t_stride`-th snapshot with `t > 0` is a sample time.
    #[serde(default = "one")]
    pub t_stride: usize,
    /// Earliest sample time.
    #[serde(default)]
    pub t_min: f64,
    /// Decreasing radii for the gradient criterion and the M profile.
    pub radii: Vec<f64>,
    pub prop1_radius: f64,
    pub mollifier: MollifierSpec,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "ten")]
    pub schedule_samples: usize,
    /// Minimum cover radius; the grid spacing when absent.
    #[serde(default)]
    pub cover_radius: Option<f64>,
}

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub div_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { div_tol: 1e-10 }
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.solver.validate().map_err(|e| invalid("solver", e))?;
        let k = &self.constants;
        for (key, v) in [
            ("constants.epsilon3", k.epsilon3),
            ("constants.c0", k.c0),
            ("constants.mass_constant_c", k.mass_constant_c),
            ("constants.L0", k.l0),
            ("constants.eta", k.eta),
            ("constants.epsilon_measure", k.epsilon_measure),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("must be positive, got {v}")));
            }
        }
        // ε₁ = 0 is allowed: it is the degenerate threshold nothing nonzero passes.
        if !(k.epsilon1 >= 0.0 && k.epsilon1.is_finite()) {
            return Err(invalid("constants.epsilon1", format!("must be nonnegative, got {}", k.epsilon1)));
        }
        if !(self.tolerances.div_tol > 0.0) {
            return Err(invalid("tolerances.div_tol", "must be positive"));
        }
        let s = &self.sampling;
        if s.t_stride == 0 {
            return Err(invalid("sampling.t_stride", "must be at least 1"));
        }
        if !(s.t_min >= 0.0 && s.t_min.is_finite()) {
            return Err(invalid("sampling.t_min", "must be nonnegative"));
        }
        if s.radii.is_empty() {
            return Err(invalid("sampling.radii", "must not be empty"));
        }
        if s.radii.iter().any(|&r| !(r > 0.0)) || s.radii.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("sampling.radii", "must be positive and strictly decreasing"));
        }
        if !(s.prop1_radius > 0.0) {
            return Err(invalid("sampling.prop1_radius", "must be positive"));
        }
        if !(s.mu >= 0.0) {
            return Err(invalid("sampling.mu", "must be nonnegative"));
        }
        if s.schedule_samples == 0 {
            return Err(invalid("sampling.schedule_samples", "must be at least 1"));
        }
        if let Some(r) = s.cover_radius {
            if !(r > 0.0) {
                return Err(invalid("sampling.cover_radius", "must be positive"));
            }
        }
        self.schedule()?;
        let pts = self.sample_points()?;
        if pts.is_empty() {
            return Err(invalid("sampling", "no sample points"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<MollifierSchedule, CliError> {
        let m = &self.sampling.mollifier;
        MollifierSchedule::geometric(m.first_radius, m.ratio, m.count).map_err(|e| invalid("sampling.mollifier", e))
    }

    /// Margin from the box boundary that sample points must keep.
    pub fn core_margin(&self) -> f64 {
        self.grid.box_length() / 8.0
    }

    pub fn sample_points(&self) -> Result<Vec<Point>, CliError> {
        let s = &self.sampling;
        let margin = self.core_margin();
        match (&s.points, s.lattice_stride) {
            (Some(_), Some(_)) => Err(invalid("sampling", "set either points or lattice_stride, not both")),
            (None, None) => Err(invalid("sampling", "one of points or lattice_stride is required")),
            (Some(pts), None) => {
                if let Some(p) = pts.iter().find(|p| !self.grid.in_core(**p, margin)) {
                    return Err(invalid("sampling.points", format!("{p:?} is outside the sampling core")));
                }
                Ok(pts.clone())
            }
            (None, Some(0)) => Err(invalid("sampling.lattice_stride", "must be at least 1")),
            (None, Some(stride)) => Ok((0..self.grid.len())
                .filter(|&i| self.grid.coords(i).iter().all(|c| c % stride == 0))
                .map(|i| self.grid.position(i))
                .filter(|p| self.grid.in_core(*p, margin))
                .collect()),
        }
    }

    pub fn cover_radius(&self) -> f64 {
        self.sampling.cover_radius.unwrap_or(self.grid.spacing())
    }

    /// Compact JSON with sorted keys.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}
