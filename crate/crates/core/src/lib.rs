//! Numerical laboratory for partial-regularity criteria of the incompressible
//! Navier-Stokes equations on a periodic box.

pub mod criteria;
pub mod error;
pub mod fields;
pub mod grid;
pub mod initial;
pub mod mollifier;
pub mod pressure;
pub mod quadrature;
pub mod snapshot_io;
pub mod solver;
pub mod spectral;
pub mod weighted;

pub use error::{CoreError, Result};
pub use fields::FieldSnapshot;
pub use grid::TorusGrid;
