//! ewlab: a numerical laboratory for the 3D admissible harmonic elastic
//! wave system on a periodic box.
//!
//! The crate simulates the quasilinear multi-speed wave equations,
//! performs the divergence/curl decomposition, verifies the structural
//! identities behind the decoupling of the two wave sectors, and traces
//! the acoustic null-cone geometry of the faster wave with
//! connection-coefficient and flux diagnostics.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod evolve;
pub mod fft;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod lp;
pub mod material;
pub mod metric;
pub mod norms;
pub mod random;
pub mod rescale;
pub mod spectral;
pub mod suites;

pub use error::{EwError, Result};
pub use grid::{Field, Grid3, Rank};
pub use material::MaterialSpec;
