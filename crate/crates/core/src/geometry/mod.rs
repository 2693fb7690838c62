//! Null-cone geometry of the faster wave: ray bundles, frames,
//! connection coefficients, curvature checks and cone fluxes.

pub mod bundle;
pub mod fluxes;
pub mod icosphere;
pub mod spacetime;

pub use bundle::{
    bundle_geometry, h_unit_cone_normal, raychaudhuri_residual, trace_bundle, BundleGeometry,
    BundleOptions, CoeffSample, GeodesicBundle, Ray, RaychaudhuriMutation, RaychaudhuriRow,
};
pub use fluxes::{null_fluxes, FluxReport, ScalarSampler};
pub use icosphere::{snap_direction_count, IcoMesh};
pub use spacetime::SpacetimeMetric;
