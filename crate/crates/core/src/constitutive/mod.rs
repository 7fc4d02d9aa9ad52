//! Stress evaluation and plastic return mapping.

mod corotated;
mod spectral;
mod svd;
mod von_mises;

pub use corotated::{corotated_energy, fixed_corotated_p};
pub use svd::{svd3, Svd3};
pub use von_mises::{deviatoric_strain_norm, log_volume, von_mises_return_map, ReturnMap};

pub(crate) use corotated::{stress_adjoint, stress_from_svd};
pub(crate) use von_mises::return_map_adjoint;
