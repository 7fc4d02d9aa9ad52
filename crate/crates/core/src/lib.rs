//! Differentiable material point method (MPM) for elastic and elastoplastic
//! continua, with offline and online identification of material parameters
//! from observed point clouds.

pub mod constitutive;
pub mod controller;
pub mod diff;
pub mod error;
pub mod grid;
pub mod identify;
pub mod io;
pub mod kernel;
pub mod loss;
pub mod material;
pub mod observation;
pub mod scene;
pub mod state;

pub use error::{Error, Result};
pub use material::{lame_from_params, Lame, MaterialParams};
