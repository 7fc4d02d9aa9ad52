//! Material-parameter identification: offline (gradient and CMA-ES) and the
//! online adaptive loop.

mod adamw;
mod cmaes;
mod config;
mod offline;
mod online;

pub use adamw::AdamW;
pub use cmaes::{CmaEs, MAX_RESAMPLES};
pub use config::{normalized_bounds, OnlineConfig, OptimConfig, DEFAULT_BOUNDS};
pub use offline::{
    identify_cmaes, identify_cmaes_with, identify_offline, identify_offline_with, IdentifyResult, Iterate,
    Termination,
};
pub use online::{online_loop, online_loop_with, OnlineRecord, OnlineResult};
