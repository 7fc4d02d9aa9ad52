//! Explicit MPM time stepping.

mod bspline;
mod rollout;
mod step;

pub use bspline::{bspline_weights, for_each_node, quadratic_kernel, Stencil};
pub use rollout::{rollout, rollout_from, RolloutOptions, Trajectory};
pub use step::{
    coulomb_ground, g2p, grid_update, p2g, refresh_stencils, step, update_deformation, ExecMode, NodeBc,
    StepWorkspace, ADVECTION_MARGIN_CELLS, MASS_EPSILON,
};

pub(crate) use rollout::rollout_observed;
pub(crate) use step::step_with;
