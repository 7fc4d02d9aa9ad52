//! Reverse-mode parameter gradients through the MPM step chain.

mod adjoint;
mod grad;
pub mod tape;

pub use adjoint::{coulomb_slide_adjoint, step_adjoint, ParamAdjoint, StateAdjoint};
pub use grad::{
    evaluate_objective, evaluate_objective_from, finite_diff, finite_diff_grad, finite_diff_grad_from,
    gradient_check, rollout_grad, rollout_grad_from, GradCheck, GradCheckRow, GradOptions, ParamGradient,
    FD_STEP, KINK_BAND,
};
pub use tape::{RolloutTape, StepMeta};
