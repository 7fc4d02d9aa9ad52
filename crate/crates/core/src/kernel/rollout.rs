use nalgebra::Vector3;

use super::step::{step_with, ExecMode, NodeBc, StepWorkspace};
use crate::controller::ControllerSample;
use crate::diff::tape::{RolloutTape, StepMeta};
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::state::ParticleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutOptions {
    pub mode: ExecMode,
    /// Record a tape for reverse-mode differentiation.
    pub record: bool,
    /// Keep every k-th substep state on the tape; the rest are recomputed.
    pub checkpoint_stride: usize,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            mode: ExecMode::Parallel,
            record: false,
            checkpoint_stride: 1,
        }
    }
}

/// Particle positions sampled at the observation frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Frame 0 is the initial state.
    pub frames: Vec<Vec<Vector3<f64>>>,
    pub final_state: ParticleState,
    /// Smallest distance to the yield surface over the whole run.
    pub closest_to_yield: f64,
}

/// Runs `steps` substeps from the scene's initial particles, snapshotting
/// positions every `substeps_per_frame` substeps.
pub fn rollout(scene: &Scene, steps: usize, opts: &RolloutOptions) -> Result<(Trajectory, Option<RolloutTape>)> {
    rollout_from(scene, scene.particles.clone(), 0, steps, opts)
}

/// Same as [`rollout`] but starting from an arbitrary state at substep `start`.
pub fn rollout_from(
    scene: &Scene,
    state: ParticleState,
    start: usize,
    steps: usize,
    opts: &RolloutOptions,
) -> Result<(Trajectory, Option<RolloutTape>)> {
    rollout_observed(scene, state, start, steps, opts, |_, _| Ok(()))
}

/// Forward rollout that hands every state (relative substep `0..=steps`) to
/// `observe` as soon as it is computed.
pub(crate) fn rollout_observed(
    scene: &Scene,
    mut state: ParticleState,
    start: usize,
    steps: usize,
    opts: &RolloutOptions,
    mut observe: impl FnMut(usize, &ParticleState) -> Result<()>,
) -> Result<(Trajectory, Option<RolloutTape>)> {
    let lame = scene.params.lame()?;
    observe(0, &state)?;
    let spf = scene.substeps_per_frame;
    let stride = opts.checkpoint_stride.max(1);
    let mut ws = StepWorkspace::for_scene(scene, opts.mode);
    let mut frames = vec![state.position.clone()];
    let mut tape = opts.record.then(|| RolloutTape::new(start, steps, stride, scene.dt));
    let mut closest = f64::INFINITY;
    for k in 0..steps {
        let t = start + k;
        if let Some(tape) = tape.as_mut() {
            if k % stride == 0 {
                tape.push_checkpoint(k, state.clone());
            }
        }
        if let Err(e) = step_with(scene, &lame, &mut state, t, &mut ws) {
            let frame = frames.len() - 1;
            return Err(match e.at_step(t) {
                Error::Numerical { step, particle, msg } => Error::Numerical {
                    step,
                    particle,
                    msg: format!("{msg}; last valid frame {frame}"),
                },
                other => other,
            });
        }
        closest = closest.min(ws.closest_to_yield);
        observe(k + 1, &state)?;
        if let Some(tape) = tape.as_mut() {
            tape.meta.push(StepMeta {
                step: t,
                controllers: scene
                    .controllers
                    .iter()
                    .map(|c| c.trajectory.get(t).copied().unwrap_or(ControllerSample {
                        offset: Vector3::zeros(),
                        velocity: Vector3::zeros(),
                    }))
                    .collect(),
                dirichlet_nodes: ws
                    .node_bc
                    .iter()
                    .enumerate()
                    .filter(|(_, bc)| **bc == NodeBc::Dirichlet)
                    .map(|(i, _)| i as u32)
                    .collect(),
            });
        }
        if (k + 1) % spf == 0 {
            frames.push(state.position.clone());
        }
    }
    if let Some(tape) = tape.as_mut() {
        if steps % stride == 0 {
            tape.push_checkpoint(steps, state.clone());
        }
    }
    Ok((
        Trajectory {
            frames,
            final_state: state,
            closest_to_yield: closest,
        },
        tape,
    ))
}
