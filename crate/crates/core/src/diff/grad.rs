//! Parameter gradients of rollout objectives: reverse mode through the tape
//! and a central finite-difference oracle.

use nalgebra::Vector3;

use super::adjoint::{step_adjoint, ParamAdjoint, StateAdjoint};
use super::tape::RolloutTape;
use crate::error::{Error, Result};
use crate::kernel::{rollout_observed, step_with, ExecMode, RolloutOptions, StepWorkspace};
use crate::loss::{LossBreakdown, Objective};
use crate::material::{lame_jacobian, MaterialParams, NORMALIZATION, PARAM_NAMES};
use crate::scene::Scene;
use crate::state::ParticleState;

/// Default finite-difference step in normalized parameter space.
pub const FD_STEP: f64 = 1e-4;

/// Half-width of the band around the yield surface in which the adjoint is
/// not compared with finite differences.
pub const KINK_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradOptions {
    pub mode: ExecMode,
    pub checkpoint_stride: usize,
    /// Frozen components (E, nu, rho, y) report a zero gradient.
    pub frozen: [bool; 4],
}

impl Default for GradOptions {
    fn default() -> Self {
        GradOptions {
            mode: ExecMode::Parallel,
            checkpoint_stride: 1,
            frozen: [false; 4],
        }
    }
}

/// Gradient with respect to the normalized parameters `(E/1e6, nu, rho/1e3, y/1e5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGradient {
    pub normalized: [f64; 4],
    pub frozen: [bool; 4],
}

impl ParamGradient {
    /// Gradient with respect to the physical parameters (per Pa, per kg/m^3).
    pub fn physical(&self) -> [f64; 4] {
        let mut g = self.normalized;
        for (gi, s) in g.iter_mut().zip(NORMALIZATION) {
            *gi /= s;
        }
        g
    }
}

fn with_theta(state: &ParticleState, theta: &MaterialParams) -> ParticleState {
    let mut s = state.clone();
    s.set_density(theta.density);
    s
}

/// Forward value of `objective` from the scene's initial particles.
pub fn evaluate_objective(scene: &Scene, objective: &dyn Objective, mode: ExecMode) -> Result<LossBreakdown> {
    evaluate_objective_from(scene, &scene.particles, 0, objective, mode)
}

/// Forward value of `objective` for a rollout starting at `state` (absolute
/// substep `start`). Particle masses are reset to the scene density.
pub fn evaluate_objective_from(
    scene: &Scene,
    state: &ParticleState,
    start: usize,
    objective: &dyn Objective,
    mode: ExecMode,
) -> Result<LossBreakdown> {
    let samples = objective.sample_steps();
    let mut next = 0;
    let mut total = LossBreakdown::default();
    let opts = RolloutOptions {
        mode,
        record: false,
        checkpoint_stride: 1,
    };
    rollout_observed(
        scene,
        with_theta(state, &scene.params),
        start,
        objective.steps(),
        &opts,
        |k, s| {
            while next < samples.len() && samples[next] == k {
                total += objective.evaluate(next, &s.position, false)?.0;
                next += 1;
            }
            Ok(())
        },
    )?;
    Ok(total)
}

/// Loss and reverse-mode parameter gradient from the scene's initial particles.
pub fn rollout_grad(scene: &Scene, objective: &dyn Objective, opts: &GradOptions) -> Result<(LossBreakdown, ParamGradient)> {
    rollout_grad_from(scene, &scene.particles, 0, objective, opts)
}

/// Loss and reverse-mode parameter gradient of a rollout starting at `state`
/// (absolute substep `start`).
pub fn rollout_grad_from(
    scene: &Scene,
    state: &ParticleState,
    start: usize,
    objective: &dyn Objective,
    opts: &GradOptions,
) -> Result<(LossBreakdown, ParamGradient)> {
    let theta = scene.params;
    let lame = theta.lame()?;
    let steps = objective.steps();
    let samples = objective.sample_steps();
    let state = with_theta(state, &theta);
    let n = state.len();

    let mut loss_grads: Vec<Option<Vec<Vector3<f64>>>> = vec![None; steps + 1];
    let mut total = LossBreakdown::default();
    let mut next = 0;
    let ropts = RolloutOptions {
        mode: opts.mode,
        record: true,
        checkpoint_stride: opts.checkpoint_stride.max(1),
    };
    let (_, tape) = rollout_observed(scene, state, start, steps, &ropts, |k, s| {
        while next < samples.len() && samples[next] == k {
            let (l, g) = objective.evaluate(next, &s.position, true)?;
            total += l;
            match &mut loss_grads[k] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
            next += 1;
        }
        Ok(())
    })?;
    let tape = tape.expect("recording rollout returns a tape");

    let mut adj = StateAdjoint::zeros(n);
    let mut params = ParamAdjoint::zeros(n);
    let mut ws = StepWorkspace::for_scene(scene, opts.mode);
    let mut segment = Segment::default();
    for k in (0..steps).rev() {
        if let Some(g) = &loss_grads[k + 1] {
            adj.position.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let s_k = segment.state(scene, &lame, &tape, k, &mut ws)?;
        let mut next_state = s_k.clone();
        step_with(scene, &lame, &mut next_state, start + k, &mut ws).map_err(|e| e.at_step(start + k))?;
        step_adjoint(scene, &lame, s_k, &ws, &mut adj, &mut params);
        if !adj.is_finite() || !params.mu.is_finite() || !params.lambda.is_finite() || !params.yield_stress.is_finite() {
            return Err(Error::Numerical {
                step: Some(start + k),
                particle: None,
                msg: "non-finite adjoint".into(),
            });
        }
    }

    let grad = assemble_gradient(&theta, &params, &tape.checkpoints[0].1, opts.frozen)?;
    Ok((total, grad))
}

/// Recomputed states between two checkpoints, for stride > 1.
#[derive(Default)]
struct Segment {
    first: usize,
    states: Vec<ParticleState>,
}

impl Segment {
    /// State before relative substep `k`, recomputing the enclosing segment
    /// from its checkpoint when needed.
    fn state<'a>(
        &'a mut self,
        scene: &Scene,
        lame: &crate::material::Lame,
        tape: &'a RolloutTape,
        k: usize,
        ws: &mut StepWorkspace,
    ) -> Result<&'a ParticleState> {
        if tape.stride == 1 {
            return Ok(&tape.checkpoints[k].1);
        }
        if !(k >= self.first && k < self.first + self.states.len()) {
            let (j, cp) = tape
                .checkpoint_at_or_before(k)
                .ok_or_else(|| Error::numerical(format!("no checkpoint before substep {k}")))?;
            let end = (j + tape.stride).min(tape.steps);
            self.first = *j;
            self.states.clear();
            let mut s = cp.clone();
            for i in *j..end {
                self.states.push(s.clone());
                if i + 1 < end {
                    step_with(scene, lame, &mut s, tape.start + i, ws).map_err(|e| e.at_step(tape.start + i))?;
                }
            }
        }
        Ok(&self.states[k - self.first])
    }
}

fn assemble_gradient(
    theta: &MaterialParams,
    params: &ParamAdjoint,
    initial: &ParticleState,
    frozen: [bool; 4],
) -> Result<ParamGradient> {
    let j = lame_jacobian(theta.youngs_modulus, theta.poissons_ratio);
    let e_bar = params.mu * j[0][0] + params.lambda * j[1][0];
    let nu_bar = params.mu * j[0][1] + params.lambda * j[1][1];
    let rho_bar: f64 = params.mass.iter().zip(&initial.rest_volume).map(|(m, v)| m * v).sum();
    let y_bar = if theta.yield_stress.is_finite() {
        params.yield_stress
    } else {
        0.0
    };
    let mut normalized = [e_bar, nu_bar, rho_bar, y_bar];
    for i in 0..4 {
        normalized[i] = if frozen[i] { 0.0 } else { normalized[i] * NORMALIZATION[i] };
        if !normalized[i].is_finite() {
            return Err(Error::numerical(format!("non-finite gradient for {}", PARAM_NAMES[i])));
        }
    }
    Ok(ParamGradient { normalized, frozen })
}

/// Central differences of `loss` in normalized parameter space, one
/// component at a time. Frozen components, and `y` when it is infinite, are
/// zero; components whose perturbed evaluation fails are `None`.
pub fn finite_diff(
    theta: &MaterialParams,
    frozen: [bool; 4],
    h: f64,
    loss: impl Fn(&MaterialParams) -> Result<f64>,
) -> [Option<f64>; 4] {
    let z = theta.to_normalized();
    let mut out = [Some(0.0); 4];
    for i in 0..4 {
        if frozen[i] || (i == 3 && !theta.yield_stress.is_finite()) {
            continue;
        }
        let eval = |sign: f64| {
            let mut zi = z;
            zi[i] += sign * h;
            let t = theta.with_normalized(zi);
            t.validate()?;
            loss(&t)
        };
        out[i] = match (eval(1.0), eval(-1.0)) {
            (Ok(lp), Ok(lm)) if lp.is_finite() && lm.is_finite() => Some((lp - lm) / (2.0 * h)),
            _ => None,
        };
    }
    out
}

/// Finite-difference oracle for [`rollout_grad`].
pub fn finite_diff_grad(
    scene: &Scene,
    objective: &dyn Objective,
    h: f64,
    frozen: [bool; 4],
    mode: ExecMode,
) -> [Option<f64>; 4] {
    finite_diff_grad_from(scene, &scene.particles, 0, objective, h, frozen, mode)
}

pub fn finite_diff_grad_from(
    scene: &Scene,
    state: &ParticleState,
    start: usize,
    objective: &dyn Objective,
    h: f64,
    frozen: [bool; 4],
    mode: ExecMode,
) -> [Option<f64>; 4] {
    finite_diff(&scene.params, frozen, h, |t| {
        let perturbed = scene.with_params(*t);
        Ok(evaluate_objective_from(&perturbed, state, start, objective, mode)?.total)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub name: &'static str,
    pub frozen: bool,
    pub adjoint: f64,
    /// `None` if a perturbed rollout failed.
    pub finite_difference: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub loss: f64,
    pub rows: Vec<GradCheckRow>,
    /// Some particle came within [`KINK_BAND`] of the yield surface.
    pub near_kink: bool,
}

impl GradCheck {
    /// Largest relative error over unfrozen components; infinite when a
    /// finite difference was unavailable.
    pub fn max_relative_error(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| !r.frozen)
            .map(|r| r.relative_error.unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.near_kink || self.max_relative_error() < tol
    }
}

/// `|adjoint - fd| / max(|fd|, 1e-8)` per component.
pub fn gradient_check(scene: &Scene, objective: &dyn Objective, opts: &GradOptions, h: f64) -> Result<GradCheck> {
    let (loss, grad) = rollout_grad(scene, objective, opts)?;
    let fd = finite_diff_grad(scene, objective, h, opts.frozen, opts.mode);
    let ropts = RolloutOptions {
        mode: opts.mode,
        ..Default::default()
    };
    let (traj, _) = crate::kernel::rollout(scene, objective.steps(), &ropts)?;
    let rows = (0..4)
        .map(|i| GradCheckRow {
            name: PARAM_NAMES[i],
            frozen: opts.frozen[i],
            adjoint: grad.normalized[i],
            finite_difference: fd[i],
            relative_error: fd[i].map(|f| (grad.normalized[i] - f).abs() / f.abs().max(1e-8)),
        })
        .collect();
    Ok(GradCheck {
        loss: loss.total,
        rows,
        near_kink: scene.params.is_plastic() && traj.closest_to_yield < KINK_BAND,
    })
}
