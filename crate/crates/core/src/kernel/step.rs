//! One explicit MPM substep: P2G, grid update with boundary conditions, G2P
//! and the deformation-gradient update.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::bspline::{for_each_node, Stencil};
use crate::constitutive::{stress_from_svd, svd3, von_mises_return_map};
use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::material::Lame;
use crate::scene::Scene;
use crate::state::ParticleState;

/// Nodes lighter than this keep zero velocity.
pub const MASS_EPSILON: f64 = 1e-12;

/// Particles must keep this many cells to the grid faces after advection so
/// that their next stencil stays in bounds.
pub const ADVECTION_MARGIN_CELLS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Particle-range parallelism with an order-preserving merge; results
    /// are bit-identical to [`ExecMode::Reference`].
    #[default]
    Parallel,
    /// Plain serial loops.
    Reference,
}

/// Boundary condition applied to a node during the last grid update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeBc {
    #[default]
    Free,
    /// Velocity overwritten by a controller.
    Dirichlet,
    /// Ground contact with the tangential velocity reduced by friction.
    GroundSlide,
    /// Ground contact where friction removed all tangential motion.
    GroundStick,
    /// Grid-border node, zeroed.
    Border,
    /// Below the mass threshold.
    Empty,
}

/// Scratch state for one substep. After [`step`] it holds every intermediate
/// the adjoint needs.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    pub mode: ExecMode,
    pub grid: GridField,
    pub stencils: Vec<Stencil>,
    /// `V0 P F^T` per particle.
    pub stress: Vec<Matrix3<f64>>,
    /// Grid velocity after forces, before boundary conditions.
    pub unconstrained: Vec<Vector3<f64>>,
    pub node_bc: Vec<NodeBc>,
    /// `sum_i v_i grad w_ip^T` per particle.
    pub velocity_gradient: Vec<Matrix3<f64>>,
    /// Trial deformation gradient before the return map.
    pub trial: Vec<Matrix3<f64>>,
    /// Smallest `|delta_gamma|` seen by the return map this step.
    pub closest_to_yield: f64,
}

impl StepWorkspace {
    pub fn new(spec: GridSpec, mode: ExecMode) -> Self {
        let n = spec.node_count();
        StepWorkspace {
            mode,
            grid: GridField::new(spec),
            stencils: Vec::new(),
            stress: Vec::new(),
            unconstrained: vec![Vector3::zeros(); n],
            node_bc: vec![NodeBc::Empty; n],
            velocity_gradient: Vec::new(),
            trial: Vec::new(),
            closest_to_yield: f64::INFINITY,
        }
    }

    pub fn for_scene(scene: &Scene, mode: ExecMode) -> Self {
        Self::new(scene.grid, mode)
    }
}

/// Recomputes the interpolation stencils for the current positions.
pub fn refresh_stencils(particles: &ParticleState, ws: &mut StepWorkspace) {
    let spec = ws.grid.spec;
    ws.stencils.clear();
    ws.stencils
        .extend(particles.position.iter().map(|x| Stencil::new(&spec.to_cell(x), spec.dx)));
}

#[inline]
fn contribution(
    st: &Stencil,
    dx: f64,
    mass: f64,
    v: &Vector3<f64>,
    affine: &Matrix3<f64>,
    stress: &Matrix3<f64>,
    a: usize,
    b: usize,
    c: usize,
) -> (f64, Vector3<f64>, Vector3<f64>) {
    let w = st.weight(a, b, c);
    let d = st.node_offset(a, b, c, dx);
    let wm = w * mass;
    (wm, wm * (v + affine * d), -(stress * st.gradient(a, b, c)))
}

/// Transfers mass and APIC momentum to the grid and scatters internal forces
/// `f_i = -sum_p V0 P F^T grad w_ip`. Leaves grid velocities zeroed; they are
/// set by [`grid_update`].
pub fn p2g(particles: &ParticleState, lame: &Lame, ws: &mut StepWorkspace) -> Result<()> {
    particles.check_finite()?;
    let n = particles.len();
    ws.stress.resize(n, Matrix3::zeros());
    for p in 0..n {
        let f = &particles.deformation[p];
        if !(f.determinant() > 0.0) {
            return Err(Error::Numerical {
                step: None,
                particle: Some(p),
                msg: "deformation gradient determinant is not positive".into(),
            });
        }
    }
    let stress_of = |p: usize| {
        let f = &particles.deformation[p];
        particles.rest_volume[p] * stress_from_svd(&svd3(f), lame) * f.transpose()
    };
    match ws.mode {
        ExecMode::Reference => ws.stress.iter_mut().enumerate().for_each(|(p, s)| *s = stress_of(p)),
        ExecMode::Parallel => ws.stress.par_iter_mut().enumerate().for_each(|(p, s)| *s = stress_of(p)),
    }

    ws.grid.clear();
    let spec = ws.grid.spec;
    let dx = spec.dx;
    let stencils = &ws.stencils;
    let stress = &ws.stress;
    match ws.mode {
        ExecMode::Reference => {
            let g = &mut ws.grid;
            for p in 0..n {
                let st = &stencils[p];
                for_each_node(|a, b, c| {
                    let idx = st.node_index(&spec, a, b, c);
                    let (dm, dq, df) = contribution(
                        st,
                        dx,
                        particles.mass[p],
                        &particles.velocity[p],
                        &particles.affine[p],
                        &stress[p],
                        a,
                        b,
                        c,
                    );
                    g.mass[idx] += dm;
                    g.momentum[idx] += dq;
                    g.force[idx] += df;
                });
            }
        }
        ExecMode::Parallel => {
            // One task per x-layer; each visits particles in index order so
            // every node accumulates in the same order as the serial loop.
            let layer = spec.layer_len();
            let g = &mut ws.grid;
            g.mass
                .par_chunks_mut(layer)
                .zip(g.momentum.par_chunks_mut(layer))
                .zip(g.force.par_chunks_mut(layer))
                .enumerate()
                .for_each(|(i, ((mass, momentum), force))| {
                    for p in 0..n {
                        let st = &stencils[p];
                        if i < st.base[0] || i > st.base[0] + 2 {
                            continue;
                        }
                        let a = i - st.base[0];
                        for b in 0..3 {
                            for c in 0..3 {
                                let local = (st.base[1] + b) * spec.dims[2] + st.base[2] + c;
                                let (dm, dq, df) = contribution(
                                    st,
                                    dx,
                                    particles.mass[p],
                                    &particles.velocity[p],
                                    &particles.affine[p],
                                    &stress[p],
                                    a,
                                    b,
                                    c,
                                );
                                mass[local] += dm;
                                momentum[local] += dq;
                                force[local] += df;
                            }
                        }
                    }
                });
        }
    }
    Ok(())
}

/// Coulomb friction against a ground plane with unit normal `n`.
/// Returns the new velocity and whether friction stuck the node.
#[inline]
pub fn coulomb_ground(v: &Vector3<f64>, n: &Vector3<f64>, friction_mu: f64) -> (Vector3<f64>, Option<NodeBc>) {
    let vn = v.dot(n);
    if vn >= 0.0 {
        return (*v, None);
    }
    let vt = v - vn * n;
    let t = vt.norm();
    if t <= friction_mu * -vn {
        (Vector3::zeros(), Some(NodeBc::GroundStick))
    } else {
        (vt * (1.0 - friction_mu * -vn / t), Some(NodeBc::GroundSlide))
    }
}

/// Velocity update `v <- (p + dt f) / m + dt g`, optional damping, then in
/// order: controller Dirichlet, ground Coulomb friction, border zeroing.
pub fn grid_update(scene: &Scene, ws: &mut StepWorkspace, step: usize) {
    let spec = ws.grid.spec;
    let dt = scene.dt;
    let decay = (-scene.damping * dt).exp();
    let inflation = spec.dx;
    let g = &mut ws.grid;
    for idx in 0..spec.node_count() {
        let m = g.mass[idx];
        if m <= MASS_EPSILON {
            ws.unconstrained[idx] = Vector3::zeros();
            g.velocity[idx] = Vector3::zeros();
            ws.node_bc[idx] = NodeBc::Empty;
            continue;
        }
        let v = decay * ((g.momentum[idx] + dt * g.force[idx]) / m + dt * scene.gravity);
        ws.unconstrained[idx] = v;
        let x = spec.node_position(idx);
        let mut v = v;
        let mut bc = NodeBc::Free;
        for ctrl in &scene.controllers {
            if ctrl.contains(&x, step, inflation) {
                v = ctrl.trajectory[step].velocity;
                bc = NodeBc::Dirichlet;
                break;
            }
        }
        if let Some(ground) = &scene.ground {
            if ground.normal.dot(&x) <= ground.height {
                let (vg, contact) = coulomb_ground(&v, &ground.normal, scene.params.friction_mu);
                if let Some(c) = contact {
                    v = vg;
                    if bc != NodeBc::Dirichlet {
                        bc = c;
                    }
                }
            }
        }
        if spec.is_border(idx) {
            v = Vector3::zeros();
            bc = NodeBc::Border;
        }
        g.velocity[idx] = v;
        ws.node_bc[idx] = bc;
    }
}

#[inline]
fn gather(st: &Stencil, grid: &GridField) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let spec = &grid.spec;
    let dx = spec.dx;
    let mut v = Vector3::zeros();
    let mut b = Matrix3::zeros();
    let mut grad = Matrix3::zeros();
    for_each_node(|i, j, k| {
        let vi = grid.velocity[st.node_index(spec, i, j, k)];
        let w = st.weight(i, j, k);
        v += w * vi;
        b += (w * vi) * st.node_offset(i, j, k, dx).transpose();
        grad += vi * st.gradient(i, j, k).transpose();
    });
    (v, b, grad)
}

/// Grid-to-particle transfer: velocities, APIC matrices `C = 4/dx^2 B` and
/// advected positions.
pub fn g2p(particles: &mut ParticleState, ws: &mut StepWorkspace, dt: f64) -> Result<()> {
    let n = particles.len();
    ws.velocity_gradient.resize(n, Matrix3::zeros());
    let spec = ws.grid.spec;
    let d_inv = 4.0 / (spec.dx * spec.dx);
    let grid = &ws.grid;
    let stencils = &ws.stencils;
    let update = |(((x, v), c), vg): (((&mut Vector3<f64>, &mut Vector3<f64>), &mut Matrix3<f64>), &mut Matrix3<f64>),
                  st: &Stencil| {
        let (vp, b, grad) = gather(st, grid);
        *v = vp;
        *c = d_inv * b;
        *vg = grad;
        *x += dt * vp;
    };
    let ParticleState {
        position,
        velocity,
        affine,
        ..
    } = particles;
    match ws.mode {
        ExecMode::Reference => position
            .iter_mut()
            .zip(velocity.iter_mut())
            .zip(affine.iter_mut())
            .zip(ws.velocity_gradient.iter_mut())
            .zip(stencils)
            .for_each(|(item, st)| update(item, st)),
        ExecMode::Parallel => position
            .par_iter_mut()
            .zip(velocity.par_iter_mut())
            .zip(affine.par_iter_mut())
            .zip(ws.velocity_gradient.par_iter_mut())
            .zip(stencils.par_iter())
            .for_each(|(item, st)| update(item, st)),
    }
    for (p, x) in particles.position.iter().enumerate() {
        if !spec.contains_with_margin(x, ADVECTION_MARGIN_CELLS) {
            return Err(Error::Numerical {
                step: None,
                particle: Some(p),
                msg: format!("particle advected outside the safe grid margin to {x:?}"),
            });
        }
    }
    Ok(())
}

/// `F_trial = (I + dt sum_i v_i grad w_ip^T) F_E`, followed by the return map.
/// Uses the velocity gradient gathered by [`g2p`].
pub fn update_deformation(
    particles: &mut ParticleState,
    ws: &mut StepWorkspace,
    dt: f64,
    lame: &Lame,
    yield_stress: f64,
) -> Result<()> {
    let n = particles.len();
    ws.trial.resize(n, Matrix3::zeros());
    for p in 0..n {
        let trial = (Matrix3::identity() + dt * ws.velocity_gradient[p]) * particles.deformation[p];
        if !(trial.determinant() > 0.0) {
            return Err(Error::Numerical {
                step: None,
                particle: Some(p),
                msg: "trial deformation inverted (time step too large)".into(),
            });
        }
        ws.trial[p] = trial;
    }
    if yield_stress.is_infinite() {
        particles.deformation.copy_from_slice(&ws.trial);
        ws.closest_to_yield = f64::INFINITY;
        return Ok(());
    }
    let trial = &ws.trial;
    let map = |p: usize| von_mises_return_map(&trial[p], lame, yield_stress);
    let maps: Vec<_> = match ws.mode {
        ExecMode::Reference => (0..n).map(map).collect(),
        ExecMode::Parallel => (0..n).into_par_iter().map(map).collect(),
    };
    let mut closest = f64::INFINITY;
    for (p, r) in maps.into_iter().enumerate() {
        let r = r?;
        closest = closest.min(r.delta_gamma.abs());
        particles.deformation[p] = r.elastic;
    }
    ws.closest_to_yield = closest;
    Ok(())
}

/// Advances `state` by one substep with the scene's material parameters.
pub fn step(scene: &Scene, state: &mut ParticleState, t: usize, ws: &mut StepWorkspace) -> Result<()> {
    let lame = scene.params.lame()?;
    step_with(scene, &lame, state, t, ws).map_err(|e| e.at_step(t))
}

pub(crate) fn step_with(
    scene: &Scene,
    lame: &Lame,
    state: &mut ParticleState,
    t: usize,
    ws: &mut StepWorkspace,
) -> Result<()> {
    refresh_stencils(state, ws);
    p2g(state, lame, ws)?;
    grid_update(scene, ws, t);
    g2p(state, ws, scene.dt)?;
    update_deformation(state, ws, scene.dt, lame, scene.params.yield_stress)
}
