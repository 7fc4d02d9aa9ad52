//! Reverse-mode derivative of one MPM substep.
//!
//! The forward step is re-run from its input state first so that the
//! workspace holds stencils, grid fields, boundary flags and trial
//! deformations for exactly that step.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::constitutive::{return_map_adjoint, stress_adjoint, stress_from_svd, svd3};
use crate::kernel::{for_each_node, ExecMode, NodeBc, StepWorkspace, MASS_EPSILON};
use crate::material::Lame;
use crate::scene::Scene;
use crate::state::ParticleState;

/// Adjoint of a particle state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateAdjoint {
    pub position: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
    pub deformation: Vec<Matrix3<f64>>,
    pub affine: Vec<Matrix3<f64>>,
}

impl StateAdjoint {
    pub fn zeros(n: usize) -> Self {
        StateAdjoint {
            position: vec![Vector3::zeros(); n],
            velocity: vec![Vector3::zeros(); n],
            deformation: vec![Matrix3::zeros(); n],
            affine: vec![Matrix3::zeros(); n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.velocity.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.deformation.iter().all(|m| m.iter().all(|x| x.is_finite()))
            && self.affine.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// Accumulated adjoints of the material quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamAdjoint {
    pub mu: f64,
    pub lambda: f64,
    pub yield_stress: f64,
    /// Per-particle mass adjoint.
    pub mass: Vec<f64>,
}

impl ParamAdjoint {
    pub fn zeros(n: usize) -> Self {
        ParamAdjoint {
            mu: 0.0,
            lambda: 0.0,
            yield_stress: 0.0,
            mass: vec![0.0; n],
        }
    }
}

/// Particle-local part of the backward pass through the deformation update
/// and G2P. The grid-velocity adjoint is scattered afterwards.
struct G2pBar {
    x: Vector3<f64>,
    f: Matrix3<f64>,
    v: Vector3<f64>,
    /// Adjoint of `B`, where `C = 4/dx^2 B`.
    b: Matrix3<f64>,
    /// Adjoint of the gathered velocity gradient.
    g: Matrix3<f64>,
    mu: f64,
    y: f64,
}

struct P2gBar {
    x: Vector3<f64>,
    v: Vector3<f64>,
    f: Matrix3<f64>,
    c: Matrix3<f64>,
    m: f64,
    mu: f64,
    lambda: f64,
}

fn map_particles<T: Send>(mode: ExecMode, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    match mode {
        ExecMode::Reference => (0..n).map(f).collect(),
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Back-propagates `adj` (adjoint of the state after the step) to the state
/// before it, adding material adjoints into `params`.
///
/// `state` is the input of the step and `ws` the workspace produced by
/// running that step forward.
pub fn step_adjoint(
    scene: &Scene,
    lame: &Lame,
    state: &ParticleState,
    ws: &StepWorkspace,
    adj: &mut StateAdjoint,
    params: &mut ParamAdjoint,
) {
    let n = state.len();
    let spec = ws.grid.spec;
    let dx = spec.dx;
    let dt = scene.dt;
    let d_inv = 4.0 / (dx * dx);
    let y = scene.params.yield_stress;
    let grid = &ws.grid;

    // deformation update and G2P, particle-local
    let local = map_particles(ws.mode, n, |p| {
        let (ft_bar, mu_b, y_b) = return_map_adjoint(&ws.trial[p], lame, y, &adj.deformation[p]);
        let g_bar = dt * ft_bar * state.deformation[p].transpose();
        let f_bar = (Matrix3::identity() + dt * ws.velocity_gradient[p]).transpose() * ft_bar;
        let v_bar = adj.velocity[p] + dt * adj.position[p];
        let b_bar = d_inv * adj.affine[p];
        let st = &ws.stencils[p];
        let mut x_bar = adj.position[p];
        for_each_node(|a, b, c| {
            let vi = grid.velocity[st.node_index(&spec, a, b, c)];
            let w = st.weight(a, b, c);
            let g = st.gradient(a, b, c);
            let d = st.node_offset(a, b, c, dx);
            let w_bar = v_bar.dot(&vi) + vi.dot(&(b_bar * d));
            let d_bar = w * b_bar.transpose() * vi;
            let gw_bar = g_bar.transpose() * vi;
            x_bar += w_bar * g - d_bar + st.hessian(a, b, c) * gw_bar;
        });
        G2pBar {
            x: x_bar,
            f: f_bar,
            v: v_bar,
            b: b_bar,
            g: g_bar,
            mu: mu_b,
            y: y_b,
        }
    });

    // scatter into the adjoint of the constrained grid velocity
    let nodes = spec.node_count();
    let mut vel_bar = vec![Vector3::zeros(); nodes];
    for (p, l) in local.iter().enumerate() {
        let st = &ws.stencils[p];
        for_each_node(|a, b, c| {
            let idx = st.node_index(&spec, a, b, c);
            let w = st.weight(a, b, c);
            let d = st.node_offset(a, b, c, dx);
            vel_bar[idx] += w * l.v + w * (l.b * d) + l.g * st.gradient(a, b, c);
        });
    }

    // boundary conditions and the velocity update
    let decay = (-scene.damping * dt).exp();
    let mut momentum_bar = vec![Vector3::zeros(); nodes];
    let mut force_bar = vec![Vector3::zeros(); nodes];
    let mut mass_bar = vec![0.0; nodes];
    for idx in 0..nodes {
        let m = grid.mass[idx];
        if m <= MASS_EPSILON {
            continue;
        }
        let vhat_bar = match ws.node_bc[idx] {
            NodeBc::Empty | NodeBc::Dirichlet | NodeBc::Border | NodeBc::GroundStick => continue,
            NodeBc::Free => vel_bar[idx],
            NodeBc::GroundSlide => {
                let ground = scene.ground.as_ref().expect("ground contact without a ground");
                coulomb_slide_adjoint(&ws.unconstrained[idx], &ground.normal, scene.params.friction_mu, &vel_bar[idx])
            }
        };
        let s = decay * vhat_bar;
        momentum_bar[idx] = s / m;
        force_bar[idx] = dt * s / m;
        mass_bar[idx] = -s.dot(&(grid.momentum[idx] + dt * grid.force[idx])) / (m * m);
    }

    // P2G and the stress, particle-local gathers
    let back = map_particles(ws.mode, n, |p| {
        let st = &ws.stencils[p];
        let mass = state.mass[p];
        let v = state.velocity[p];
        let c_mat = state.affine[p];
        let k_mat = ws.stress[p];
        let mut x_bar = Vector3::zeros();
        let mut v_bar = Vector3::zeros();
        let mut c_bar = Matrix3::zeros();
        let mut k_bar = Matrix3::zeros();
        let mut m_bar = 0.0;
        for_each_node(|a, b, c| {
            let idx = st.node_index(&spec, a, b, c);
            let (q_bar, f_bar, mn_bar) = (momentum_bar[idx], force_bar[idx], mass_bar[idx]);
            let w = st.weight(a, b, c);
            let g = st.gradient(a, b, c);
            let d = st.node_offset(a, b, c, dx);
            let u = v + c_mat * d;
            let uq = u.dot(&q_bar) + mn_bar;
            v_bar += (w * mass) * q_bar;
            c_bar += (w * mass) * q_bar * d.transpose();
            m_bar += w * uq;
            let w_bar = mass * uq;
            let d_bar = (w * mass) * c_mat.transpose() * q_bar;
            k_bar -= f_bar * g.transpose();
            let gw_bar = -(k_mat.transpose() * f_bar);
            x_bar += w_bar * g - d_bar + st.hessian(a, b, c) * gw_bar;
        });
        // K = V0 P F^T
        let f = &state.deformation[p];
        let v0 = state.rest_volume[p];
        let svd = svd3(f);
        let p_mat = stress_from_svd(&svd, lame);
        let p_bar = v0 * k_bar * f;
        let (f_from_p, mu_b, la_b) = stress_adjoint(&svd, lame, &p_bar);
        P2gBar {
            x: x_bar,
            v: v_bar,
            f: f_from_p + v0 * k_bar.transpose() * p_mat,
            c: c_bar,
            m: m_bar,
            mu: mu_b,
            lambda: la_b,
        }
    });

    for p in 0..n {
        let (l, b) = (&local[p], &back[p]);
        adj.position[p] = l.x + b.x;
        adj.velocity[p] = b.v;
        adj.deformation[p] = l.f + b.f;
        adj.affine[p] = b.c;
        params.mu += l.mu + b.mu;
        params.lambda += b.lambda;
        params.yield_stress += l.y;
        params.mass[p] += b.m;
    }
}

/// Adjoint of the sliding branch of [`crate::kernel::coulomb_ground`]:
/// `v' = v_t (1 - mu |v_n| / |v_t|)` with `v_n < 0`, evaluated at the incoming
/// velocity `v`.
pub fn coulomb_slide_adjoint(v: &Vector3<f64>, n: &Vector3<f64>, mu: f64, out_bar: &Vector3<f64>) -> Vector3<f64> {
    let vn = v.dot(n);
    let vt = v - vn * n;
    let t = vt.norm();
    let that = vt / t;
    // v' = v_t + mu v_n t_hat
    let tangent = |w: &Vector3<f64>| w - n * n.dot(w);
    let proj_perp = |w: &Vector3<f64>| w - that * that.dot(w);
    let vt_bar = out_bar + mu * vn / t * proj_perp(out_bar);
    let vn_bar = mu * that.dot(out_bar);
    tangent(&vt_bar) + vn_bar * n
}
