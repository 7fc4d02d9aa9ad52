use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinmpm::controller::{Controller, ControllerShape};
use twinmpm::grid::GridSpec;
use twinmpm::kernel::{
    coulomb_ground, for_each_node, g2p, grid_update, p2g, refresh_stencils, rollout, step, update_deformation,
    ExecMode, NodeBc, RolloutOptions, StepWorkspace,
};
use twinmpm::scene::{LossWeights, Scene};
use twinmpm::state::{box_lattice, ParticleState};
use twinmpm::MaterialParams;

fn grid(n: usize, dx: f64) -> GridSpec {
    GridSpec {
        origin: Vector3::zeros(),
        dx,
        dims: [n, n, n],
    }
}

fn scene_with(particles: ParticleState, spec: GridSpec, gravity: Vector3<f64>, dt: f64) -> Scene {
    Scene {
        grid: spec,
        gravity,
        dt,
        substeps_per_frame: 10,
        frames: 1,
        damping: 0.0,
        ground: None,
        particles,
        controllers: Vec::new(),
        params: MaterialParams::elastic(1e5, 0.3, 1000.0),
        weights: LossWeights::default(),
    }
}

fn random_particles(rng: &mut ChaCha8Rng, n: usize, spec: &GridSpec) -> ParticleState {
    let lo = 3.0 * spec.dx;
    let hi = (spec.dims[0] as f64 - 4.0) * spec.dx;
    // volumes around two particles per cell per axis
    let vol = (0.5 * spec.dx).powi(3);
    let mut s = ParticleState::at_rest(
        (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(lo..hi)))
            .collect(),
        (0..n).map(|_| rng.random_range(0.5 * vol..1.5 * vol)).collect(),
        1000.0,
    );
    for p in 0..n {
        s.velocity[p] = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        s.affine[p] = Matrix3::from_fn(|_, _| rng.random_range(-5.0..5.0));
    }
    s
}

#[test]
fn p2g_g2p_conserves_mass_and_momentum() {
    let spec = grid(16, 0.05);
    let lame = MaterialParams::elastic(1e5, 0.3, 1000.0).lame().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let mut parts = random_particles(&mut rng, 500, &spec);
        let scene = scene_with(parts.clone(), spec, Vector3::zeros(), 1e-4);
        let mut ws = StepWorkspace::new(spec, ExecMode::Reference);
        refresh_stencils(&parts, &mut ws);
        p2g(&parts, &lame, &mut ws).unwrap();
        let before = parts.total_momentum();
        let total: f64 = parts.total_mass();
        // equal up to summation round-off (node order vs particle order)
        let rel = (ws.grid.total_mass() - total).abs() / total;
        assert!(rel <= 1e-14, "{rel}");
        assert!((ws.grid.total_momentum() - before).norm() <= 1e-12 * before.norm());
        // zero forces: drop the stress scatter, then transfer back
        ws.grid.force.iter_mut().for_each(|f| *f = Vector3::zeros());
        grid_update(&scene, &mut ws, 0);
        g2p(&mut parts, &mut ws, 0.0).unwrap();
        let after = parts.total_momentum();
        assert!((after - before).norm() <= 1e-10 * before.norm(), "{before:?} {after:?}");
    }
}

#[test]
fn single_particle_on_a_node() {
    let spec = grid(10, 0.1);
    let lame = MaterialParams::elastic(1e5, 0.3, 1000.0).lame().unwrap();
    let mut parts = ParticleState::at_rest(vec![Vector3::new(0.5, 0.5, 0.5)], vec![1e-3], 1000.0);
    parts.velocity[0] = Vector3::new(1.0, 0.0, 0.0);
    let mut ws = StepWorkspace::new(spec, ExecMode::Reference);
    refresh_stencils(&parts, &mut ws);
    p2g(&parts, &lame, &mut ws).unwrap();
    let node = spec.index(5, 5, 5);
    // the quadratic spline puts 0.75 per axis on the coincident node
    assert!((ws.grid.mass[node] - 0.75f64.powi(3)).abs() < 1e-15);
    assert!((ws.grid.total_mass() - 1.0).abs() < 1e-15);
    assert!((ws.grid.total_momentum() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
}

#[test]
fn affine_particle_spreads_momentum_without_net_change() {
    let spec = grid(10, 0.1);
    let lame = MaterialParams::elastic(1e5, 0.3, 1000.0).lame().unwrap();
    let xp = Vector3::new(0.43, 0.51, 0.47);
    let mut parts = ParticleState::at_rest(vec![xp], vec![1e-3], 1000.0);
    let c = 2.5;
    parts.affine[0] = c * Matrix3::identity();
    let mut ws = StepWorkspace::new(spec, ExecMode::Reference);
    refresh_stencils(&parts, &mut ws);
    p2g(&parts, &lame, &mut ws).unwrap();
    let st = ws.stencils[0];
    for_each_node(|a, b, cc| {
        let idx = st.node_index(&spec, a, b, cc);
        let expect = st.weight(a, b, cc) * c * (spec.node_position(idx) - xp);
        assert!((ws.grid.momentum[idx] - expect).norm() < 1e-14);
    });
    assert!(ws.grid.total_momentum().norm() < 1e-14);
}

#[test]
fn grid_update_examples() {
    let spec = grid(10, 0.1);
    let lame = MaterialParams::elastic(1e5, 0.3, 1000.0).lame().unwrap();
    let parts = ParticleState::at_rest(vec![Vector3::new(0.45, 0.52, 0.5)], vec![1e-3], 1000.0);
    let mut scene = scene_with(parts.clone(), spec, Vector3::new(0.0, 0.0, -9.8), 1e-3);
    let mut ws = StepWorkspace::new(spec, ExecMode::Reference);
    refresh_stencils(&parts, &mut ws);
    p2g(&parts, &lame, &mut ws).unwrap();
    grid_update(&scene, &mut ws, 0);
    for idx in 0..spec.node_count() {
        if ws.grid.mass[idx] > 0.0 {
            assert!((ws.grid.velocity[idx].z + 9.8e-3).abs() < 1e-15);
        }
    }

    // Dirichlet overwrite
    let u = Vector3::new(0.1, 0.0, 0.0);
    scene.controllers.push(Controller::from_segments(
        ControllerShape::Sphere {
            center: Vector3::new(0.5, 0.5, 0.5),
            radius: 0.01,
        },
        &[(1, u)],
        1e-3,
        1,
    ));
    grid_update(&scene, &mut ws, 0);
    let node = spec.index(5, 5, 5);
    assert_eq!(ws.node_bc[node], NodeBc::Dirichlet);
    assert_eq!(ws.grid.velocity[node], u);
}

#[test]
fn coulomb_example() {
    let (v, bc) = coulomb_ground(&Vector3::new(0.3, 0.0, -0.4), &Vector3::z(), 0.5);
    assert!((v - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    assert_eq!(bc, Some(NodeBc::GroundSlide));
    let (v, bc) = coulomb_ground(&Vector3::new(0.1, 0.0, -0.4), &Vector3::z(), 0.5);
    assert_eq!(v, Vector3::zeros());
    assert_eq!(bc, Some(NodeBc::GroundStick));
    let (v, bc) = coulomb_ground(&Vector3::new(0.1, 0.0, 0.4), &Vector3::z(), 0.5);
    assert_eq!(v, Vector3::new(0.1, 0.0, 0.4));
    assert_eq!(bc, None);
}

fn fill_grid(ws: &mut StepWorkspace, field: impl Fn(&Vector3<f64>) -> Vector3<f64>) {
    let spec = ws.grid.spec;
    for idx in 0..spec.node_count() {
        ws.grid.velocity[idx] = field(&spec.node_position(idx));
    }
}

#[test]
fn g2p_reconstructs_uniform_and_affine_fields() {
    let spec = grid(12, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut parts = random_particles(&mut rng, 50, &spec);
    let start = parts.position.clone();
    let mut ws = StepWorkspace::new(spec, ExecMode::Reference);

    refresh_stencils(&parts, &mut ws);
    fill_grid(&mut ws, |_| Vector3::zeros());
    g2p(&mut parts, &mut ws, 1e-3).unwrap();
    assert_eq!(parts.position, start);

    let vstar = Vector3::new(0.3, -0.2, 0.1);
    fill_grid(&mut ws, |_| vstar);
    g2p(&mut parts, &mut ws.clone(), 0.0).unwrap();
    for p in 0..parts.len() {
        assert!((parts.velocity[p] - vstar).norm() < 1e-14);
        assert!(parts.affine[p].norm() < 1e-10);
    }

    let a = Matrix3::new(0.2, -0.1, 0.4, 0.3, 0.05, -0.2, -0.15, 0.25, 0.1);
    fill_grid(&mut ws, |x| a * x);
    let before = parts.deformation.clone();
    g2p(&mut parts, &mut ws, 0.0).unwrap();
    for p in 0..parts.len() {
        assert!((parts.affine[p] - a).norm() < 1e-10);
        assert!((parts.velocity[p] - a * parts.position[p]).norm() < 1e-12);
        assert!((ws.velocity_gradient[p] - a).norm() < 1e-10);
    }
    let dt = 1e-3;
    let lame = MaterialParams::elastic(1e5, 0.3, 1000.0).lame().unwrap();
    update_deformation(&mut parts, &mut ws, dt, &lame, f64::INFINITY).unwrap();
    for p in 0..parts.len() {
        let expect = (Matrix3::identity() + dt * a) * before[p];
        assert!((parts.deformation[p] - expect).norm() < 1e-10);
    }
}

#[test]
fn free_fall_matches_symplectic_euler() {
    let spec = grid(12, 0.05);
    let x0 = Vector3::new(0.3, 0.3, 0.32);
    let v0 = Vector3::new(0.1, 0.0, 0.05);
    let mut s = ParticleState::at_rest(vec![x0], vec![1e-6], 1000.0);
    s.velocity[0] = v0;
    let g = Vector3::new(0.0, 0.0, -9.8);
    let dt = 1e-4;
    let scene = scene_with(s.clone(), spec, g, dt);
    let mut ws = StepWorkspace::for_scene(&scene, ExecMode::Reference);
    let mut x = x0;
    for k in 1..=500 {
        step(&scene, &mut s, k - 1, &mut ws).unwrap();
        let v = v0 + k as f64 * dt * g;
        x += dt * v;
        assert!((s.velocity[0] - v).norm() < 1e-9, "step {k}");
        assert!((s.position[0] - x).norm() < 1e-9, "step {k}");
    }
}

#[test]
fn rest_state_is_a_fixed_point() {
    let spec = grid(12, 0.05);
    let (pos, vol) = box_lattice(&Vector3::new(0.2, 0.2, 0.2), &Vector3::new(0.35, 0.3, 0.3), 0.025);
    let s0 = ParticleState::at_rest(pos, vol, 1000.0);
    let scene = scene_with(s0.clone(), spec, Vector3::zeros(), 1e-4);
    let (traj, _) = rollout(&scene, 50, &RolloutOptions::default()).unwrap();
    assert_eq!(traj.final_state, s0);
}

fn bar_scene(mode_speed: f64) -> Scene {
    let spec = grid(20, 0.02);
    let (pos, vol) = box_lattice(&Vector3::new(0.12, 0.18, 0.18), &Vector3::new(0.28, 0.22, 0.22), 0.01);
    let dt = 2e-4;
    let steps = 400;
    let sphere = |x: f64| ControllerShape::Sphere {
        center: Vector3::new(x, 0.2, 0.2),
        radius: 0.012,
    };
    let mut scene = scene_with(ParticleState::at_rest(pos, vol, 1000.0), spec, Vector3::zeros(), dt);
    scene.params = MaterialParams::elastic(5e4, 0.3, 1000.0);
    scene.substeps_per_frame = 20;
    scene.frames = steps / 20;
    scene.controllers = vec![
        Controller::from_segments(sphere(0.125), &[(steps, Vector3::new(-mode_speed, 0.0, 0.0))], dt, steps),
        Controller::from_segments(sphere(0.275), &[(steps, Vector3::new(mode_speed, 0.0, 0.0))], dt, steps),
    ];
    scene
}

#[test]
fn bar_ends_follow_the_controllers() {
    let scene = bar_scene(0.05);
    scene.validate().unwrap();
    let (traj, _) = rollout(&scene, scene.total_steps(), &RolloutOptions::default()).unwrap();
    assert_eq!(traj.frames.len(), scene.frames + 1);
    let x0 = &traj.frames[0];
    let left: Vec<usize> = (0..x0.len()).filter(|&p| x0[p].x < 0.13).collect();
    let right: Vec<usize> = (0..x0.len()).filter(|&p| x0[p].x > 0.27).collect();
    for (f, pts) in traj.frames.iter().enumerate() {
        let t = (f * scene.substeps_per_frame) as f64 * scene.dt;
        for (&p, sign) in left.iter().map(|p| (p, -1.0)).chain(right.iter().map(|p| (p, 1.0))) {
            let expected = x0[p].x + sign * 0.05 * t;
            assert!((pts[p].x - expected).abs() < scene.grid.dx, "frame {f} particle {p}");
        }
    }
    assert!((traj.final_state.total_mass() - scene.particles.total_mass()).abs() < 1e-18);
}

#[test]
fn parallel_and_reference_rollouts_are_bit_identical() {
    let mut scene = bar_scene(0.2);
    scene.gravity = Vector3::new(0.0, -9.8, 0.0);
    let steps = 100;
    let par = rollout(&scene, steps, &RolloutOptions::default()).unwrap().0;
    let reference = rollout(
        &scene,
        steps,
        &RolloutOptions {
            mode: ExecMode::Reference,
            ..Default::default()
        },
    )
    .unwrap()
    .0;
    assert_eq!(par, reference);
    assert_eq!(par, rollout(&scene, steps, &RolloutOptions::default()).unwrap().0);
}

#[test]
fn tape_replay_is_bit_exact() {
    let mut scene = bar_scene(0.2);
    scene.gravity = Vector3::new(0.0, -9.8, 0.0);
    let steps = 40;
    let opts = RolloutOptions {
        record: true,
        ..Default::default()
    };
    let (_, tape) = rollout(&scene, steps, &opts).unwrap();
    let tape = tape.unwrap();
    assert_eq!(tape.checkpoints.len(), steps + 1);
    assert_eq!(tape.meta.len(), steps);
    assert!(!tape.meta[0].dirichlet_nodes.is_empty());
    let mut ws = StepWorkspace::for_scene(&scene, ExecMode::Reference);
    for k in 0..steps {
        let mut s = tape.checkpoints[k].1.clone();
        step(&scene, &mut s, k, &mut ws).unwrap();
        assert_eq!(s, tape.checkpoints[k + 1].1, "replay of step {k}");
    }
}

#[test]
fn zero_steps_keeps_only_the_initial_frame() {
    let scene = bar_scene(0.05);
    let (traj, _) = rollout(&scene, 0, &RolloutOptions::default()).unwrap();
    assert_eq!(traj.frames.len(), 1);
    assert_eq!(traj.frames[0], scene.particles.position);
}

#[test]
fn prestretched_block_oscillates_with_constant_mass() {
    let spec = grid(16, 0.02);
    let (pos, vol) = box_lattice(&Vector3::new(0.12, 0.12, 0.12), &Vector3::new(0.2, 0.18, 0.18), 0.01);
    let mut s = ParticleState::at_rest(pos, vol, 1000.0);
    let c = Vector3::new(0.16, 0.15, 0.15);
    for p in 0..s.len() {
        s.position[p].x = c.x + 1.05 * (s.position[p].x - c.x);
        s.deformation[p] = Matrix3::from_diagonal(&Vector3::new(1.05, 1.0, 1.0));
    }
    let mut scene = scene_with(s, spec, Vector3::zeros(), 1e-4);
    scene.params = MaterialParams::elastic(5e4, 0.3, 1000.0);
    let mut ws = StepWorkspace::for_scene(&scene, ExecMode::Parallel);
    let mut state = scene.particles.clone();
    let width = |s: &ParticleState| {
        let xs = s.position.iter().map(|p| p.x);
        xs.clone().fold(f64::MIN, f64::max) - xs.fold(f64::MAX, f64::min)
    };
    let w0 = width(&state);
    let mut min_w = w0;
    let mut rebound = false;
    for t in 0..1500 {
        step(&scene, &mut state, t, &mut ws).unwrap();
        assert_eq!(state.total_mass(), scene.particles.total_mass());
        let w = width(&state);
        if w < min_w {
            min_w = w;
        } else if w > min_w + 0.3 * (w0 - min_w) && min_w < w0 - 1e-3 {
            rebound = true;
        }
    }
    assert!(min_w < w0 - 1e-3, "block never contracted");
    assert!(rebound, "block never rebounded");
}
