//! Synthetic observations from a ground-truth rollout.

use nalgebra::Vector3;
use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene_file::{Occlusion, SynthConfig};
use crate::error::{Error, Result};
use crate::kernel::{rollout, ExecMode, RolloutOptions, Trajectory};
use crate::loss::binary_silhouette;
use crate::material::MaterialParams;
use crate::observation::{CameraMask, ObservationFrame, PinholeCamera, TrackedPoint};
use crate::scene::Scene;

/// Sorted random subset of `0..n` holding `round(fraction * n)` indices.
fn subset(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> Vec<usize> {
    let k = ((fraction * n as f64).round() as usize).min(n);
    if k == n {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn hidden(occlusion: &Occlusion, frame: u64, x: &Vector3<f64>) -> bool {
    match occlusion {
        Occlusion::None => false,
        Occlusion::Frames(f) => f.contains(&frame),
        Occlusion::Sweep { normal, offset, speed } => normal.dot(x) < offset + speed * frame as f64,
    }
}

/// Controller poses at the start of frame `f` of the scene.
pub fn frame_controllers(scene: &Scene, frame: usize) -> Vec<crate::controller::ControllerSample> {
    scene
        .controllers
        .iter()
        .map(|c| c.pose_at(frame * scene.substeps_per_frame, scene.dt))
        .collect()
}

/// Rolls the scene out at `theta` and observes frames `1..=frames`.
///
/// Point and tracked subsets are drawn once and kept for the whole sequence.
/// Tracked entries hidden by the occlusion keep their (noisy) position but are
/// flagged invalid; masks always come from the true positions.
pub fn synth_generate(
    scene: &Scene,
    theta: &MaterialParams,
    cfg: &SynthConfig,
    cameras: &[PinholeCamera],
    splat_radius_px: f64,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<ObservationFrame>> {
    theta.validate()?;
    if !(cfg.noise_std.is_finite() && cfg.noise_std >= 0.0) {
        return Err(Error::validation("synth.noise_std", "must be >= 0"));
    }
    let truth = scene.with_params(*theta);
    let opts = RolloutOptions {
        mode,
        ..Default::default()
    };
    let (traj, _) = rollout(&truth, truth.total_steps(), &opts)?;
    let n = truth.particles.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = subset(&mut rng, n, cfg.subsample);
    let tracked = subset(&mut rng, n, cfg.track_fraction);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::validation("synth.noise_std", e.to_string()))?;
    let mut jitter = |x: &Vector3<f64>| -> Vector3<f64> {
        if cfg.noise_std == 0.0 {
            *x
        } else {
            x + Vector3::from_fn(|_, _| noise.sample(&mut rng))
        }
    };
    let mut out = Vec::with_capacity(truth.frames);
    for f in 1..=truth.frames {
        let pos = &traj.frames[f];
        let index = f as u64;
        let observed_points = points
            .iter()
            .map(|&p| (p, jitter(&pos[p])))
            .filter(|(p, _)| !hidden(&cfg.occlusion, index, &pos[*p]))
            .map(|(_, x)| x)
            .collect();
        let observed_tracked = tracked
            .iter()
            .map(|&p| TrackedPoint {
                id: p as u64,
                position: jitter(&pos[p]),
                valid: !hidden(&cfg.occlusion, index, &pos[p]),
            })
            .collect();
        let masks = cameras
            .iter()
            .map(|c| CameraMask {
                camera: *c,
                pixels: binary_silhouette(pos, c, splat_radius_px),
            })
            .collect();
        out.push(ObservationFrame {
            index,
            points: observed_points,
            tracked: observed_tracked,
            masks,
            controllers: frame_controllers(&truth, f),
        });
    }
    Ok(out)
}

/// Trajectory export: every particle position at frames `1..=frames`.
pub fn trajectory_frames(scene: &Scene, traj: &Trajectory) -> Vec<ObservationFrame> {
    traj.frames
        .iter()
        .enumerate()
        .skip(1)
        .map(|(f, pos)| ObservationFrame {
            index: f as u64,
            points: pos.clone(),
            controllers: frame_controllers(scene, f),
            ..Default::default()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::scene::LossWeights;
    use crate::state::{box_lattice, ParticleState};

    fn scene(frames: usize, h: f64) -> Scene {
        let (pos, vol) = box_lattice(&Vector3::new(0.3, 0.3, 0.3), &Vector3::new(0.5, 0.5, 0.5), h);
        let params = MaterialParams::elastic(1e4, 0.3, 1000.0);
        Scene {
            grid: GridSpec {
                origin: Vector3::zeros(),
                dx: 0.05,
                dims: [17, 17, 17],
            },
            gravity: Vector3::new(0.0, 0.0, -9.8),
            dt: 1e-3,
            substeps_per_frame: 2,
            frames,
            damping: 0.0,
            ground: None,
            particles: ParticleState::at_rest(pos, vol, params.density),
            controllers: vec![],
            params,
            weights: LossWeights::default(),
        }
    }

    fn truth(s: &Scene) -> Trajectory {
        rollout(s, s.total_steps(), &RolloutOptions::default()).unwrap().0
    }

    #[test]
    fn noiseless_full_sample_is_bit_exact() {
        let s = scene(4, 0.04);
        let cfg = SynthConfig {
            track_fraction: 0.5,
            ..Default::default()
        };
        let obs = synth_generate(&s, &s.params, &cfg, &[], 2.0, 7, ExecMode::Parallel).unwrap();
        let t = truth(&s);
        assert_eq!(obs.len(), 4);
        for (f, o) in obs.iter().enumerate() {
            assert_eq!(o.index, f as u64 + 1);
            assert_eq!(o.points, t.frames[f + 1]);
            for tr in &o.tracked {
                assert_eq!(tr.position, t.frames[f + 1][tr.id as usize]);
            }
        }
        let ids: Vec<u64> = obs[0].tracked.iter().map(|t| t.id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ids.len(), (s.particles.len() as f64 * 0.5).round() as usize);
    }

    #[test]
    fn frame_occlusion_invalidates_tracking() {
        let s = scene(8, 0.04);
        let cfg = SynthConfig {
            occlusion: Occlusion::Frames(vec![7]),
            ..Default::default()
        };
        let obs = synth_generate(&s, &s.params, &cfg, &[], 2.0, 1, ExecMode::Parallel).unwrap();
        let f7 = &obs[6];
        assert_eq!(f7.index, 7);
        assert!(!f7.tracked.is_empty() && f7.tracked.iter().all(|t| !t.valid));
        assert!(f7.points.is_empty());
        assert!(obs[5].tracked.iter().all(|t| t.valid));
    }

    #[test]
    fn noise_has_requested_std() {
        // 5^3 = 125 particles over 80 frames: 10k samples per axis
        let s = scene(80, 0.04);
        assert_eq!(s.particles.len(), 125);
        let cfg = SynthConfig {
            noise_std: 1e-3,
            ..Default::default()
        };
        let obs = synth_generate(&s, &s.params, &cfg, &[], 2.0, 11, ExecMode::Parallel).unwrap();
        let t = truth(&s);
        for axis in 0..3 {
            let d: Vec<f64> = obs
                .iter()
                .enumerate()
                .flat_map(|(f, o)| o.points.iter().zip(&t.frames[f + 1]).map(move |(a, b)| a[axis] - b[axis]))
                .collect();
            assert_eq!(d.len(), 10_000);
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
            assert!((std - 1e-3).abs() < 0.05e-3, "axis {axis}: {std}");
        }
    }

    #[test]
    fn same_seed_same_output() {
        let s = scene(3, 0.04);
        let cfg = SynthConfig {
            noise_std: 1e-3,
            subsample: 0.5,
            ..Default::default()
        };
        let a = synth_generate(&s, &s.params, &cfg, &[], 2.0, 5, ExecMode::Parallel).unwrap();
        let b = synth_generate(&s, &s.params, &cfg, &[], 2.0, 5, ExecMode::Reference).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&s, &s.params, &cfg, &[], 2.0, 6, ExecMode::Parallel).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sweep_hides_a_growing_half_space() {
        let s = scene(4, 0.04);
        let cfg = SynthConfig {
            track_fraction: 1.0,
            occlusion: Occlusion::Sweep {
                normal: Vector3::x(),
                offset: 0.3,
                speed: 0.05,
            },
            ..Default::default()
        };
        let obs = synth_generate(&s, &s.params, &cfg, &[], 2.0, 0, ExecMode::Parallel).unwrap();
        let visible: Vec<usize> = obs.iter().map(|o| o.points.len()).collect();
        assert!(visible.windows(2).all(|w| w[0] > w[1]), "{visible:?}");
        for o in &obs {
            assert_eq!(o.tracked.iter().filter(|t| t.valid).count(), o.points.len());
        }
    }
}
