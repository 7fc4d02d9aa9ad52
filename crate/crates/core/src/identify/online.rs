//! Online adaptation: the twin follows a stream of observations and, at
//! quasi-static moments, takes one gradient step on a short-horizon loss.

use nalgebra::Vector3;

use super::adamw::AdamW;
use super::config::{OnlineConfig, OptimConfig};
use crate::controller::ControllerSample;
use crate::diff::{rollout_grad_from, GradOptions};
use crate::error::{Error, Result};
use crate::kernel::{step_with, StepWorkspace};
use crate::loss::{chamfer, mask_loss, OnlineObjective};
use crate::material::MaterialParams;
use crate::observation::ObservationFrame;
use crate::scene::Scene;
use crate::state::ParticleState;

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRecord {
    pub frame: u64,
    /// Chamfer distance to the frame's observation; `None` on gaps or when
    /// the observation has no points.
    pub dist: Option<f64>,
    pub mask: Option<f64>,
    /// No observation arrived for this frame; controllers held their pose.
    pub gap: bool,
    pub mean_speed: f64,
    /// The quasi-static gate was open at this frame.
    pub gated: bool,
    /// A correction was applied at this frame.
    pub corrected: bool,
    /// Parameters in effect after this frame.
    pub theta: MaterialParams,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineResult {
    pub records: Vec<OnlineRecord>,
    /// Positions after each processed frame; entry 0 is the initial state.
    pub trajectory: Vec<Vec<Vector3<f64>>>,
    /// `(frame, parameters)` after every applied correction.
    pub theta_history: Vec<(u64, MaterialParams)>,
    pub final_state: ParticleState,
}

impl OnlineResult {
    /// Mean of `dist` and `mask` over records with `frame >= from`.
    pub fn mean_losses_from(&self, from: u64) -> (f64, f64) {
        let mean = |f: &dyn Fn(&OnlineRecord) -> Option<f64>| {
            let v: Vec<f64> = self.records.iter().filter(|r| r.frame >= from).filter_map(f).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        (mean(&|r| r.dist), mean(&|r| r.mask))
    }
}

struct Twin {
    scene: Scene,
    state: ParticleState,
    step: usize,
    frame: u64,
    /// Current controller offsets.
    offsets: Vec<Vector3<f64>>,
    ws: StepWorkspace,
}

impl Twin {
    /// Advances one frame, moving controllers linearly to `targets`.
    fn advance(&mut self, targets: &[Vector3<f64>]) -> Result<()> {
        let spf = self.scene.substeps_per_frame;
        let dt = self.scene.dt;
        for (c, ctrl) in self.scene.controllers.iter_mut().enumerate() {
            let start = self.offsets[c];
            let velocity = (targets[c] - start) / (spf as f64 * dt);
            ctrl.trajectory.truncate(self.step);
            let mut offset = start;
            for _ in 0..spf {
                ctrl.trajectory.push(ControllerSample { offset, velocity });
                offset += dt * velocity;
            }
            self.offsets[c] = offset;
        }
        let lame = self.scene.params.lame()?;
        for _ in 0..spf {
            step_with(&self.scene, &lame, &mut self.state, self.step, &mut self.ws).map_err(|e| e.at_step(self.step))?;
            self.step += 1;
        }
        self.frame += 1;
        Ok(())
    }

    /// Copy of the scene whose controllers hold still for `horizon` substeps.
    fn horizon_scene(&self, horizon: usize) -> Scene {
        let mut s = self.scene.clone();
        for (c, ctrl) in s.controllers.iter_mut().enumerate() {
            ctrl.trajectory.truncate(self.step);
            ctrl.trajectory.extend(std::iter::repeat_n(
                ControllerSample {
                    offset: self.offsets[c],
                    velocity: Vector3::zeros(),
                },
                horizon,
            ));
        }
        s
    }
}

fn frame_losses(positions: &[Vector3<f64>], obs: &ObservationFrame, radius: f64) -> (Option<f64>, Option<f64>) {
    let dist = (!obs.points.is_empty())
        .then(|| chamfer(positions, &obs.points).ok())
        .flatten();
    let mask = (!obs.masks.is_empty())
        .then(|| mask_loss(positions, &obs.masks, radius).ok().map(|(m, _)| m))
        .flatten();
    (dist, mask)
}

pub fn online_loop(
    scene: &Scene,
    stream: impl IntoIterator<Item = Result<ObservationFrame>>,
    cfg: &OptimConfig,
    ocfg: &OnlineConfig,
) -> Result<OnlineResult> {
    online_loop_with(scene, stream, cfg, ocfg, &mut |_| {})
}

pub fn online_loop_with(
    scene: &Scene,
    stream: impl IntoIterator<Item = Result<ObservationFrame>>,
    cfg: &OptimConfig,
    ocfg: &OnlineConfig,
    on_record: &mut dyn FnMut(&OnlineRecord),
) -> Result<OnlineResult> {
    cfg.validate()?;
    ocfg.validate()?;
    let frozen = cfg.effective_frozen(&scene.params)?;
    cfg.check_in_bounds(&scene.params)?;
    let mut twin = Twin {
        scene: scene.clone(),
        state: scene.particles.clone(),
        step: 0,
        frame: 0,
        offsets: vec![Vector3::zeros(); scene.controllers.len()],
        ws: StepWorkspace::for_scene(scene, cfg.mode),
    };
    let mut opt = AdamW::new(ocfg.lr.unwrap_or(cfg.lr), cfg.betas, cfg.eps, cfg.weight_decay);
    let gopts = GradOptions {
        mode: cfg.mode,
        checkpoint_stride: cfg.checkpoint_stride,
        frozen,
    };
    let mut result = OnlineResult {
        records: Vec::new(),
        trajectory: vec![twin.state.position.clone()],
        theta_history: Vec::new(),
        final_state: twin.state.clone(),
    };
    // frame 0 is already the first trajectory entry
    let mut push = |result: &mut OnlineResult, rec: OnlineRecord, positions: Option<&[Vector3<f64>]>| {
        on_record(&rec);
        result.records.push(rec);
        if let Some(p) = positions {
            result.trajectory.push(p.to_vec());
        }
    };

    for obs in stream {
        let obs = obs?;
        if obs.index == 0 && twin.frame == 0 && result.records.is_empty() {
            // observation of the initial state: record it without stepping
            let (dist, mask) = frame_losses(&twin.state.position, &obs, ocfg.splat_radius_px);
            let rec = OnlineRecord {
                frame: 0,
                dist,
                mask,
                gap: false,
                mean_speed: twin.state.mean_speed(),
                gated: false,
                corrected: false,
                theta: twin.scene.params,
                note: None,
            };
            push(&mut result, rec, None);
            continue;
        }
        if obs.index <= twin.frame {
            return Err(Error::Format(format!(
                "stream frame {} does not follow frame {}",
                obs.index, twin.frame
            )));
        }
        // frames missing from the stream: hold the controllers
        while twin.frame + 1 < obs.index {
            let hold = twin.offsets.clone();
            twin.advance(&hold)?;
            let rec = OnlineRecord {
                frame: twin.frame,
                dist: None,
                mask: None,
                gap: true,
                mean_speed: twin.state.mean_speed(),
                gated: false,
                corrected: false,
                theta: twin.scene.params,
                note: Some("stream gap".into()),
            };
            push(&mut result, rec, Some(&twin.state.position));
        }
        let targets: Vec<Vector3<f64>> = if obs.controllers.len() == twin.offsets.len() {
            obs.controllers.iter().map(|c| c.offset).collect()
        } else {
            if !obs.controllers.is_empty() {
                log::warn!(
                    "frame {}: {} controller poses for {} controllers; holding",
                    obs.index,
                    obs.controllers.len(),
                    twin.offsets.len()
                );
            }
            twin.offsets.clone()
        };
        twin.advance(&targets)?;

        let (dist, mask) = frame_losses(&twin.state.position, &obs, ocfg.splat_radius_px);
        let speed = twin.state.mean_speed();
        let gated = ocfg.enabled && twin.frame % ocfg.optimize_every as u64 == 0 && speed < ocfg.quasi_static_speed;
        let mut corrected = false;
        let mut note = None;
        if gated {
            let objective = OnlineObjective {
                target: &obs,
                horizon: ocfg.horizon,
                weights: ocfg.weights,
                splat_radius_px: ocfg.splat_radius_px,
            };
            let hscene = twin.horizon_scene(ocfg.horizon);
            match rollout_grad_from(&hscene, &twin.state, twin.step, &objective, &gopts) {
                Ok((_, grad)) => {
                    let mut z = twin.scene.params.to_normalized();
                    opt.step(&mut z, &grad.normalized, &frozen);
                    cfg.project(&mut z, &frozen);
                    let theta = twin.scene.params.with_normalized(z);
                    match theta.validate() {
                        Ok(()) => {
                            twin.scene.params = theta;
                            twin.state.set_density(theta.density);
                            result.theta_history.push((twin.frame, theta));
                            corrected = true;
                        }
                        Err(e) => note = Some(format!("correction rejected: {e}")),
                    }
                }
                Err(e) => {
                    log::warn!("frame {}: correction skipped: {e}", twin.frame);
                    note = Some(format!("correction skipped: {e}"));
                }
            }
        }
        let rec = OnlineRecord {
            frame: twin.frame,
            dist,
            mask,
            gap: false,
            mean_speed: speed,
            gated,
            corrected,
            theta: twin.scene.params,
            note,
        };
        push(&mut result, rec, Some(&twin.state.position));
    }
    result.final_state = twin.state;
    Ok(result)
}
