//! Offline identification over a whole observed sequence.

use nalgebra::DVector;
use rayon::prelude::*;

use super::adamw::AdamW;
use super::cmaes::CmaEs;
use super::config::OptimConfig;
use crate::diff::{evaluate_objective, rollout_grad, GradOptions};
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, OfflineObjective};
use crate::material::MaterialParams;
use crate::observation::ObservationFrame;
use crate::scene::Scene;

/// One recorded iterate (gradient path) or generation (CMA-ES).
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub iteration: usize,
    pub theta: MaterialParams,
    pub loss: LossBreakdown,
    /// Learning rate in effect (gradient path) or step size (CMA-ES).
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    /// Stopped early; the result still holds the best iterate so far.
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyResult {
    /// Best-loss parameters seen.
    pub theta: MaterialParams,
    pub best_loss: f64,
    pub best_iteration: usize,
    pub history: Vec<Iterate>,
    pub termination: Termination,
}

impl IdentifyResult {
    fn new(first: Iterate) -> Self {
        IdentifyResult {
            theta: first.theta,
            best_loss: first.loss.total,
            best_iteration: first.iteration,
            history: vec![first],
            termination: Termination::Completed,
        }
    }

    fn record(&mut self, it: Iterate, on_iterate: &mut dyn FnMut(&Iterate)) {
        on_iterate(&it);
        if it.loss.total < self.best_loss {
            self.best_loss = it.loss.total;
            self.best_iteration = it.iteration;
            self.theta = it.theta;
        }
        self.history.push(it);
    }
}

fn check_inputs(scene: &Scene, frames: &[ObservationFrame], cfg: &OptimConfig) -> Result<[bool; 4]> {
    cfg.validate()?;
    if frames.len() != scene.frames {
        return Err(Error::validation(
            "frames",
            format!("observation has {} frames, scene simulates {}", frames.len(), scene.frames),
        ));
    }
    if let Some(last) = frames.last() {
        if last.index as usize > scene.frames {
            return Err(Error::validation(
                "frames",
                format!("observation frame {} is beyond the scene's {} frames", last.index, scene.frames),
            ));
        }
    }
    cfg.check_in_bounds(&scene.params)?;
    cfg.effective_frozen(&scene.params)
}

/// Projected AdamW on the normalized parameters using reverse-mode gradients
/// of the offline loss.
pub fn identify_offline(scene: &Scene, frames: &[ObservationFrame], cfg: &OptimConfig) -> Result<IdentifyResult> {
    identify_offline_with(scene, frames, cfg, &mut |_| {})
}

pub fn identify_offline_with(
    scene: &Scene,
    frames: &[ObservationFrame],
    cfg: &OptimConfig,
    on_iterate: &mut dyn FnMut(&Iterate),
) -> Result<IdentifyResult> {
    let frozen = check_inputs(scene, frames, cfg)?;
    let objective = OfflineObjective {
        frames,
        weights: scene.weights,
        substeps_per_frame: scene.substeps_per_frame,
    };
    let gopts = GradOptions {
        mode: cfg.mode,
        checkpoint_stride: cfg.checkpoint_stride,
        frozen,
    };
    let (loss0, mut grad) = rollout_grad(scene, &objective, &gopts)
        .map_err(|e| Error::numerical(format!("initial parameters: {e}")))?;
    if !loss0.total.is_finite() {
        return Err(Error::numerical("loss at the initial parameters is not finite"));
    }
    let mut opt = AdamW::new(cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay);
    let first = Iterate {
        iteration: 0,
        theta: scene.params,
        loss: loss0,
        step_size: cfg.lr,
    };
    on_iterate(&first);
    let mut result = IdentifyResult::new(first);
    let mut theta = scene.params;
    let mut halved = false;
    for it in 1..=cfg.max_iterations {
        let mut z = theta.to_normalized();
        let saved = opt.clone();
        opt.step(&mut z, &grad.normalized, &frozen);
        cfg.project(&mut z, &frozen);
        let candidate = theta.with_normalized(z);
        let eval = candidate
            .validate()
            .and_then(|_| rollout_grad(&scene.with_params(candidate), &objective, &gopts))
            .and_then(|(l, g)| {
                if l.total.is_finite() {
                    Ok((l, g))
                } else {
                    Err(Error::numerical("non-finite loss"))
                }
            });
        match eval {
            Ok((loss, g)) => {
                theta = candidate;
                grad = g;
                result.record(
                    Iterate {
                        iteration: it,
                        theta,
                        loss,
                        step_size: opt.lr,
                    },
                    on_iterate,
                );
            }
            Err(e) if !halved => {
                log::warn!("iteration {it}: {e}; reverting and halving the learning rate");
                opt = saved;
                opt.lr *= 0.5;
                halved = true;
            }
            Err(e) => {
                result.termination = Termination::Aborted(format!("iteration {it}: {e}"));
                break;
            }
        }
    }
    Ok(result)
}

/// CMA-ES on the free normalized parameters with forward-only rollouts.
pub fn identify_cmaes(scene: &Scene, frames: &[ObservationFrame], cfg: &OptimConfig) -> Result<IdentifyResult> {
    identify_cmaes_with(scene, frames, cfg, &mut |_| {})
}

pub fn identify_cmaes_with(
    scene: &Scene,
    frames: &[ObservationFrame],
    cfg: &OptimConfig,
    on_iterate: &mut dyn FnMut(&Iterate),
) -> Result<IdentifyResult> {
    let frozen = check_inputs(scene, frames, cfg)?;
    let objective = OfflineObjective {
        frames,
        weights: scene.weights,
        substeps_per_frame: scene.substeps_per_frame,
    };
    let free: Vec<usize> = (0..4).filter(|&i| !frozen[i]).collect();
    let z0 = scene.params.to_normalized();
    let lower: Vec<f64> = free.iter().map(|&i| cfg.bounds[i][0]).collect();
    let upper: Vec<f64> = free.iter().map(|&i| cfg.bounds[i][1]).collect();
    let mean: Vec<f64> = free.iter().map(|&i| z0[i]).collect();
    let mut es = CmaEs::new(&mean, cfg.cma_sigma, cfg.cma_population, &lower, &upper, cfg.seed)?;

    let to_theta = |x: &DVector<f64>| {
        let mut z = z0;
        for (k, &i) in free.iter().enumerate() {
            z[i] = x[k];
        }
        scene.params.with_normalized(z)
    };
    let evaluate = |theta: &MaterialParams| -> Result<LossBreakdown> {
        theta.validate()?;
        evaluate_objective(&scene.with_params(*theta), &objective, cfg.mode)
    };

    let loss0 = evaluate(&scene.params).map_err(|e| Error::numerical(format!("initial parameters: {e}")))?;
    if !loss0.total.is_finite() {
        return Err(Error::numerical("loss at the initial parameters is not finite"));
    }
    let first = Iterate {
        iteration: 0,
        theta: scene.params,
        loss: loss0,
        step_size: es.sigma,
    };
    on_iterate(&first);
    let mut result = IdentifyResult::new(first);
    for gen in 1..=cfg.cma_generations {
        let xs = es.ask();
        let thetas: Vec<MaterialParams> = xs.iter().map(to_theta).collect();
        let losses: Vec<Option<LossBreakdown>> = thetas
            .par_iter()
            .map(|t| evaluate(t).ok().filter(|l| l.total.is_finite()))
            .collect();
        if losses.iter().all(Option::is_none) {
            result.termination = Termination::Aborted(format!("generation {gen}: every candidate faulted"));
            break;
        }
        let fitness: Vec<f64> = losses.iter().map(|l| l.map_or(f64::INFINITY, |l| l.total)).collect();
        let best = (0..xs.len())
            .min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)))
            .expect("non-empty population");
        es.tell(&xs, &fitness);
        result.record(
            Iterate {
                iteration: gen,
                theta: thetas[best],
                loss: losses[best].expect("best candidate evaluated"),
                step_size: es.sigma,
            },
            on_iterate,
        );
    }
    Ok(result)
}
