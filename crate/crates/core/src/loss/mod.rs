//! Discrepancy measures between simulated particles and observations, and
//! the rollout objectives built from them.

mod chamfer;
mod mask;
mod tracking;

use nalgebra::Vector3;

pub use chamfer::{
    chamfer, chamfer_with_grad, nearest_brute_force, nearest_neighbors, BinnedSet, BRUTE_FORCE_LIMIT,
};
pub use mask::{binary_silhouette, mask_loss, soft_silhouette, DEFAULT_SPLAT_RADIUS_PX};
pub use tracking::{tracking_loss, TrackingLoss};

use crate::error::Result;
use crate::observation::ObservationFrame;
use crate::scene::LossWeights;

/// Loss terms accumulated over the sampled frames of an objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// Chamfer term, m.
    pub dist: f64,
    /// Tracking term, m^2.
    pub track: f64,
    pub mask: f64,
    pub total: f64,
    /// Sampled frames whose tracked points were all invalid.
    pub zero_valid_frames: usize,
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.dist += o.dist;
        self.track += o.track;
        self.mask += o.mask;
        self.total += o.total;
        self.zero_valid_frames += o.zero_valid_frames;
    }
}

/// A scalar loss over particle positions sampled at fixed substeps of a
/// rollout.
pub trait Objective: Sync {
    /// Rollout length in substeps.
    fn steps(&self) -> usize;

    /// Ascending substep indices (relative to the rollout start) at which
    /// positions enter the loss.
    fn sample_steps(&self) -> Vec<usize>;

    /// Loss at the `sample`-th sample step and, when asked, its gradient with
    /// respect to the positions.
    fn evaluate(
        &self,
        sample: usize,
        positions: &[Vector3<f64>],
        want_grad: bool,
    ) -> Result<(LossBreakdown, Vec<Vector3<f64>>)>;
}

fn accumulate(grad: &mut [Vector3<f64>], weight: f64, g: &[Vector3<f64>]) {
    for (a, b) in grad.iter_mut().zip(g) {
        *a += weight * b;
    }
}

/// Sum over observed frames of `w_dist * chamfer + w_track * tracking`.
#[derive(Debug, Clone, Copy)]
pub struct OfflineObjective<'a> {
    pub frames: &'a [ObservationFrame],
    pub weights: LossWeights,
    pub substeps_per_frame: usize,
}

impl Objective for OfflineObjective<'_> {
    fn steps(&self) -> usize {
        self.frames
            .last()
            .map_or(0, |f| f.index as usize * self.substeps_per_frame)
    }

    fn sample_steps(&self) -> Vec<usize> {
        self.frames
            .iter()
            .map(|f| f.index as usize * self.substeps_per_frame)
            .collect()
    }

    fn evaluate(
        &self,
        sample: usize,
        positions: &[Vector3<f64>],
        want_grad: bool,
    ) -> Result<(LossBreakdown, Vec<Vector3<f64>>)> {
        let frame = &self.frames[sample];
        let w = self.weights;
        let mut out = LossBreakdown::default();
        let mut grad = if want_grad {
            vec![Vector3::zeros(); positions.len()]
        } else {
            Vec::new()
        };
        if w.dist != 0.0 && !frame.points.is_empty() {
            let (d, g) = if want_grad {
                chamfer_with_grad(positions, &frame.points)?
            } else {
                (chamfer(positions, &frame.points)?, Vec::new())
            };
            out.dist = d;
            accumulate(&mut grad, w.dist, &g);
        }
        if w.track != 0.0 {
            let (t, g) = tracking_loss(positions, &frame.tracked)?;
            out.track = t.value;
            out.zero_valid_frames = usize::from(t.no_valid_points());
            if want_grad {
                accumulate(&mut grad, w.track, &g);
            }
        }
        out.total = w.dist * out.dist + w.track * out.track;
        Ok((out, grad))
    }
}

/// `w_dist * chamfer + w_mask * mask` after a short horizon, against one
/// observed frame.
#[derive(Debug, Clone, Copy)]
pub struct OnlineObjective<'a> {
    pub target: &'a ObservationFrame,
    pub horizon: usize,
    pub weights: LossWeights,
    pub splat_radius_px: f64,
}

impl OnlineObjective<'_> {
    /// Online loss terms at arbitrary positions; used for per-frame records.
    pub fn terms(&self, positions: &[Vector3<f64>], want_grad: bool) -> Result<(LossBreakdown, Vec<Vector3<f64>>)> {
        let w = self.weights;
        let mut out = LossBreakdown::default();
        let mut grad = if want_grad {
            vec![Vector3::zeros(); positions.len()]
        } else {
            Vec::new()
        };
        if !self.target.points.is_empty() {
            let (d, g) = if want_grad {
                chamfer_with_grad(positions, &self.target.points)?
            } else {
                (chamfer(positions, &self.target.points)?, Vec::new())
            };
            out.dist = d;
            accumulate(&mut grad, w.dist, &g);
        }
        if !self.target.masks.is_empty() {
            let (m, g) = mask_loss(positions, &self.target.masks, self.splat_radius_px)?;
            out.mask = m;
            if want_grad {
                accumulate(&mut grad, w.mask, &g);
            }
        }
        out.total = w.dist * out.dist + w.mask * out.mask;
        Ok((out, grad))
    }
}

impl Objective for OnlineObjective<'_> {
    fn steps(&self) -> usize {
        self.horizon
    }

    fn sample_steps(&self) -> Vec<usize> {
        vec![self.horizon]
    }

    fn evaluate(
        &self,
        _sample: usize,
        positions: &[Vector3<f64>],
        want_grad: bool,
    ) -> Result<(LossBreakdown, Vec<Vector3<f64>>)> {
        self.terms(positions, want_grad)
    }
}
