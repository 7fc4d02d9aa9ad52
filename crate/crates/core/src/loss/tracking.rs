use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::observation::TrackedPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingLoss {
    /// Mean squared distance over valid correspondences, m^2.
    pub value: f64,
    pub valid: usize,
}

impl TrackingLoss {
    pub fn no_valid_points(&self) -> bool {
        self.valid == 0
    }
}

/// Mean squared distance between predicted particles and valid tracked
/// observations. Returns the gradient with respect to `predicted`.
pub fn tracking_loss(predicted: &[Vector3<f64>], observed: &[TrackedPoint]) -> Result<(TrackingLoss, Vec<Vector3<f64>>)> {
    let mut grad = vec![Vector3::zeros(); predicted.len()];
    let valid: Vec<&TrackedPoint> = observed.iter().filter(|t| t.valid).collect();
    if valid.is_empty() {
        return Ok((TrackingLoss { value: 0.0, valid: 0 }, grad));
    }
    let n = valid.len() as f64;
    let mut value = 0.0;
    for t in valid.iter() {
        let p = predicted.get(t.id as usize).ok_or_else(|| {
            Error::domain(format!("tracked id {} has no simulated particle", t.id))
        })?;
        let d = p - t.position;
        value += d.norm_squared();
        grad[t.id as usize] += 2.0 * d / n;
    }
    Ok((
        TrackingLoss {
            value: value / n,
            valid: valid.len(),
        },
        grad,
    ))
}
