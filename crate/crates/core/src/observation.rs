//! Observation data lifted to 3D: point clouds, tracked points and
//! per-camera silhouette masks.

use nalgebra::{Matrix2x3, Matrix3x4, Vector2, Vector3};

use crate::controller::ControllerSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedPoint {
    /// Particle index in the simulated state.
    pub id: u64,
    pub position: Vector3<f64>,
    pub valid: bool,
}

/// Pinhole camera with world-to-camera extrinsic `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsic: Matrix3x4<f64>,
}

impl PinholeCamera {
    /// Pixel coordinates of `x` and their Jacobian, or `None` behind the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<(Vector2<f64>, Matrix2x3<f64>)> {
        let r = self.extrinsic.fixed_view::<3, 3>(0, 0);
        let t = self.extrinsic.column(3);
        let c = r * x + t;
        if c.z <= 1e-9 {
            return None;
        }
        let iz = 1.0 / c.z;
        let uv = Vector2::new(self.fx * c.x * iz + self.cx, self.fy * c.y * iz + self.cy);
        let dproj = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * c.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * c.y * iz * iz,
        );
        Some((uv, dproj * r))
    }

    pub fn in_frame(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x < self.width as f64 && uv.y < self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Binary silhouette, row-major, one byte (0 or 1) per pixel in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMask {
    pub camera: PinholeCamera,
    pub pixels: Vec<u8>,
}

impl CameraMask {
    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.camera.pixel_count() {
            return Err(Error::Format(format!(
                "mask has {} pixels, camera expects {}x{}",
                self.pixels.len(),
                self.camera.width,
                self.camera.height
            )));
        }
        if self.pixels.iter().any(|&b| b > 1) {
            return Err(Error::Format("mask pixels must be 0 or 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationFrame {
    pub index: u64,
    pub points: Vec<Vector3<f64>>,
    pub tracked: Vec<TrackedPoint>,
    pub masks: Vec<CameraMask>,
    /// Controller poses at the observation time, in scene order.
    pub controllers: Vec<ControllerSample>,
}

impl ObservationFrame {
    pub fn valid_tracked(&self) -> impl Iterator<Item = &TrackedPoint> {
        self.tracked.iter().filter(|t| t.valid)
    }
}

/// Checks frame ordering and per-frame consistency of a whole sequence.
pub fn validate_sequence(frames: &[ObservationFrame]) -> Result<()> {
    for pair in frames.windows(2) {
        if pair[1].index <= pair[0].index {
            return Err(Error::Format(format!(
                "frame indices must strictly increase ({} then {})",
                pair[0].index, pair[1].index
            )));
        }
    }
    for f in frames {
        for m in &f.masks {
            m.validate()?;
        }
    }
    // tracked ids must be the same set in every frame
    if let Some(first) = frames.first() {
        let ids: Vec<u64> = first.tracked.iter().map(|t| t.id).collect();
        for f in frames {
            if f.tracked.len() != ids.len() || f.tracked.iter().zip(&ids).any(|(t, id)| t.id != *id) {
                return Err(Error::Format(format!(
                    "tracked ids in frame {} differ from the first frame",
                    f.index
                )));
            }
        }
    }
    Ok(())
}
