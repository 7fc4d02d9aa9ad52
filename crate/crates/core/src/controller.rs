//! Kinematic controllers (grippers, fingers) bound to grid nodes as
//! Dirichlet velocity constraints.

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerShape {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Capsule {
        a: Vector3<f64>,
        b: Vector3<f64>,
        radius: f64,
    },
}

impl ControllerShape {
    pub fn radius(&self) -> f64 {
        match *self {
            ControllerShape::Sphere { radius, .. } | ControllerShape::Capsule { radius, .. } => {
                radius
            }
        }
    }

    /// Distance from `x` to the shape's core (center point or segment) when the
    /// shape is translated by `offset`.
    pub fn core_distance(&self, x: &Vector3<f64>, offset: &Vector3<f64>) -> f64 {
        match *self {
            ControllerShape::Sphere { center, .. } => (x - (center + offset)).norm(),
            ControllerShape::Capsule { a, b, .. } => {
                let (a, b) = (a + offset, b + offset);
                let ab = b - a;
                let len2 = ab.norm_squared();
                let t = if len2 > 0.0 {
                    ((x - a).dot(&ab) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (x - (a + t * ab)).norm()
            }
        }
    }
}

/// Controller state at one substep: rigid translation from the initial pose
/// and the linear velocity applied to contacted nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSample {
    pub offset: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub shape: ControllerShape,
    /// One sample per substep.
    pub trajectory: Vec<ControllerSample>,
    /// Substep range `[start, end)` during which the controller touches the
    /// material. `None` means always.
    pub active_steps: Option<(usize, usize)>,
}

impl Controller {
    /// Integrates piecewise-constant velocities: `(steps, velocity)` segments,
    /// followed by a hold until `total_steps`.
    pub fn from_segments(
        shape: ControllerShape,
        segments: &[(usize, Vector3<f64>)],
        dt: f64,
        total_steps: usize,
    ) -> Self {
        let mut trajectory = Vec::with_capacity(total_steps);
        let mut offset = Vector3::zeros();
        let mut velocities = segments
            .iter()
            .flat_map(|&(n, v)| std::iter::repeat_n(v, n));
        for _ in 0..total_steps {
            let velocity = velocities.next().unwrap_or_else(Vector3::zeros);
            trajectory.push(ControllerSample { offset, velocity });
            offset += dt * velocity;
        }
        Controller {
            shape,
            trajectory,
            active_steps: None,
        }
    }

    pub fn sample(&self, step: usize) -> Option<&ControllerSample> {
        self.trajectory.get(step)
    }

    /// Pose reached at the start of substep `step`; past the end of the
    /// trajectory the controller rests where its last sample took it.
    pub fn pose_at(&self, step: usize, dt: f64) -> ControllerSample {
        match (self.trajectory.get(step), self.trajectory.last()) {
            (Some(s), _) => *s,
            (None, Some(last)) => ControllerSample {
                offset: last.offset + dt * last.velocity,
                velocity: Vector3::zeros(),
            },
            (None, None) => ControllerSample {
                offset: Vector3::zeros(),
                velocity: Vector3::zeros(),
            },
        }
    }

    pub fn is_active(&self, step: usize) -> bool {
        self.active_steps
            .is_none_or(|(start, end)| step >= start && step < end)
    }

    /// Node-inside-inflated-shape contact test.
    pub fn contains(&self, x: &Vector3<f64>, step: usize, inflation: f64) -> bool {
        match self.sample(step) {
            Some(s) if self.is_active(step) => {
                self.shape.core_distance(x, &s.offset) < self.shape.radius() + inflation
            }
            _ => false,
        }
    }

    /// Checks coverage of `steps` substeps and that each velocity matches the
    /// finite difference of consecutive offsets.
    pub fn validate(&self, steps: usize, dt: f64, key: &str) -> Result<()> {
        if self.shape.radius() <= 0.0 {
            return Err(Error::validation(format!("{key}.shape.radius"), "must be > 0"));
        }
        if self.trajectory.len() < steps {
            return Err(Error::validation(
                format!("{key}.trajectory"),
                format!("covers {} substeps, rollout needs {steps}", self.trajectory.len()),
            ));
        }
        for (t, pair) in self.trajectory.windows(2).enumerate() {
            let fd = (pair[1].offset - pair[0].offset) / dt;
            let v = pair[0].velocity;
            let scale = v.norm().max(fd.norm()).max(1e-9);
            if (fd - v).norm() > 1e-6 * scale {
                return Err(Error::validation(
                    format!("{key}.trajectory[{t}]"),
                    "velocity inconsistent with pose finite difference",
                ));
            }
        }
        Ok(())
    }
}
