use nalgebra::Vector3;

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::material::MaterialParams;
use crate::state::ParticleState;

/// Minimum distance, in cells, between any initial particle and the grid faces.
pub const PARTICLE_MARGIN_CELLS: f64 = 2.0;

/// Fraction of `dx / wave_speed` above which validation warns.
pub const CFL_NUMBER: f64 = 0.3;

/// Half-space ground `normal . x >= height`; friction comes from the material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ground {
    pub height: f64,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub dist: f64,
    pub track: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            dist: 1.0,
            track: 1.0,
            mask: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub grid: GridSpec,
    pub gravity: Vector3<f64>,
    pub dt: f64,
    pub substeps_per_frame: usize,
    /// Number of observation frames after the initial state.
    pub frames: usize,
    /// Grid velocity decay rate in 1/s, applied as `exp(-damping * dt)`.
    pub damping: f64,
    pub ground: Option<Ground>,
    pub particles: ParticleState,
    pub controllers: Vec<Controller>,
    pub params: MaterialParams,
    pub weights: LossWeights,
}

impl Scene {
    pub fn total_steps(&self) -> usize {
        self.frames * self.substeps_per_frame
    }

    /// Copy of the scene with new material parameters; masses follow density.
    pub fn with_params(&self, params: MaterialParams) -> Scene {
        let mut s = self.clone();
        s.params = params;
        s.particles.set_density(params.density);
        s
    }

    /// Largest time step satisfying the configured CFL bound.
    pub fn cfl_dt(&self) -> f64 {
        CFL_NUMBER * self.grid.dx / (self.params.youngs_modulus / self.params.density).sqrt()
    }

    /// Validates every invariant of the scene. Returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if !(self.grid.dx.is_finite() && self.grid.dx > 0.0) {
            return Err(Error::validation("grid.dx", "must be > 0"));
        }
        if self.grid.dims.iter().any(|&d| d < 2 * PARTICLE_MARGIN_CELLS as usize + 2) {
            return Err(Error::validation("grid.dims", "each dimension needs at least 6 nodes"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation("dt", "must be > 0"));
        }
        if self.substeps_per_frame == 0 {
            return Err(Error::validation("substeps_per_frame", "must be >= 1"));
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(Error::validation("damping", "must be >= 0"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::validation("gravity", "must be finite"));
        }
        if let Some(g) = &self.ground {
            if (g.normal.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::validation("ground.normal", "must be a unit vector"));
            }
        }
        self.params.validate()?;
        if self.particles.is_empty() {
            return Err(Error::validation("particles", "no particles"));
        }
        self.particles
            .check_finite()
            .map_err(|e| Error::validation("particles", e.to_string()))?;
        for (p, x) in self.particles.position.iter().enumerate() {
            if !self.grid.contains_with_margin(x, PARTICLE_MARGIN_CELLS) {
                return Err(Error::validation(
                    format!("particles[{p}]"),
                    format!("position {x:?} is within {PARTICLE_MARGIN_CELLS} cells of the grid boundary"),
                ));
            }
        }
        for (p, f) in self.particles.deformation.iter().enumerate() {
            if f.determinant() <= 0.0 {
                return Err(Error::validation(
                    format!("particles[{p}].deformation"),
                    "determinant must be > 0",
                ));
            }
        }
        for (c, ctrl) in self.controllers.iter().enumerate() {
            ctrl.validate(self.total_steps(), self.dt, &format!("controllers[{c}]"))?;
        }
        let cfl = self.cfl_dt();
        if self.dt > cfl {
            let w = format!("dt = {} exceeds the CFL bound {cfl:.3e}", self.dt);
            log::warn!("{w}");
            warnings.push(w);
        }
        Ok(warnings)
    }
}
