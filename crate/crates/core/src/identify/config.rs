use crate::error::{Error, Result};
use crate::kernel::ExecMode;
use crate::loss::DEFAULT_SPLAT_RADIUS_PX;
use crate::material::{MaterialParams, NORMALIZATION, PARAM_NAMES};
use crate::scene::LossWeights;

/// Default physical box bounds for (E, nu, rho, y).
pub const DEFAULT_BOUNDS: [[f64; 2]; 4] = [[1e3, 1e8], [0.01, 0.49], [100.0, 5000.0], [1e2, 1e7]];

/// Optimizer settings shared by the offline and online identification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub max_iterations: usize,
    /// Box bounds in normalized units, `[lower, upper]` per parameter.
    pub bounds: [[f64; 2]; 4],
    pub frozen: [bool; 4],
    pub cma_population: usize,
    /// Initial CMA-ES step size in normalized units.
    pub cma_sigma: f64,
    pub cma_generations: usize,
    pub seed: u64,
    pub checkpoint_stride: usize,
    pub mode: ExecMode,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
            max_iterations: 300,
            bounds: normalized_bounds(DEFAULT_BOUNDS),
            // the two-parameter setup: E and nu free
            frozen: [false, false, true, true],
            cma_population: 8,
            cma_sigma: 0.1,
            cma_generations: 50,
            seed: 0,
            checkpoint_stride: 1,
            mode: ExecMode::Parallel,
        }
    }
}

/// Physical bounds divided by the normalization constants.
pub fn normalized_bounds(physical: [[f64; 2]; 4]) -> [[f64; 2]; 4] {
    let mut b = physical;
    for (bi, s) in b.iter_mut().zip(NORMALIZATION) {
        bi[0] /= s;
        bi[1] /= s;
    }
    b
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation("optimizer.lr", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return Err(Error::validation("optimizer.betas", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation("optimizer.eps", "must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("optimizer.weight_decay", "must be >= 0"));
        }
        for (i, b) in self.bounds.iter().enumerate() {
            if !(b[0] < b[1]) {
                return Err(Error::validation(
                    format!("material.bounds.{}", PARAM_NAMES[i]),
                    "lower bound must be below upper bound",
                ));
            }
        }
        if self.cma_population < 2 {
            return Err(Error::validation("optimizer.cma_population", "must be >= 2"));
        }
        if !(self.cma_sigma.is_finite() && self.cma_sigma > 0.0) {
            return Err(Error::validation("optimizer.cma_sigma", "must be > 0"));
        }
        if self.checkpoint_stride == 0 {
            return Err(Error::validation("optimizer.checkpoint_stride", "must be >= 1"));
        }
        Ok(())
    }

    /// Frozen flags with `y` forced frozen when it is infinite. Errors if an
    /// infinite `y` is requested to be optimized.
    pub fn effective_frozen(&self, theta: &MaterialParams) -> Result<[bool; 4]> {
        let mut frozen = self.frozen;
        if !theta.yield_stress.is_finite() {
            if !frozen[3] {
                return Err(Error::validation(
                    "material.frozen",
                    "y is infinite and cannot be identified; freeze it or give a finite initial value",
                ));
            }
            frozen[3] = true;
        }
        Ok(frozen)
    }

    /// Checks that the free components of `theta` lie inside the box.
    pub fn check_in_bounds(&self, theta: &MaterialParams) -> Result<()> {
        let z = theta.to_normalized();
        for i in 0..4 {
            if self.frozen[i] || !z[i].is_finite() {
                continue;
            }
            let [lo, hi] = self.bounds[i];
            if z[i] < lo || z[i] > hi {
                return Err(Error::validation(
                    format!("material.{}", PARAM_NAMES[i]),
                    format!(
                        "initial value {} is outside the bounds [{}, {}]",
                        z[i] * NORMALIZATION[i],
                        lo * NORMALIZATION[i],
                        hi * NORMALIZATION[i]
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Clamps the free components of `z` into the box.
    pub fn project(&self, z: &mut [f64; 4], frozen: &[bool; 4]) {
        for i in 0..4 {
            if !frozen[i] {
                z[i] = z[i].clamp(self.bounds[i][0], self.bounds[i][1]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    /// Run corrections at all; `false` gives the ablation baseline.
    pub enabled: bool,
    /// Frames between correction attempts.
    pub optimize_every: usize,
    /// Substeps simulated for each correction.
    pub horizon: usize,
    /// Mean particle speed below which the object counts as quasi-static, m/s.
    pub quasi_static_speed: f64,
    pub weights: LossWeights,
    pub splat_radius_px: f64,
    /// Learning rate override for online corrections.
    pub lr: Option<f64>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            enabled: true,
            optimize_every: 5,
            horizon: 10,
            quasi_static_speed: 0.01,
            weights: LossWeights::default(),
            splat_radius_px: DEFAULT_SPLAT_RADIUS_PX,
            lr: None,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.optimize_every == 0 {
            return Err(Error::validation("online.optimize_every", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::validation("online.horizon", "must be >= 1"));
        }
        if !(self.quasi_static_speed > 0.0) {
            return Err(Error::validation("online.quasi_static_speed", "must be > 0"));
        }
        if !(self.splat_radius_px > 0.0) {
            return Err(Error::validation("observation.splat_radius_px", "must be > 0"));
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::validation("online.lr", "must be > 0"));
            }
        }
        Ok(())
    }
}
