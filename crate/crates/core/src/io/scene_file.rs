//! JSON scene documents. Every block rejects unknown keys; all units are SI.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use super::densify::densify;
use super::points::read_points;
use crate::controller::{Controller, ControllerSample, ControllerShape};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::identify::{normalized_bounds, OnlineConfig, OptimConfig, DEFAULT_BOUNDS};
use crate::loss::DEFAULT_SPLAT_RADIUS_PX;
use crate::material::{MaterialParams, PARAM_NAMES};
use crate::observation::PinholeCamera;
use crate::scene::{Ground, LossWeights, Scene};
use crate::state::{box_lattice, ParticleState};

type V3 = [f64; 3];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub grid: GridBlock,
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub substeps_per_frame: usize,
    pub frames: usize,
    #[serde(default = "default_gravity")]
    pub gravity: V3,
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub ground: Option<GroundBlock>,
    pub material: MaterialBlock,
    pub particles: ParticlesBlock,
    #[serde(default)]
    pub controllers: Vec<ControllerBlock>,
    #[serde(default)]
    pub loss_weights: Option<WeightsBlock>,
    #[serde(default)]
    pub observation: Option<ObservationBlock>,
    #[serde(default)]
    pub optimizer: Option<OptimizerBlock>,
    #[serde(default)]
    pub online: Option<OnlineBlock>,
    #[serde(default)]
    pub synth: Option<SynthBlock>,
}

fn default_substeps() -> usize {
    20
}

fn default_gravity() -> V3 {
    [0.0, 0.0, -9.8]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default)]
    pub origin: V3,
    pub dx: f64,
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundBlock {
    pub height: f64,
    #[serde(default = "default_normal")]
    pub normal: V3,
    #[serde(default)]
    pub friction_mu: f64,
}

fn default_normal() -> V3 {
    [0.0, 0.0, 1.0]
}

/// A number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum YieldValue {
    Finite(f64),
    Named(Infinity),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Infinity {
    #[serde(rename = "inf")]
    Inf,
}

impl YieldValue {
    pub fn value(&self) -> f64 {
        match self {
            YieldValue::Finite(v) => *v,
            YieldValue::Named(Infinity::Inf) => f64::INFINITY,
        }
    }

    pub fn from_value(v: f64) -> Self {
        if v.is_infinite() {
            YieldValue::Named(Infinity::Inf)
        } else {
            YieldValue::Finite(v)
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsBlock {
    #[serde(rename = "E", default)]
    pub e: Option<[f64; 2]>,
    #[serde(default)]
    pub nu: Option<[f64; 2]>,
    #[serde(default)]
    pub rho: Option<[f64; 2]>,
    #[serde(default)]
    pub y: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamName {
    E,
    #[serde(rename = "nu")]
    Nu,
    #[serde(rename = "rho")]
    Rho,
    #[serde(rename = "y")]
    Y,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialBlock {
    #[serde(rename = "E")]
    pub e: f64,
    pub nu: f64,
    pub rho: f64,
    #[serde(default = "default_yield")]
    pub y: YieldValue,
    #[serde(default)]
    pub bounds: BoundsBlock,
    /// Parameters held fixed during identification. Defaults to `rho`, `y`.
    #[serde(default)]
    pub frozen: Option<Vec<ParamName>>,
}

fn default_yield() -> YieldValue {
    YieldValue::Named(Infinity::Inf)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesBlock {
    pub source: ParticleSource,
    /// Initial elastic deformation gradient, row-major, applied to every particle.
    #[serde(default)]
    pub initial_deformation: Option<[[f64; 3]; 3]>,
    #[serde(default)]
    pub initial_velocity: Option<V3>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ParticleSource {
    /// Cell-centred lattice with the given spacing.
    Box { min: V3, max: V3, spacing: f64 },
    /// Whitespace-separated `x y z` lines.
    File {
        path: PathBuf,
        /// Densify to this spacing (voxels of twice the spacing, 8 samples each).
        #[serde(default)]
        densify_spacing: Option<f64>,
        /// Use the points directly with this rest volume each.
        #[serde(default)]
        particle_volume: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerBlock {
    pub shape: ShapeBlock,
    pub motion: MotionBlock,
    #[serde(default)]
    pub active_steps: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeBlock {
    Sphere { center: V3, radius: f64 },
    Capsule { a: V3, b: V3, radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionBlock {
    /// Piecewise-constant velocities, then hold.
    Segments(Vec<SegmentBlock>),
    /// One `ox oy oz` offset line per substep; velocities are differences.
    TrajectoryFile(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentBlock {
    pub steps: usize,
    pub velocity: V3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsBlock {
    #[serde(default = "one")]
    pub dist: f64,
    #[serde(default = "one")]
    pub track: f64,
    #[serde(default = "one")]
    pub mask: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraBlock {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera `[R | t]`, three rows of four.
    pub extrinsic: [[f64; 4]; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationBlock {
    #[serde(default)]
    pub cameras: Vec<CameraBlock>,
    #[serde(default = "default_splat")]
    pub splat_radius_px: f64,
}

fn default_splat() -> f64 {
    DEFAULT_SPLAT_RADIUS_PX
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    pub lr: Option<f64>,
    pub betas: Option<[f64; 2]>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub max_iterations: Option<usize>,
    pub cma_population: Option<usize>,
    pub cma_sigma: Option<f64>,
    pub cma_generations: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoint_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineBlock {
    pub enabled: Option<bool>,
    pub optimize_every: Option<usize>,
    pub horizon: Option<usize>,
    pub quasi_static_speed: Option<f64>,
    pub lr: Option<f64>,
    pub dist_weight: Option<f64>,
    pub mask_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBlock {
    pub noise_std: Option<f64>,
    pub subsample: Option<f64>,
    pub track_fraction: Option<f64>,
    #[serde(default)]
    pub occlusion: Option<OcclusionBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OcclusionBlock {
    /// Every point is hidden at these frames.
    Frames(Vec<u64>),
    /// Points with `normal . x < offset + speed * frame` are hidden.
    Sweep { normal: V3, offset: f64, speed: f64 },
}

/// Synthetic observation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub noise_std: f64,
    pub subsample: f64,
    pub track_fraction: f64,
    pub occlusion: Occlusion,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            noise_std: 0.0,
            subsample: 1.0,
            track_fraction: 0.2,
            occlusion: Occlusion::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Occlusion {
    None,
    Frames(Vec<u64>),
    Sweep {
        normal: Vector3<f64>,
        offset: f64,
        speed: f64,
    },
}

/// A scene document resolved into simulation inputs and configuration.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub scene: Scene,
    pub optim: OptimConfig,
    pub online: OnlineConfig,
    pub cameras: Vec<PinholeCamera>,
    pub splat_radius_px: f64,
    pub synth: SynthConfig,
    /// Non-fatal findings from validation.
    pub warnings: Vec<String>,
}

fn v3(a: V3) -> Vector3<f64> {
    Vector3::from(a)
}

/// Parses a scene document. Relative paths resolve against `base_dir`.
pub fn parse_scene(text: &str, base_dir: &Path) -> Result<LoadedScene> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: SceneFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let key = if path.is_empty() || path == "." { "<root>".to_string() } else { path };
        Error::validation(key, inner.to_string())
    })?;
    file.resolve(base_dir)
}

pub fn load_scene(path: &Path) -> Result<LoadedScene> {
    let text = std::fs::read_to_string(path)?;
    parse_scene(&text, path.parent().unwrap_or(Path::new(".")))
}

fn positive(v: f64, key: &str) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::validation(key, format!("must be finite and > 0, got {v}")))
    }
}

impl SceneFile {
    pub fn resolve(&self, base_dir: &Path) -> Result<LoadedScene> {
        let m = &self.material;
        let params = MaterialParams {
            youngs_modulus: m.e,
            poissons_ratio: m.nu,
            density: m.rho,
            yield_stress: m.y.value(),
            friction_mu: self.ground.as_ref().map_or(0.0, |g| g.friction_mu),
        };
        params.validate()?;
        let grid = GridSpec {
            origin: v3(self.grid.origin),
            dx: self.grid.dx,
            dims: self.grid.dims,
        };
        let total_steps = self.frames * self.substeps_per_frame;
        positive(self.dt, "dt")?;
        let particles = self.build_particles(&params, base_dir)?;
        let controllers = self
            .controllers
            .iter()
            .enumerate()
            .map(|(i, c)| c.build(self.dt, total_steps, base_dir, i))
            .collect::<Result<Vec<_>>>()?;
        let weights = self.loss_weights.as_ref().map_or_else(LossWeights::default, |w| LossWeights {
            dist: w.dist,
            track: w.track,
            mask: w.mask,
        });
        for (k, v) in [("dist", weights.dist), ("track", weights.track), ("mask", weights.mask)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("loss_weights.{k}"), "must be >= 0"));
            }
        }
        let scene = Scene {
            grid,
            gravity: v3(self.gravity),
            dt: self.dt,
            substeps_per_frame: self.substeps_per_frame,
            frames: self.frames,
            damping: self.damping,
            ground: self.ground.as_ref().map(|g| Ground {
                height: g.height,
                normal: v3(g.normal),
            }),
            particles,
            controllers,
            params,
            weights,
        };
        let warnings = scene.validate()?;

        let optim = self.optim_config()?;
        let online = self.online_config(weights)?;
        let (cameras, splat_radius_px) = match &self.observation {
            Some(o) => (
                o.cameras
                    .iter()
                    .map(|c| PinholeCamera {
                        width: c.width,
                        height: c.height,
                        fx: c.fx,
                        fy: c.fy,
                        cx: c.cx,
                        cy: c.cy,
                        extrinsic: Matrix3x4::from_fn(|r, col| c.extrinsic[r][col]),
                    })
                    .collect(),
                positive(o.splat_radius_px, "observation.splat_radius_px")?,
            ),
            None => (Vec::new(), DEFAULT_SPLAT_RADIUS_PX),
        };
        let mut online = online;
        online.splat_radius_px = splat_radius_px;
        Ok(LoadedScene {
            scene,
            optim,
            online,
            cameras,
            splat_radius_px,
            synth: self.synth_config()?,
            warnings,
        })
    }

    fn build_particles(&self, params: &MaterialParams, base_dir: &Path) -> Result<ParticleState> {
        let (pos, vol) = match &self.particles.source {
            ParticleSource::Box { min, max, spacing } => {
                let h = positive(*spacing, "particles.source.box.spacing")?;
                if (0..3).any(|a| max[a] <= min[a]) {
                    return Err(Error::validation("particles.source.box", "max must exceed min on every axis"));
                }
                box_lattice(&v3(*min), &v3(*max), h)
            }
            ParticleSource::File {
                path,
                densify_spacing,
                particle_volume,
                seed,
            } => {
                let pts = read_points(&base_dir.join(path))
                    .map_err(|e| Error::validation("particles.source.file.path", e.to_string()))?;
                match (densify_spacing, particle_volume) {
                    (Some(h), None) => densify(&pts, positive(*h, "particles.source.file.densify_spacing")?, *seed)?,
                    (None, Some(v)) => {
                        let v = positive(*v, "particles.source.file.particle_volume")?;
                        let n = pts.len();
                        (pts, vec![v; n])
                    }
                    _ => {
                        return Err(Error::validation(
                            "particles.source.file",
                            "give exactly one of densify_spacing or particle_volume",
                        ))
                    }
                }
            }
        };
        let mut state = ParticleState::at_rest(pos, vol, params.density);
        if let Some(f) = self.particles.initial_deformation {
            let f = Matrix3::from_fn(|r, c| f[r][c]);
            state.deformation.iter_mut().for_each(|d| *d = f);
        }
        if let Some(v) = self.particles.initial_velocity {
            state.velocity.iter_mut().for_each(|x| *x = v3(v));
        }
        Ok(state)
    }

    fn optim_config(&self) -> Result<OptimConfig> {
        let mut cfg = OptimConfig::default();
        let b = &self.material.bounds;
        let mut physical = DEFAULT_BOUNDS;
        for (i, o) in [b.e, b.nu, b.rho, b.y].into_iter().enumerate() {
            if let Some(o) = o {
                physical[i] = o;
            }
        }
        cfg.bounds = normalized_bounds(physical);
        if let Some(frozen) = &self.material.frozen {
            cfg.frozen = [false; 4];
            for p in frozen {
                cfg.frozen[*p as usize] = true;
            }
        }
        if let Some(o) = &self.optimizer {
            cfg.lr = o.lr.unwrap_or(cfg.lr);
            cfg.betas = o.betas.map_or(cfg.betas, |b| (b[0], b[1]));
            cfg.eps = o.eps.unwrap_or(cfg.eps);
            cfg.weight_decay = o.weight_decay.unwrap_or(cfg.weight_decay);
            cfg.max_iterations = o.max_iterations.unwrap_or(cfg.max_iterations);
            cfg.cma_population = o.cma_population.unwrap_or(cfg.cma_population);
            cfg.cma_sigma = o.cma_sigma.unwrap_or(cfg.cma_sigma);
            cfg.cma_generations = o.cma_generations.unwrap_or(cfg.cma_generations);
            cfg.seed = o.seed.unwrap_or(cfg.seed);
            cfg.checkpoint_stride = o.checkpoint_stride.unwrap_or(cfg.checkpoint_stride);
        }
        cfg.validate()?;
        let theta = MaterialParams {
            youngs_modulus: self.material.e,
            poissons_ratio: self.material.nu,
            density: self.material.rho,
            yield_stress: self.material.y.value(),
            friction_mu: 0.0,
        };
        cfg.effective_frozen(&theta)?;
        cfg.check_in_bounds(&theta)?;
        Ok(cfg)
    }

    fn online_config(&self, weights: LossWeights) -> Result<OnlineConfig> {
        let mut cfg = OnlineConfig {
            weights,
            ..Default::default()
        };
        if let Some(o) = &self.online {
            cfg.enabled = o.enabled.unwrap_or(cfg.enabled);
            cfg.optimize_every = o.optimize_every.unwrap_or(cfg.optimize_every);
            cfg.horizon = o.horizon.unwrap_or(cfg.horizon);
            cfg.quasi_static_speed = o.quasi_static_speed.unwrap_or(cfg.quasi_static_speed);
            cfg.lr = o.lr.or(cfg.lr);
            cfg.weights.dist = o.dist_weight.unwrap_or(cfg.weights.dist);
            cfg.weights.mask = o.mask_weight.unwrap_or(cfg.weights.mask);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn synth_config(&self) -> Result<SynthConfig> {
        let mut cfg = SynthConfig::default();
        if let Some(s) = &self.synth {
            cfg.noise_std = s.noise_std.unwrap_or(cfg.noise_std);
            cfg.subsample = s.subsample.unwrap_or(cfg.subsample);
            cfg.track_fraction = s.track_fraction.unwrap_or(cfg.track_fraction);
            cfg.occlusion = match &s.occlusion {
                None => Occlusion::None,
                Some(OcclusionBlock::Frames(f)) => Occlusion::Frames(f.clone()),
                Some(OcclusionBlock::Sweep { normal, offset, speed }) => {
                    let n = v3(*normal);
                    if !(n.norm() > 0.0) {
                        return Err(Error::validation("synth.occlusion.sweep.normal", "must be non-zero"));
                    }
                    Occlusion::Sweep {
                        normal: n.normalize(),
                        offset: *offset,
                        speed: *speed,
                    }
                }
            };
        }
        if !(cfg.noise_std.is_finite() && cfg.noise_std >= 0.0) {
            return Err(Error::validation("synth.noise_std", "must be >= 0"));
        }
        if !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) {
            return Err(Error::validation("synth.subsample", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&cfg.track_fraction) {
            return Err(Error::validation("synth.track_fraction", "must lie in [0, 1]"));
        }
        Ok(cfg)
    }
}

impl ControllerBlock {
    fn build(&self, dt: f64, total_steps: usize, base_dir: &Path, index: usize) -> Result<Controller> {
        let key = format!("controllers[{index}]");
        let shape = match &self.shape {
            ShapeBlock::Sphere { center, radius } => ControllerShape::Sphere {
                center: v3(*center),
                radius: positive(*radius, &format!("{key}.shape.sphere.radius"))?,
            },
            ShapeBlock::Capsule { a, b, radius } => ControllerShape::Capsule {
                a: v3(*a),
                b: v3(*b),
                radius: positive(*radius, &format!("{key}.shape.capsule.radius"))?,
            },
        };
        let mut ctrl = match &self.motion {
            MotionBlock::Segments(segs) => {
                let segs: Vec<(usize, Vector3<f64>)> = segs.iter().map(|s| (s.steps, v3(s.velocity))).collect();
                Controller::from_segments(shape, &segs, dt, total_steps)
            }
            MotionBlock::TrajectoryFile(path) => {
                let offsets = read_points(&base_dir.join(path))
                    .map_err(|e| Error::validation(format!("{key}.motion.trajectory_file"), e.to_string()))?;
                if offsets.len() < total_steps + 1 {
                    return Err(Error::validation(
                        format!("{key}.motion.trajectory_file"),
                        format!("{} poses, need {} (one per substep plus the last)", offsets.len(), total_steps + 1),
                    ));
                }
                let trajectory = offsets
                    .windows(2)
                    .map(|w| ControllerSample {
                        offset: w[0],
                        velocity: (w[1] - w[0]) / dt,
                    })
                    .collect();
                Controller {
                    shape,
                    trajectory,
                    active_steps: None,
                }
            }
        };
        if let Some([a, b]) = self.active_steps {
            if a > b {
                return Err(Error::validation(format!("{key}.active_steps"), "start must not exceed end"));
            }
            ctrl.active_steps = Some((a, b));
        }
        Ok(ctrl)
    }
}

/// Name of parameter `i` as written in scene files.
pub fn param_key(i: usize) -> &'static str {
    PARAM_NAMES[i]
}
