use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Per-particle simulation state stored as parallel arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub position: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
    /// Elastic deformation gradient. The plastic part is never stored.
    pub deformation: Vec<Matrix3<f64>>,
    /// APIC affine velocity matrix.
    pub affine: Vec<Matrix3<f64>>,
    pub mass: Vec<f64>,
    pub rest_volume: Vec<f64>,
}

impl ParticleState {
    /// Particles at rest with identity deformation and `mass = density * volume`.
    pub fn at_rest(positions: Vec<Vector3<f64>>, rest_volume: Vec<f64>, density: f64) -> Self {
        assert_eq!(positions.len(), rest_volume.len());
        let n = positions.len();
        ParticleState {
            mass: rest_volume.iter().map(|v| density * v).collect(),
            position: positions,
            velocity: vec![Vector3::zeros(); n],
            deformation: vec![Matrix3::identity(); n],
            affine: vec![Matrix3::zeros(); n],
            rest_volume,
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.mass
            .iter()
            .zip(&self.velocity)
            .fold(Vector3::zeros(), |acc, (m, v)| acc + *m * v)
    }

    pub fn mean_speed(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.velocity.iter().map(|v| v.norm()).sum::<f64>() / self.len() as f64
    }

    /// Resets masses to `density * rest_volume`.
    pub fn set_density(&mut self, density: f64) {
        for (m, v) in self.mass.iter_mut().zip(&self.rest_volume) {
            *m = density * v;
        }
    }

    /// Checks every field for NaN/inf and every deformation for a positive determinant.
    pub fn check_finite(&self) -> Result<()> {
        for p in 0..self.len() {
            let ok = self.position[p].iter().all(|x| x.is_finite())
                && self.velocity[p].iter().all(|x| x.is_finite())
                && self.deformation[p].iter().all(|x| x.is_finite())
                && self.affine[p].iter().all(|x| x.is_finite())
                && self.mass[p].is_finite()
                && self.rest_volume[p].is_finite();
            if !ok {
                return Err(Error::Numerical {
                    step: None,
                    particle: Some(p),
                    msg: "non-finite particle field".into(),
                });
            }
        }
        Ok(())
    }
}
/// Cell-centred lattice filling the box `[min, max]` with spacing `h`.
/// Returns positions and per-particle volumes `h^3`.
pub fn box_lattice(min: &Vector3<f64>, max: &Vector3<f64>, h: f64) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let counts = [0, 1, 2].map(|a| (((max[a] - min[a]) / h).round() as usize).max(1));
    let mut pos = Vec::with_capacity(counts[0] * counts[1] * counts[2]);
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                pos.push(min + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h);
            }
        }
    }
    let vol = vec![h * h * h; pos.len()];
    (pos, vol)
}

