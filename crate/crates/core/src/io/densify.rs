//! Point-cloud densification into MPM particles.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Voxelizes `points` at twice `spacing` and fills every occupied voxel with
/// eight jittered samples, one per octant. Each particle gets `spacing^3` of
/// rest volume. Output is ordered by voxel index, then octant.
pub fn densify(points: &[Vector3<f64>], spacing: f64, seed: u64) -> Result<(Vec<Vector3<f64>>, Vec<f64>)> {
    if points.is_empty() {
        return Err(Error::domain("cannot densify an empty point set"));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::domain(format!("densify spacing {spacing} must be > 0")));
    }
    if points.len() == 1 {
        log::warn!("densifying a single point produces a single voxel");
    }
    let voxels = occupied_voxels(points, 2.0 * spacing);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Vec::with_capacity(voxels.len() * 8);
    for v in &voxels {
        let base = Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64) * (2.0 * spacing);
        for octant in 0..8 {
            let o = Vector3::new((octant & 1) as f64, ((octant >> 1) & 1) as f64, ((octant >> 2) & 1) as f64);
            let jitter = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            pos.push(base + (o + jitter) * spacing);
        }
    }
    let vol = vec![spacing.powi(3); pos.len()];
    Ok((pos, vol))
}

/// Sorted integer coordinates of the voxels of edge `size` containing a point.
pub fn occupied_voxels(points: &[Vector3<f64>], size: f64) -> BTreeSet<[i64; 3]> {
    points
        .iter()
        .map(|p| {
            let c = p / size;
            [c.x.floor() as i64, c.y.floor() as i64, c.z.floor() as i64]
        })
        .collect()
}
