//! Symmetric, unsquared, mean-reduced Chamfer distance.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Point-set size at or above which nearest neighbours are found through a
/// uniform binning grid instead of brute force.
pub const BRUTE_FORCE_LIMIT: usize = 4096;

/// Average number of points per bin in the binned search.
const POINTS_PER_BIN: f64 = 2.0;

/// `(index, squared distance)` of the nearest point of `set` for each query.
pub fn nearest_neighbors(queries: &[Vector3<f64>], set: &[Vector3<f64>]) -> Vec<(usize, f64)> {
    if queries.len().max(set.len()) < BRUTE_FORCE_LIMIT {
        nearest_brute_force(queries, set)
    } else {
        BinnedSet::new(set).nearest_all(queries)
    }
}

pub fn nearest_brute_force(queries: &[Vector3<f64>], set: &[Vector3<f64>]) -> Vec<(usize, f64)> {
    queries
        .iter()
        .map(|q| {
            let mut best = (0, f64::INFINITY);
            for (i, p) in set.iter().enumerate() {
                let d2 = (q - p).norm_squared();
                if d2 < best.1 {
                    best = (i, d2);
                }
            }
            best
        })
        .collect()
}

/// Uniform grid over a point set for exact nearest-neighbour queries.
pub struct BinnedSet<'a> {
    points: &'a [Vector3<f64>],
    lo: Vector3<f64>,
    cell: f64,
    dims: [i64; 3],
    /// CSR layout: bin `b` owns `order[starts[b]..starts[b + 1]]`.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> BinnedSet<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).map(|e| e.max(1e-12));
        let volume = extent.x * extent.y * extent.z;
        let mut cell = (volume * POINTS_PER_BIN / points.len().max(1) as f64).cbrt();
        // keep the bin count bounded for flat or degenerate clouds
        let max_dim = extent.max();
        cell = cell.max(max_dim / 256.0).max(1e-12);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as i64 + 1).max(1));
        let nbins = (dims[0] * dims[1] * dims[2]) as usize;
        let mut counts = vec![0usize; nbins + 1];
        let bins: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell).floor() as i64).clamp(0, dims[a] - 1));
                ((c[0] * dims[1] + c[1]) * dims[2] + c[2]) as usize
            })
            .collect();
        for &b in &bins {
            counts[b + 1] += 1;
        }
        for b in 0..nbins {
            counts[b + 1] += counts[b];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut order = vec![0; points.len()];
        for (i, &b) in bins.iter().enumerate() {
            order[fill[b]] = i;
            fill[b] += 1;
        }
        BinnedSet {
            points,
            lo,
            cell,
            dims,
            starts,
            order,
        }
    }

    pub fn nearest_all(&self, queries: &[Vector3<f64>]) -> Vec<(usize, f64)> {
        queries.iter().map(|q| self.nearest(q)).collect()
    }

    /// Exact nearest neighbour; ties resolve to the lowest index, matching
    /// the brute-force search.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let qc = [0, 1, 2].map(|a| ((q[a] - self.lo[a]) / self.cell).floor() as i64);
        let mut best = (usize::MAX, f64::INFINITY);
        // rings needed to cover every bin from the query cell
        let max_ring = (0..3)
            .map(|a| (qc[a]).abs().max((self.dims[a] - 1 - qc[a]).abs()))
            .max()
            .unwrap_or(0);
        for r in 0..=max_ring {
            for i in (qc[0] - r).max(0)..=(qc[0] + r).min(self.dims[0] - 1) {
                for j in (qc[1] - r).max(0)..=(qc[1] + r).min(self.dims[1] - 1) {
                    for k in (qc[2] - r).max(0)..=(qc[2] + r).min(self.dims[2] - 1) {
                        let ring = (i - qc[0]).abs().max((j - qc[1]).abs()).max((k - qc[2]).abs());
                        if ring != r {
                            continue;
                        }
                        let b = ((i * self.dims[1] + j) * self.dims[2] + k) as usize;
                        for &idx in &self.order[self.starts[b]..self.starts[b + 1]] {
                            let d2 = (q - self.points[idx]).norm_squared();
                            if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                                best = (idx, d2);
                            }
                        }
                    }
                }
            }
            // bins in ring r + 1 are at least r cells away from the query
            let bound = r as f64 * self.cell;
            if best.0 != usize::MAX && best.1 < bound * bound {
                break;
            }
        }
        best
    }
}

pub fn chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    Ok(chamfer_impl(a, b, false)?.0)
}

/// Chamfer distance and its gradient with respect to the points of `a`.
pub fn chamfer_with_grad(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
    chamfer_impl(a, b, true)
}

fn chamfer_impl(a: &[Vector3<f64>], b: &[Vector3<f64>], want_grad: bool) -> Result<(f64, Vec<Vector3<f64>>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("chamfer distance of an empty point set"));
    }
    let ab = nearest_neighbors(a, b);
    let ba = nearest_neighbors(b, a);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let fwd: f64 = ab.iter().map(|(_, d2)| d2.sqrt()).sum::<f64>() / na;
    let bwd: f64 = ba.iter().map(|(_, d2)| d2.sqrt()).sum::<f64>() / nb;
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![Vector3::zeros(); a.len()];
        for (i, &(j, d2)) in ab.iter().enumerate() {
            let d = d2.sqrt();
            if d > 1e-15 {
                grad[i] += (a[i] - b[j]) / (d * na);
            }
        }
        for (j, &(i, d2)) in ba.iter().enumerate() {
            let d = d2.sqrt();
            if d > 1e-15 {
                grad[i] += (a[i] - b[j]) / (d * nb);
            }
        }
    }
    Ok((fwd + bwd, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), 0.3 * rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn reference_values() {
        let a = vec![Vector3::zeros()];
        let b = vec![Vector3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        let c = cloud(30, 1);
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
        assert!(chamfer(&[], &b).is_err());
    }

    #[test]
    fn binned_search_agrees_with_brute_force() {
        let set = cloud(5000, 2);
        let mut queries = cloud(300, 3);
        queries.push(Vector3::new(3.0, -2.0, 5.0)); // far outside the bins
        queries.extend_from_slice(&set[..50]); // exact hits
        let brute = nearest_brute_force(&queries, &set);
        let binned = BinnedSet::new(&set).nearest_all(&queries);
        assert_eq!(brute, binned);
    }

    #[test]
    fn binned_ties_pick_lowest_index() {
        let mut set = cloud(100, 4);
        set.push(set[10]);
        let q = [set[10]];
        assert_eq!(BinnedSet::new(&set).nearest(&q[0]).0, 10);
        assert_eq!(nearest_brute_force(&q, &set)[0].0, 10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = cloud(10, 5);
        let b: Vec<_> = cloud(12, 6).into_iter().map(|p| p * 1.1).collect();
        let (_, g) = chamfer_with_grad(&a, &b).unwrap();
        let h = 1e-7;
        for i in 0..a.len() {
            for ax in 0..3 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[i][ax] += h;
                am[i][ax] -= h;
                let fd = (chamfer(&ap, &b).unwrap() - chamfer(&am, &b).unwrap()) / (2.0 * h);
                assert!((fd - g[i][ax]).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} vs {}", g[i][ax]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn symmetric(seed in 0u64..1000, na in 1usize..40, nb in 1usize..40) {
            let a = cloud(na, seed);
            let b = cloud(nb, seed + 7919);
            prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        }

        #[test]
        fn rigid_invariance(seed in 0u64..1000, angle in -3.0f64..3.0, t in proptest::array::uniform3(-2.0f64..2.0)) {
            let a = cloud(20, seed);
            let b = cloud(25, seed + 1);
            let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), angle);
            let t = Vector3::from(t);
            let move_all = |s: &[Vector3<f64>]| s.iter().map(|p| rot * p + t).collect::<Vec<_>>();
            let d0 = chamfer(&a, &b).unwrap();
            let d1 = chamfer(&move_all(&a), &move_all(&b)).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-10);
        }
    }
}
