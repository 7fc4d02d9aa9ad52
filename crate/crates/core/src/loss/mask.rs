//! Soft silhouette rendering with Gaussian splats and the mask MSE loss.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::observation::{CameraMask, PinholeCamera};

pub const DEFAULT_SPLAT_RADIUS_PX: f64 = 2.0;

struct Projected {
    /// Index into the particle array.
    particle: usize,
    uv: Vector2<f64>,
    jacobian: Matrix2x3<f64>,
}

fn project_all(positions: &[Vector3<f64>], camera: &PinholeCamera) -> (Vec<Projected>, bool) {
    let mut any_in_frame = false;
    let projected = positions
        .iter()
        .enumerate()
        .filter_map(|(particle, x)| {
            camera.project(x).map(|(uv, jacobian)| {
                any_in_frame |= camera.in_frame(&uv);
                Projected { particle, uv, jacobian }
            })
        })
        .collect();
    (projected, any_in_frame)
}

#[inline]
fn pixel_center(col: usize, row: usize) -> Vector2<f64> {
    Vector2::new(col as f64 + 0.5, row as f64 + 0.5)
}

/// `S(q) = 1 - prod_p (1 - exp(-|q - u_p|^2 / (2 r^2)))`, row-major.
pub fn soft_silhouette(positions: &[Vector3<f64>], camera: &PinholeCamera, radius_px: f64) -> Vec<f64> {
    let (proj, _) = project_all(positions, camera);
    let inv = 1.0 / (2.0 * radius_px * radius_px);
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut s = vec![0.0; w * h];
    s.par_chunks_mut(w.max(1)).enumerate().for_each(|(row, out)| {
        for (col, px) in out.iter_mut().enumerate() {
            let q = pixel_center(col, row);
            let keep: f64 = proj.iter().map(|p| 1.0 - (-(q - p.uv).norm_squared() * inv).exp()).product();
            *px = 1.0 - keep;
        }
    });
    s
}

/// Binary mask from thresholding the soft silhouette at 0.5.
pub fn binary_silhouette(positions: &[Vector3<f64>], camera: &PinholeCamera, radius_px: f64) -> Vec<u8> {
    soft_silhouette(positions, camera, radius_px)
        .into_iter()
        .map(|s| u8::from(s >= 0.5))
        .collect()
}

/// Mean over cameras of the per-pixel squared error between the soft
/// silhouette and the binary mask, with its gradient w.r.t. `positions`.
pub fn mask_loss(positions: &[Vector3<f64>], masks: &[CameraMask], radius_px: f64) -> Result<(f64, Vec<Vector3<f64>>)> {
    if masks.is_empty() {
        return Err(Error::domain("mask loss needs at least one camera mask"));
    }
    if !(radius_px > 0.0) {
        return Err(Error::domain("splat radius must be positive"));
    }
    let mut total = 0.0;
    let mut grad = vec![Vector3::zeros(); positions.len()];
    let mut any_in_frame = false;
    let ncam = masks.len() as f64;
    for mask in masks {
        mask.validate()?;
        let cam = &mask.camera;
        let (proj, in_frame) = project_all(positions, cam);
        any_in_frame |= in_frame;
        let (loss, duv) = camera_loss(&proj, mask, radius_px);
        total += loss / ncam;
        for (p, g) in proj.iter().zip(&duv) {
            grad[p.particle] += p.jacobian.transpose() * g / ncam;
        }
    }
    if !any_in_frame {
        return Err(Error::domain("no particle projects inside any camera frame"));
    }
    Ok((total, grad))
}

/// Loss for one camera and its gradient w.r.t. each projected pixel position.
fn camera_loss(proj: &[Projected], mask: &CameraMask, radius_px: f64) -> (f64, Vec<Vector2<f64>>) {
    let cam = &mask.camera;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let npix = (w * h) as f64;
    let r2 = radius_px * radius_px;
    let inv = 1.0 / (2.0 * r2);
    let n = proj.len();
    let rows: Vec<(f64, Vec<Vector2<f64>>)> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut loss = 0.0;
            let mut duv = vec![Vector2::zeros(); n];
            let mut g = vec![0.0; n];
            let mut suffix = vec![1.0; n + 1];
            for col in 0..w {
                let q = pixel_center(col, row);
                for (gp, p) in g.iter_mut().zip(proj) {
                    *gp = (-(q - p.uv).norm_squared() * inv).exp();
                }
                for i in (0..n).rev() {
                    suffix[i] = suffix[i + 1] * (1.0 - g[i]);
                }
                let s = 1.0 - suffix[0];
                let m = mask.pixels[row * w + col] as f64;
                loss += (s - m) * (s - m);
                let ds = 2.0 * (s - m) / npix;
                if ds == 0.0 {
                    continue;
                }
                // dS/dg_p = prod_{q != p} (1 - g_q), dg_p/du_p = g_p (q - u_p) / r^2
                let mut prefix = 1.0;
                for i in 0..n {
                    let others = prefix * suffix[i + 1];
                    duv[i] += (ds * others * g[i] / r2) * (q - proj[i].uv);
                    prefix *= 1.0 - g[i];
                }
            }
            (loss / npix, duv)
        })
        .collect();
    let mut loss = 0.0;
    let mut duv = vec![Vector2::zeros(); n];
    for (l, d) in rows {
        loss += l;
        for (acc, v) in duv.iter_mut().zip(d) {
            *acc += v;
        }
    }
    (loss, duv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3x4;

    /// 8x8 camera at the origin looking down +z.
    fn camera() -> PinholeCamera {
        PinholeCamera {
            width: 8,
            height: 8,
            fx: 8.0,
            fy: 8.0,
            cx: 4.0,
            cy: 4.0,
            extrinsic: Matrix3x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0),
        }
    }

    /// Two particles projecting onto the centres of pixels (2, 3) and (5, 4).
    fn two_particles() -> Vec<Vector3<f64>> {
        vec![Vector3::new(-0.1875, -0.0625, 1.0), Vector3::new(0.1875, 0.0625, 1.0)]
    }

    /// Direct evaluation of the loss without prefix/suffix products.
    fn brute_force(positions: &[Vector3<f64>], mask: &CameraMask, r: f64) -> f64 {
        let cam = &mask.camera;
        let mut loss = 0.0;
        for row in 0..cam.height as usize {
            for col in 0..cam.width as usize {
                let q = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
                let mut keep = 1.0;
                for x in positions {
                    let (uv, _) = cam.project(x).unwrap();
                    keep *= 1.0 - (-(q - uv).norm_squared() / (2.0 * r * r)).exp();
                }
                let m = mask.pixels[row * cam.width as usize + col] as f64;
                loss += (1.0 - keep - m).powi(2);
            }
        }
        loss / cam.pixel_count() as f64
    }

    #[test]
    fn matches_brute_force_and_prefers_alignment() {
        let cam = camera();
        let pts = two_particles();
        // narrow splats saturate at the covered pixel centres
        let r = 0.5;
        let mask = CameraMask {
            camera: cam,
            pixels: binary_silhouette(&pts, &cam, r),
        };
        let covered: Vec<usize> = (0..64).filter(|&i| mask.pixels[i] == 1).collect();
        assert_eq!(covered, vec![3 * 8 + 2, 4 * 8 + 5]);
        let (aligned, _) = mask_loss(&pts, std::slice::from_ref(&mask), r).unwrap();
        assert!((aligned - brute_force(&pts, &mask, r)).abs() < 1e-14);
        // residual comes from the tails on the uncovered neighbours
        assert!(aligned > 0.0 && aligned < 0.01);
        for du in -4..=4 {
            for dv in -4..=4 {
                if du == 0 && dv == 0 {
                    continue;
                }
                let shift = Vector3::new(du as f64 * 0.03, dv as f64 * 0.03, 0.0);
                let moved: Vec<_> = pts.iter().map(|p| p + shift).collect();
                let (l, _) = mask_loss(&moved, std::slice::from_ref(&mask), r).unwrap();
                assert!(l > aligned, "shift {shift:?}: {l} <= {aligned}");
                assert!((l - brute_force(&moved, &mask, r)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn one_pixel_shift_increases_loss_from_exact_match() {
        // a mask equal to S itself cannot be stored as bits, so compare the
        // soft silhouette MSE against itself directly
        let cam = camera();
        let pts = two_particles();
        let s0 = soft_silhouette(&pts, &cam, 2.0);
        let shift = Vector3::new(1.0 / cam.fx, 0.0, 0.0); // one pixel along +u at depth 1
        let moved: Vec<_> = pts.iter().map(|p| p + shift).collect();
        let s1 = soft_silhouette(&moved, &cam, 2.0);
        let mse: f64 = s0.iter().zip(&s1).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / s0.len() as f64;
        assert!(mse > 0.0);
    }

    #[test]
    fn out_of_frame_is_a_domain_error() {
        let cam = camera();
        let mask = CameraMask {
            camera: cam,
            pixels: vec![0; 64],
        };
        let far = vec![Vector3::new(10.0, 10.0, 1.0)];
        assert!(mask_loss(&far, &[mask.clone()], 2.0).is_err());
        let behind = vec![Vector3::new(0.0, 0.0, -1.0)];
        assert!(mask_loss(&behind, &[mask], 2.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cam = camera();
        let pts: Vec<_> = (0..10)
            .map(|i| Vector3::new(-0.2 + 0.04 * i as f64, 0.03 * ((i * 7) % 5) as f64 - 0.06, 1.0 + 0.01 * i as f64))
            .collect();
        let target: Vec<_> = pts.iter().map(|p| p + Vector3::new(0.05, -0.02, 0.0)).collect();
        let mask = CameraMask {
            camera: cam,
            pixels: binary_silhouette(&target, &cam, 2.0),
        };
        let masks = [mask];
        let (_, g) = mask_loss(&pts, &masks, 2.0).unwrap();
        let h = 1e-6;
        for i in 0..pts.len() {
            for ax in 0..3 {
                let mut pp = pts.clone();
                let mut pm = pts.clone();
                pp[i][ax] += h;
                pm[i][ax] -= h;
                let fd = (mask_loss(&pp, &masks, 2.0).unwrap().0 - mask_loss(&pm, &masks, 2.0).unwrap().0) / (2.0 * h);
                assert!((fd - g[i][ax]).abs() <= 1e-5 * fd.abs().max(1e-4), "{fd} vs {}", g[i][ax]);
            }
        }
    }
}
