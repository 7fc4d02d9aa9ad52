//! Von Mises plasticity as a deviatoric projection in principal Hencky
//! (logarithmic) strain space. The yield threshold on the deviatoric strain
//! norm is `y / (2 mu)`.

use nalgebra::{Matrix3, Vector3};

use super::spectral::{spectral_adjoint, SpectralValues};
use super::svd::{svd3, Svd3};
use crate::error::{Error, Result};
use crate::material::Lame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnMap {
    pub elastic: Matrix3<f64>,
    /// Signed distance `||dev(eps)|| - y/(2 mu)`; positive when the map projected.
    pub delta_gamma: f64,
}

impl ReturnMap {
    pub fn yielded(&self) -> bool {
        self.delta_gamma > 0.0
    }
}

struct Hencky {
    dev: Vector3<f64>,
    dev_norm: f64,
    mean: f64,
}

fn hencky(sigma: &Vector3<f64>) -> Hencky {
    let eps = sigma.map(f64::ln);
    let mean = eps.sum() / 3.0;
    let dev = eps.add_scalar(-mean);
    Hencky {
        dev_norm: dev.norm(),
        dev,
        mean,
    }
}

pub fn von_mises_return_map(f_trial: &Matrix3<f64>, lame: &Lame, yield_stress: f64) -> Result<ReturnMap> {
    if yield_stress.is_nan() || yield_stress < 0.0 {
        return Err(Error::domain(format!("yield stress {yield_stress} must be >= 0")));
    }
    if yield_stress.is_infinite() {
        return Ok(ReturnMap {
            elastic: *f_trial,
            delta_gamma: f64::NEG_INFINITY,
        });
    }
    let det = f_trial.determinant();
    if !(det > 0.0) {
        return Err(Error::domain(format!("trial deformation determinant {det} is not positive")));
    }
    let svd = svd3(f_trial);
    let h = hencky(&svd.sigma);
    let tau = yield_stress / (2.0 * lame.mu);
    let delta_gamma = h.dev_norm - tau;
    if delta_gamma <= 0.0 {
        return Ok(ReturnMap {
            elastic: *f_trial,
            delta_gamma,
        });
    }
    let projected = h.dev * (tau / h.dev_norm);
    let sigma = projected.add_scalar(h.mean).map(f64::exp);
    Ok(ReturnMap {
        elastic: svd.u * Matrix3::from_diagonal(&sigma) * svd.v.transpose(),
        delta_gamma,
    })
}

fn projected_values(svd: &Svd3, tau: f64) -> (SpectralValues, Vector3<f64>) {
    let s = &svd.sigma;
    let h = hencky(s);
    let n = h.dev_norm;
    let unit = h.dev / n;
    let g = (unit * tau).add_scalar(h.mean).map(f64::exp);
    let third = Matrix3::from_element(1.0 / 3.0);
    let d_eps = third + (tau / n) * (Matrix3::identity() - third - unit * unit.transpose());
    let jacobian = Matrix3::from_fn(|i, j| g[i] * d_eps[(i, j)] / s[j]);
    // d g / d tau
    let dg_dtau = g.component_mul(&unit);
    (SpectralValues::with_divided_differences(g, jacobian, s), dg_dtau)
}

/// Adjoint of the return map at `f_trial`. Returns `(F_trial_bar, mu_bar, y_bar)`.
/// On the elastic branch the map is the identity and parameters get no gradient.
pub(crate) fn return_map_adjoint(
    f_trial: &Matrix3<f64>,
    lame: &Lame,
    yield_stress: f64,
    fe_bar: &Matrix3<f64>,
) -> (Matrix3<f64>, f64, f64) {
    if yield_stress.is_infinite() {
        return (*fe_bar, 0.0, 0.0);
    }
    let svd = svd3(f_trial);
    let h = hencky(&svd.sigma);
    let tau = yield_stress / (2.0 * lame.mu);
    if h.dev_norm - tau <= 0.0 {
        return (*fe_bar, 0.0, 0.0);
    }
    let (g, dg_dtau) = projected_values(&svd, tau);
    let (f_bar, d_bar) = spectral_adjoint(&svd, &g, fe_bar);
    let tau_bar = d_bar.dot(&dg_dtau);
    let y_bar = tau_bar / (2.0 * lame.mu);
    let mu_bar = -tau_bar * yield_stress / (2.0 * lame.mu * lame.mu);
    (f_bar, mu_bar, y_bar)
}

/// Deviatoric Hencky strain norm of `f`.
pub fn deviatoric_strain_norm(f: &Matrix3<f64>) -> f64 {
    hencky(&svd3(f).sigma).dev_norm
}

/// Volumetric Hencky strain `ln det F`.
pub fn log_volume(f: &Matrix3<f64>) -> f64 {
    svd3(f).sigma.map(f64::ln).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lame_with_tau(tau: f64) -> (Lame, f64) {
        let lame = Lame {
            mu: 1e5,
            lambda: 2e5,
        };
        (lame, tau * 2.0 * lame.mu)
    }

    #[test]
    fn identity_is_inside_yield_surface() {
        let (l, y) = lame_with_tau(0.1);
        let r = von_mises_return_map(&Matrix3::identity(), &l, y).unwrap();
        assert_eq!(r.elastic, Matrix3::identity());
        assert!(!r.yielded());
    }

    #[test]
    fn pure_dilation_never_yields() {
        let (l, _) = lame_with_tau(0.1);
        let f = 1.7 * Matrix3::identity();
        for y in [0.0, 1.0, 1e4] {
            let r = von_mises_return_map(&f, &l, y).unwrap();
            assert_eq!(r.elastic, f);
        }
    }

    #[test]
    fn projection_lands_on_yield_surface() {
        let (l, y) = lame_with_tau(0.1);
        let f = Matrix3::from_diagonal(&Vector3::new(0.2f64.exp(), (-0.1f64).exp(), (-0.1f64).exp()));
        let r = von_mises_return_map(&f, &l, y).unwrap();
        assert!(r.yielded());
        assert!((r.delta_gamma - (0.06f64.sqrt() - 0.1)).abs() < 1e-14);
        assert!((deviatoric_strain_norm(&r.elastic) - 0.1).abs() < 1e-12);
        assert!(log_volume(&r.elastic).abs() < 1e-12);
    }

    #[test]
    fn negative_yield_rejected() {
        let (l, _) = lame_with_tau(0.1);
        assert!(von_mises_return_map(&Matrix3::identity(), &l, -1.0).is_err());
    }

    #[test]
    fn elastic_sentinel_is_identity() {
        let (l, _) = lame_with_tau(0.1);
        let f = Matrix3::new(2.0, 0.3, 0.0, 0.0, 0.5, 0.1, 0.0, 0.0, 1.0);
        assert_eq!(von_mises_return_map(&f, &l, f64::INFINITY).unwrap().elastic, f);
    }

    #[test]
    fn adjoint_matches_finite_differences_off_the_kink() {
        let (l, y) = lame_with_tau(0.05);
        let f = Matrix3::new(1.15, 0.04, -0.02, 0.01, 0.93, 0.05, 0.03, -0.02, 0.96);
        let fe_bar = Matrix3::new(0.4, -0.3, 0.1, 0.2, 0.9, -0.5, 0.7, 0.3, -0.2);
        assert!(von_mises_return_map(&f, &l, y).unwrap().delta_gamma > 1e-3);
        let obj = |f: &Matrix3<f64>, l: &Lame, y: f64| {
            von_mises_return_map(f, l, y).unwrap().elastic.component_mul(&fe_bar).sum()
        };
        let (f_bar, mu_bar, y_bar) = return_map_adjoint(&f, &l, y, &fe_bar);
        let h = 1e-7;
        for r in 0..3 {
            for c in 0..3 {
                let mut fp = f;
                let mut fm = f;
                fp[(r, c)] += h;
                fm[(r, c)] -= h;
                let fd = (obj(&fp, &l, y) - obj(&fm, &l, y)) / (2.0 * h);
                assert!((fd - f_bar[(r, c)]).abs() < 1e-6, "({r},{c}) {fd} vs {}", f_bar[(r, c)]);
            }
        }
        let hy = 1e-3 * y;
        let fd_y = (obj(&f, &l, y + hy) - obj(&f, &l, y - hy)) / (2.0 * hy);
        assert!((fd_y - y_bar).abs() < 1e-6 * fd_y.abs().max(1e-9));
        let hm = 1e-3 * l.mu;
        let fd_mu = (obj(&f, &Lame { mu: l.mu + hm, ..l }, y) - obj(&f, &Lame { mu: l.mu - hm, ..l }, y)) / (2.0 * hm);
        assert!((fd_mu - mu_bar).abs() < 1e-6 * fd_mu.abs().max(1e-12));
    }

    #[test]
    fn adjoint_handles_repeated_singular_values() {
        // uniaxial stretch: the two lateral singular values coincide
        let (l, y) = lame_with_tau(0.05);
        let f = Matrix3::from_diagonal(&Vector3::new(1.2, 0.95, 0.95));
        let fe_bar = Matrix3::new(0.4, -0.3, 0.1, 0.2, 0.9, -0.5, 0.7, 0.3, -0.2);
        let obj = |f: &Matrix3<f64>| von_mises_return_map(f, &l, y).unwrap().elastic.component_mul(&fe_bar).sum();
        let (f_bar, _, _) = return_map_adjoint(&f, &l, y, &fe_bar);
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..3 {
                let mut fp = f;
                let mut fm = f;
                fp[(r, c)] += h;
                fm[(r, c)] -= h;
                let fd = (obj(&fp) - obj(&fm)) / (2.0 * h);
                assert!((fd - f_bar[(r, c)]).abs() < 1e-5, "({r},{c}) {fd} vs {}", f_bar[(r, c)]);
            }
        }
    }

    fn rotation(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn yield_membership_idempotence_and_volume(entries in proptest::array::uniform9(-0.4f64..0.4),
                                                   tau in 0.0f64..0.2) {
            let f = Matrix3::identity() + Matrix3::from_row_slice(&entries);
            prop_assume!(f.determinant() > 0.1);
            let (l, y) = lame_with_tau(tau);
            let r = von_mises_return_map(&f, &l, y).unwrap();
            prop_assert!(deviatoric_strain_norm(&r.elastic) <= tau + 1e-10);
            prop_assert!((log_volume(&r.elastic) - log_volume(&f)).abs() < 1e-10);
            let again = von_mises_return_map(&r.elastic, &l, y).unwrap();
            prop_assert!((again.elastic - r.elastic).norm() < 1e-10);
        }

        #[test]
        fn return_map_commutes_with_rotation(entries in proptest::array::uniform9(-0.3f64..0.3),
                                             axis in proptest::array::uniform3(-1.0f64..1.0),
                                             angle in -3.0f64..3.0) {
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 0.1);
            let f = Matrix3::identity() + Matrix3::from_row_slice(&entries);
            prop_assume!(f.determinant() > 0.2);
            let q = rotation(axis, angle);
            let (l, y) = lame_with_tau(0.03);
            let a = von_mises_return_map(&f, &l, y).unwrap().elastic;
            let b = von_mises_return_map(&(q * f), &l, y).unwrap().elastic;
            prop_assert!((b - q * a).norm() < 1e-9);
        }
    }
}
