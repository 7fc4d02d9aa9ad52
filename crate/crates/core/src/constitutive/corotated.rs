use nalgebra::{Matrix3, Vector3};

use super::spectral::{spectral_adjoint, SpectralValues};
use super::svd::{svd3, Svd3};
use crate::error::{Error, Result};
use crate::material::Lame;

/// First Piola-Kirchhoff stress of the fixed corotated model,
/// `P = 2 mu (F - R) + lambda (J - 1) J F^-T`.
pub fn fixed_corotated_p(f: &Matrix3<f64>, lame: &Lame) -> Result<Matrix3<f64>> {
    let j = f.determinant();
    if !(j > 0.0) {
        return Err(Error::domain(format!("deformation gradient determinant {j} is not positive")));
    }
    let svd = svd3(f);
    Ok(stress_from_svd(&svd, lame))
}

/// Stored energy density `mu sum (sigma_i - 1)^2 + lambda/2 (J - 1)^2`.
pub fn corotated_energy(f: &Matrix3<f64>, lame: &Lame) -> f64 {
    let s = svd3(f).sigma;
    let j = f.determinant();
    lame.mu * s.map(|x| (x - 1.0) * (x - 1.0)).sum() + 0.5 * lame.lambda * (j - 1.0) * (j - 1.0)
}

pub(crate) fn stress_from_svd(svd: &Svd3, lame: &Lame) -> Matrix3<f64> {
    let p = principal_stress(&svd.sigma, lame);
    svd.u * Matrix3::from_diagonal(&p.values) * svd.v.transpose()
}

/// `dPsi/dsigma_i` with its Jacobian and closed-form divided differences.
fn principal_stress(s: &Vector3<f64>, lame: &Lame) -> SpectralValues {
    let (mu, la) = (lame.mu, lame.lambda);
    let j = s[0] * s[1] * s[2];
    let values = Vector3::from_fn(|i, _| 2.0 * mu * (s[i] - 1.0) + la * (j - 1.0) * j / s[i]);
    let mut jacobian = Matrix3::zeros();
    let mut divided = Matrix3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            let sab = s[a] * s[b];
            if a == b {
                jacobian[(a, a)] = 2.0 * mu + la * j * j / sab;
            } else {
                jacobian[(a, b)] = la * j * (2.0 * j - 1.0) / sab;
                divided[(a, b)] = 2.0 * mu - la * (j - 1.0) * j / sab;
            }
        }
    }
    SpectralValues {
        values,
        jacobian,
        divided,
    }
}

/// Adjoint of `P(F; mu, lambda)`: returns `(F_bar, mu_bar, lambda_bar)`.
pub(crate) fn stress_adjoint(svd: &Svd3, lame: &Lame, p_bar: &Matrix3<f64>) -> (Matrix3<f64>, f64, f64) {
    let s = &svd.sigma;
    let p = principal_stress(s, lame);
    let (f_bar, d_bar) = spectral_adjoint(svd, &p, p_bar);
    let j = s[0] * s[1] * s[2];
    let mut mu_bar = 0.0;
    let mut lambda_bar = 0.0;
    for i in 0..3 {
        mu_bar += d_bar[i] * 2.0 * (s[i] - 1.0);
        lambda_bar += d_bar[i] * (j - 1.0) * j / s[i];
    }
    (f_bar, mu_bar, lambda_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{lame_from_params, MaterialParams};
    use proptest::prelude::*;

    fn lame() -> Lame {
        lame_from_params(&MaterialParams::elastic(1e6, 0.3, 1000.0)).unwrap()
    }

    /// Central finite difference of the energy density, entry by entry.
    fn energy_gradient_fd(f: &Matrix3<f64>, lame: &Lame, h: f64) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| {
            let mut fp = *f;
            let mut fm = *f;
            fp[(r, c)] += h;
            fm[(r, c)] -= h;
            (corotated_energy(&fp, lame) - corotated_energy(&fm, lame)) / (2.0 * h)
        })
    }

    fn rotation(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    }

    #[test]
    fn rest_state_is_stress_free() {
        let p = fixed_corotated_p(&Matrix3::identity(), &lame()).unwrap();
        assert_eq!(p, Matrix3::zeros());
    }

    #[test]
    fn rotations_are_stress_free() {
        let r = rotation(Vector3::new(1.0, 2.0, -0.5), 0.7);
        let p = fixed_corotated_p(&r, &lame()).unwrap();
        assert!(p.norm() < 1e-8);
    }

    #[test]
    fn uniaxial_stretch_matches_energy_gradient() {
        let l = Lame {
            mu: 384615.3846,
            lambda: 576923.0769,
        };
        let f = Matrix3::from_diagonal(&Vector3::new(1.1, 1.0, 1.0));
        let p = fixed_corotated_p(&f, &l).unwrap();
        // closed form on the diagonal: P_00 = 2 mu (0.1) + lambda (0.1)(1.1)/1.1
        assert!((p[(0, 0)] - (2.0 * l.mu * 0.1 + l.lambda * 0.1)).abs() < 1e-6);
        assert!((p[(1, 1)] - l.lambda * 0.1 * 1.1).abs() < 1e-6);
        let fd = energy_gradient_fd(&f, &l, 1e-6);
        assert!((fd - p).norm() / p.norm() < 1e-4);
    }

    #[test]
    fn inverted_gradient_rejected() {
        let f = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(fixed_corotated_p(&f, &lame()).is_err());
    }

    #[test]
    fn stress_adjoint_matches_finite_differences() {
        let l = lame();
        let f = Matrix3::new(1.05, 0.1, -0.02, 0.03, 0.97, 0.08, -0.04, 0.01, 1.02);
        let p_bar = Matrix3::new(0.2, -0.1, 0.3, 0.5, 0.1, -0.7, 0.0, 0.4, 0.6);
        let svd = svd3(&f);
        let (f_bar, mu_bar, lambda_bar) = stress_adjoint(&svd, &l, &p_bar);
        let obj = |f: &Matrix3<f64>, l: &Lame| fixed_corotated_p(f, l).unwrap().component_mul(&p_bar).sum();
        let h = 1e-7;
        for r in 0..3 {
            for c in 0..3 {
                let mut fp = f;
                let mut fm = f;
                fp[(r, c)] += h;
                fm[(r, c)] -= h;
                let fd = (obj(&fp, &l) - obj(&fm, &l)) / (2.0 * h);
                assert!((fd - f_bar[(r, c)]).abs() < 1e-6 * fd.abs().max(1e3));
            }
        }
        let hm = 1.0;
        let fd_mu = (obj(&f, &Lame { mu: l.mu + hm, ..l }) - obj(&f, &Lame { mu: l.mu - hm, ..l })) / (2.0 * hm);
        let fd_la = (obj(&f, &Lame { lambda: l.lambda + hm, ..l }) - obj(&f, &Lame { lambda: l.lambda - hm, ..l })) / (2.0 * hm);
        assert!((fd_mu - mu_bar).abs() < 1e-6 * fd_mu.abs().max(1e-3));
        assert!((fd_la - lambda_bar).abs() < 1e-6 * fd_la.abs().max(1e-3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn stress_is_energy_gradient(entries in proptest::array::uniform9(-0.25f64..0.25)) {
            let f = Matrix3::identity() + Matrix3::from_row_slice(&entries);
            prop_assume!(f.determinant() > 0.2);
            let l = lame();
            let p = fixed_corotated_p(&f, &l).unwrap();
            let fd = energy_gradient_fd(&f, &l, 1e-6);
            prop_assert!((fd - p).norm() <= 1e-4 * p.norm().max(1.0));
        }

        #[test]
        fn stress_rotates_with_deformation(entries in proptest::array::uniform9(-0.2f64..0.2),
                                           axis in proptest::array::uniform3(-1.0f64..1.0),
                                           angle in -3.0f64..3.0) {
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 0.1);
            let q = rotation(axis, angle);
            let f = Matrix3::identity() + Matrix3::from_row_slice(&entries);
            prop_assume!(f.determinant() > 0.2);
            let l = lame();
            let p = fixed_corotated_p(&f, &l).unwrap();
            let pq = fixed_corotated_p(&(q * f), &l).unwrap();
            prop_assert!((pq - q * p).norm() <= 1e-9 * p.norm().max(1.0));
        }
    }
}
