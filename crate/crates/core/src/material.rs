//! Material parameters and their normalized optimization coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale factors mapping physical parameters to the optimizer's coordinates.
///
/// Young's modulus is divided by 1e6, density by 1e3 and yield stress by 1e5.
/// Poisson's ratio is used as is.
pub const NORMALIZATION: [f64; 4] = [1e6, 1.0, 1e3, 1e5];

/// Names of the four identifiable parameters, in coordinate order.
pub const PARAM_NAMES: [&str; 4] = ["E", "nu", "rho", "y"];

/// Identifiable material parameters plus the ground friction coefficient.
///
/// `yield_stress = f64::INFINITY` selects the purely elastic path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
    pub density: f64,
    pub yield_stress: f64,
    pub friction_mu: f64,
}

impl MaterialParams {
    pub fn elastic(youngs_modulus: f64, poissons_ratio: f64, density: f64) -> Self {
        MaterialParams {
            youngs_modulus,
            poissons_ratio,
            density,
            yield_stress: f64::INFINITY,
            friction_mu: 0.0,
        }
    }

    pub fn is_plastic(&self) -> bool {
        self.yield_stress.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.youngs_modulus;
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::validation("material.E", format!("must be finite and > 0, got {e}")));
        }
        let nu = self.poissons_ratio;
        if !(nu > 0.0 && nu < 0.5) {
            return Err(Error::validation("material.nu", format!("must lie in (0, 0.5), got {nu}")));
        }
        let rho = self.density;
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::validation("material.rho", format!("must be finite and > 0, got {rho}")));
        }
        let y = self.yield_stress;
        if y.is_nan() || y < 0.0 {
            return Err(Error::validation("material.y", format!("must be >= 0 or inf, got {y}")));
        }
        let mu = self.friction_mu;
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::validation("ground.friction_mu", format!("must be >= 0, got {mu}")));
        }
        Ok(())
    }

    /// Parameters in normalized optimizer coordinates `[E, nu, rho, y]`.
    /// An infinite yield stress stays infinite.
    pub fn to_normalized(&self) -> [f64; 4] {
        [
            self.youngs_modulus / NORMALIZATION[0],
            self.poissons_ratio / NORMALIZATION[1],
            self.density / NORMALIZATION[2],
            self.yield_stress / NORMALIZATION[3],
        ]
    }

    /// Inverse of [`to_normalized`](Self::to_normalized); friction is kept from `self`.
    pub fn with_normalized(&self, z: [f64; 4]) -> Self {
        MaterialParams {
            youngs_modulus: z[0] * NORMALIZATION[0],
            poissons_ratio: z[1] * NORMALIZATION[1],
            density: z[2] * NORMALIZATION[2],
            yield_stress: z[3] * NORMALIZATION[3],
            friction_mu: self.friction_mu,
        }
    }

    pub fn lame(&self) -> Result<Lame> {
        lame_from_params(self)
    }
}

/// Lamé coefficients in Pa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lame {
    pub mu: f64,
    pub lambda: f64,
}

impl Lame {
    /// Recovers `(E, nu)` from the Lamé pair.
    pub fn to_youngs_poisson(&self) -> (f64, f64) {
        let (mu, la) = (self.mu, self.lambda);
        let e = mu * (3.0 * la + 2.0 * mu) / (la + mu);
        let nu = la / (2.0 * (la + mu));
        (e, nu)
    }
}

pub fn lame_from_params(theta: &MaterialParams) -> Result<Lame> {
    let e = theta.youngs_modulus;
    let nu = theta.poissons_ratio;
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::domain(format!(
            "Poisson's ratio {nu} outside [0, 0.5); lambda is singular at 0.5"
        )));
    }
    Ok(Lame {
        mu: e / (2.0 * (1.0 + nu)),
        lambda: e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
    })
}

/// Partial derivatives of `(mu, lambda)` with respect to `(E, nu)`.
pub(crate) fn lame_jacobian(e: f64, nu: f64) -> [[f64; 2]; 2] {
    let a = 1.0 + nu;
    let b = 1.0 - 2.0 * nu;
    [
        [1.0 / (2.0 * a), -e / (2.0 * a * a)],
        [nu / (a * b), e * (1.0 + 2.0 * nu * nu) / (a * a * b * b)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(e: f64, nu: f64) -> MaterialParams {
        MaterialParams::elastic(e, nu, 1000.0)
    }

    #[test]
    fn lame_reference_values() {
        let l = lame_from_params(&params(1e6, 0.3)).unwrap();
        assert!((l.mu - 384615.384615).abs() < 1e-4);
        assert!((l.lambda - 576923.076923).abs() < 1e-4);

        let l0 = lame_from_params(&params(1e6, 0.0)).unwrap();
        assert_eq!(l0.mu, 5e5);
        assert_eq!(l0.lambda, 0.0);

        let l2 = lame_from_params(&params(2e6, 0.3)).unwrap();
        assert!((l2.mu - 2.0 * l.mu).abs() < 1e-9);
        assert!((l2.lambda - 2.0 * l.lambda).abs() < 1e-9);
    }

    #[test]
    fn lame_rejects_incompressible_limit() {
        assert!(matches!(lame_from_params(&params(1e6, 0.5)), Err(Error::Domain(_))));
        assert!(lame_from_params(&params(1e6, -0.1)).is_err());
    }

    #[test]
    fn lame_jacobian_matches_finite_differences() {
        let (e, nu) = (3e5, 0.27);
        let j = lame_jacobian(e, nu);
        let f = |e: f64, nu: f64| {
            let l = lame_from_params(&params(e, nu)).unwrap();
            [l.mu, l.lambda]
        };
        let (he, hn) = (1.0, 1e-6);
        for k in 0..2 {
            let de = (f(e + he, nu)[k] - f(e - he, nu)[k]) / (2.0 * he);
            let dn = (f(e, nu + hn)[k] - f(e, nu - hn)[k]) / (2.0 * hn);
            assert!((de - j[k][0]).abs() <= 1e-7 * de.abs().max(1.0));
            assert!((dn - j[k][1]).abs() <= 1e-6 * dn.abs().max(1.0));
        }
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut p = params(1e5, 0.3);
        assert!(p.validate().is_ok());
        p.yield_stress = -1.0;
        assert!(p.validate().is_err());
        p.yield_stress = f64::INFINITY;
        p.density = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let p = MaterialParams {
            youngs_modulus: 1.5e5,
            poissons_ratio: 0.31,
            density: 1200.0,
            yield_stress: 3e3,
            friction_mu: 0.4,
        };
        let z = p.to_normalized();
        assert!((z[0] - 0.15).abs() < 1e-15);
        let q = p.with_normalized(z);
        assert!((q.youngs_modulus - p.youngs_modulus).abs() < 1e-9);
        assert_eq!(q.friction_mu, 0.4);
    }

    proptest::proptest! {
        #[test]
        fn lame_round_trip(e in 1e2f64..1e8, nu in 0.01f64..0.49) {
            let l = lame_from_params(&params(e, nu)).unwrap();
            let (e2, nu2) = l.to_youngs_poisson();
            proptest::prop_assert!(((e2 - e) / e).abs() < 1e-12);
            proptest::prop_assert!(((nu2 - nu) / nu).abs() < 1e-12);
        }

        #[test]
        fn lame_is_homogeneous_in_e(e in 1e2f64..1e7, nu in 0.01f64..0.49, k in 0.1f64..10.0) {
            let a = lame_from_params(&params(e, nu)).unwrap();
            let b = lame_from_params(&params(k * e, nu)).unwrap();
            proptest::prop_assert!((b.mu - k * a.mu).abs() <= 1e-12 * b.mu);
            proptest::prop_assert!((b.lambda - k * a.lambda).abs() <= 1e-12 * b.lambda);
        }
    }
}
