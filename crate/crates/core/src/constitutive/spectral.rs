//! Reverse-mode differentiation of isotropic spectral matrix functions
//! `G(F) = U diag(g(sigma)) V^T`.

use nalgebra::{Matrix3, Vector3};

use super::svd::Svd3;

/// Below this separation two singular values are treated as repeated and
/// the divided difference is replaced by its limit.
const REPEATED_GAP: f64 = 1e-6;

/// Diagonal values of a spectral function together with the derivative
/// information its adjoint needs.
pub struct SpectralValues {
    pub values: Vector3<f64>,
    /// `jacobian[(i, j)] = d g_i / d sigma_j`.
    pub jacobian: Matrix3<f64>,
    /// `divided[(i, j)] = (g_j - g_i) / (sigma_j - sigma_i)` for `i != j`.
    /// Callers with a closed form fill it in; otherwise use
    /// [`SpectralValues::with_divided_differences`].
    pub divided: Matrix3<f64>,
}

impl SpectralValues {
    /// Fills in divided differences numerically, falling back to
    /// `J_ii - J_ij` for (nearly) repeated singular values.
    pub fn with_divided_differences(values: Vector3<f64>, jacobian: Matrix3<f64>, sigma: &Vector3<f64>) -> Self {
        let mut divided = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let gap = sigma[j] - sigma[i];
                let scale = sigma[i].abs().max(sigma[j].abs()).max(1.0);
                divided[(i, j)] = if gap.abs() > REPEATED_GAP * scale {
                    (values[j] - values[i]) / gap
                } else {
                    jacobian[(i, i)] - jacobian[(i, j)]
                };
            }
        }
        SpectralValues {
            values,
            jacobian,
            divided,
        }
    }
}

/// Pulls the adjoint `g_bar` of `G = U diag(g) V^T` back to the input matrix.
///
/// Returns `(F_bar, d_bar)` where `d_bar = diag(U^T G_bar V)` is the adjoint
/// of the diagonal values, which callers chain into parameter gradients.
pub fn spectral_adjoint(svd: &Svd3, g: &SpectralValues, g_bar: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let a = svd.u.transpose() * g_bar * svd.v;
    let s = &svd.sigma;
    let d = &g.values;
    let d_bar = Vector3::new(a[(0, 0)], a[(1, 1)], a[(2, 2)]);

    let mut m_bar = Matrix3::zeros();
    for i in 0..3 {
        m_bar[(i, i)] = (0..3).map(|k| d_bar[k] * g.jacobian[(k, i)]).sum();
    }
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let sum = s[i] + s[j];
            let avg = if sum.abs() > 1e-300 { (d[i] + d[j]) / sum } else { 0.0 };
            let alpha = 0.5 * (g.divided[(i, j)] + avg);
            let beta = 0.5 * (g.divided[(i, j)] - avg);
            m_bar[(i, j)] = a[(i, j)] * alpha + a[(j, i)] * beta;
        }
    }
    (svd.u * m_bar * svd.v.transpose(), d_bar)
}
