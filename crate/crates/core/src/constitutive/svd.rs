use nalgebra::{Matrix3, Vector3};

/// Rotation-safe singular value decomposition of a 3x3 matrix.
///
/// `u` and `v` are proper rotations; any reflection is pushed into the sign
/// of the smallest singular value, so `sigma[0] >= sigma[1] >= |sigma[2]|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    pub sigma: Vector3<f64>,
    pub v: Matrix3<f64>,
}

impl Svd3 {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u * Matrix3::from_diagonal(&self.sigma) * self.v.transpose()
    }

    /// Polar rotation `U V^T`.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.u * self.v.transpose()
    }
}

pub fn svd3(m: &Matrix3<f64>) -> Svd3 {
    let svd = nalgebra::linalg::SVD::new_unordered(*m, true, true);
    let u0 = svd.u.expect("u requested");
    let vt0 = svd.v_t.expect("v requested");
    let s0 = svd.singular_values;

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]));

    let mut u = Matrix3::zeros();
    let mut v = Matrix3::zeros();
    let mut sigma = Vector3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u0.column(src));
        v.set_column(dst, &vt0.row(src).transpose());
        sigma[dst] = s0[src];
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
        sigma[2] = -sigma[2];
    }
    if v.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
        sigma[2] = -sigma[2];
    }
    Svd3 { u, sigma, v }
}
