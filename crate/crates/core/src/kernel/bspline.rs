//! Quadratic B-spline interpolation over a 3x3x3 node stencil.

use nalgebra::{Matrix3, Vector3};

use crate::grid::GridSpec;

/// Per-axis quadratic B-spline `N(u)` with its first and second derivatives.
#[inline]
pub fn quadratic_kernel(u: f64) -> (f64, f64, f64) {
    let a = u.abs();
    if a < 0.5 {
        (0.75 - u * u, -2.0 * u, -2.0)
    } else if a < 1.5 {
        let r = 1.5 - a;
        (0.5 * r * r, -r * u.signum(), 1.0)
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// Interpolation stencil of one particle. Derivatives are with respect to
/// the particle position in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub base: [usize; 3],
    /// Particle position relative to the base node, in cells (in `[0.5, 1.5)`).
    pub frac: [f64; 3],
    pub w: [[f64; 3]; 3],
    pub dw: [[f64; 3]; 3],
    pub ddw: [[f64; 3]; 3],
}

impl Stencil {
    /// Builds the stencil for a position given in cell units relative to the
    /// grid origin. The position must be at least half a cell inside the grid.
    pub fn new(x_cell: &Vector3<f64>, dx: f64) -> Self {
        let mut s = Stencil {
            base: [0; 3],
            frac: [0.0; 3],
            w: [[0.0; 3]; 3],
            dw: [[0.0; 3]; 3],
            ddw: [[0.0; 3]; 3],
        };
        let inv_dx = 1.0 / dx;
        for a in 0..3 {
            let base = (x_cell[a] - 0.5).floor();
            let fx = x_cell[a] - base;
            s.base[a] = base as usize;
            s.frac[a] = fx;
            for k in 0..3 {
                let (n, dn, ddn) = quadratic_kernel(fx - k as f64);
                s.w[a][k] = n;
                s.dw[a][k] = dn * inv_dx;
                s.ddw[a][k] = ddn * inv_dx * inv_dx;
            }
        }
        s
    }

    #[inline]
    pub fn weight(&self, a: usize, b: usize, c: usize) -> f64 {
        self.w[0][a] * self.w[1][b] * self.w[2][c]
    }

    #[inline]
    pub fn gradient(&self, a: usize, b: usize, c: usize) -> Vector3<f64> {
        let (w, dw) = (&self.w, &self.dw);
        Vector3::new(
            dw[0][a] * w[1][b] * w[2][c],
            w[0][a] * dw[1][b] * w[2][c],
            w[0][a] * w[1][b] * dw[2][c],
        )
    }

    #[inline]
    pub fn hessian(&self, a: usize, b: usize, c: usize) -> Matrix3<f64> {
        let (w, dw, ddw) = (&self.w, &self.dw, &self.ddw);
        let xy = dw[0][a] * dw[1][b] * w[2][c];
        let xz = dw[0][a] * w[1][b] * dw[2][c];
        let yz = w[0][a] * dw[1][b] * dw[2][c];
        Matrix3::new(
            ddw[0][a] * w[1][b] * w[2][c],
            xy,
            xz,
            xy,
            w[0][a] * ddw[1][b] * w[2][c],
            yz,
            xz,
            yz,
            w[0][a] * w[1][b] * ddw[2][c],
        )
    }

    /// `x_node - x_particle` in world units.
    #[inline]
    pub fn node_offset(&self, a: usize, b: usize, c: usize, dx: f64) -> Vector3<f64> {
        Vector3::new(
            (a as f64 - self.frac[0]) * dx,
            (b as f64 - self.frac[1]) * dx,
            (c as f64 - self.frac[2]) * dx,
        )
    }

    #[inline]
    pub fn node_index(&self, spec: &GridSpec, a: usize, b: usize, c: usize) -> usize {
        spec.index(self.base[0] + a, self.base[1] + b, self.base[2] + c)
    }
}

/// Visits the 27 stencil nodes in a fixed order: `a` slowest, `c` fastest.
#[inline]
pub fn for_each_node(mut f: impl FnMut(usize, usize, usize)) {
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                f(a, b, c);
            }
        }
    }
}

/// The 27 tensor-product weights and gradients for a position in cell units.
pub fn bspline_weights(x_cell: &Vector3<f64>, dx: f64) -> ([f64; 27], [Vector3<f64>; 27]) {
    let s = Stencil::new(x_cell, dx);
    let mut w = [0.0; 27];
    let mut g = [Vector3::zeros(); 27];
    let mut n = 0;
    for_each_node(|a, b, c| {
        w[n] = s.weight(a, b, c);
        g[n] = s.gradient(a, b, c);
        n += 1;
    });
    (w, g)
}
