use nalgebra::Vector3;

/// Geometry of the uniform background grid. Node `(i, j, k)` sits at
/// `origin + dx * (i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vector3<f64>,
    pub dx: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Nodes per x-layer; layers are contiguous in the flat node index.
    pub fn layer_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn node_coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let rest = idx / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    #[inline]
    pub fn node_position(&self, idx: usize) -> Vector3<f64> {
        let [i, j, k] = self.node_coords(idx);
        self.origin + self.dx * Vector3::new(i as f64, j as f64, k as f64)
    }

    /// Position in cell units relative to the origin.
    #[inline]
    pub fn to_cell(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (x - self.origin) / self.dx
    }

    /// True when the position keeps at least `margin` cells to every grid face.
    pub fn contains_with_margin(&self, x: &Vector3<f64>, margin: f64) -> bool {
        let c = self.to_cell(x);
        (0..3).all(|a| c[a] >= margin && c[a] <= (self.dims[a] - 1) as f64 - margin)
    }

    pub fn is_border(&self, idx: usize) -> bool {
        let c = self.node_coords(idx);
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }
}

/// Per-node mass and velocity, rebuilt every step.
///
/// `momentum` and `force` are the raw P2G accumulators; `velocity` holds the
/// value after the grid update and boundary conditions.
#[derive(Debug, Clone)]
pub struct GridField {
    pub spec: GridSpec,
    pub mass: Vec<f64>,
    pub momentum: Vec<Vector3<f64>>,
    pub force: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
}

impl GridField {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.node_count();
        GridField {
            spec,
            mass: vec![0.0; n],
            momentum: vec![Vector3::zeros(); n],
            force: vec![Vector3::zeros(); n],
            velocity: vec![Vector3::zeros(); n],
        }
    }

    pub fn clear(&mut self) {
        self.mass.fill(0.0);
        self.momentum.fill(Vector3::zeros());
        self.force.fill(Vector3::zeros());
        self.velocity.fill(Vector3::zeros());
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.momentum.iter().fold(Vector3::zeros(), |a, b| a + b)
    }
}
