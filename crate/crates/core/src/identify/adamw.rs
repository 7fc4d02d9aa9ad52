/// AdamW over the four normalized parameters. Frozen components are never
/// touched.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    m: [f64; 4],
    v: [f64; 4],
    t: i32,
}

impl AdamW {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            betas,
            eps,
            weight_decay,
            m: [0.0; 4],
            v: [0.0; 4],
            t: 0,
        }
    }

    pub fn iterations(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, z: &mut [f64; 4], grad: &[f64; 4], frozen: &[bool; 4]) {
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..4 {
            if frozen[i] {
                continue;
            }
            z[i] -= self.lr * self.weight_decay * z[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            z[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
