//! (mu/mu_w, lambda)-CMA-ES with the default parameter settings of Hansen's
//! tutorial, restricted to a box by resampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Resampling attempts for an out-of-box candidate before clamping it.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone)]
pub struct CmaEs {
    pub dim: usize,
    pub lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    pub mean: DVector<f64>,
    pub sigma: f64,
    cov: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    b: DMatrix<f64>,
    d: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    rng: ChaCha8Rng,
    pub generation: usize,
}

impl CmaEs {
    pub fn new(mean: &[f64], sigma: f64, lambda: usize, lower: &[f64], upper: &[f64], seed: u64) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::validation("material.frozen", "CMA-ES needs at least one free parameter"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::validation("optimizer.cma_sigma", "must be > 0"));
        }
        if lambda < 2 {
            return Err(Error::validation("optimizer.cma_population", "must be >= 2"));
        }
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (0..mu)
            .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(CmaEs {
            dim: n,
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean: DVector::from_column_slice(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            b: DMatrix::identity(n, n),
            d: DVector::from_element(n, 1.0),
            lower: DVector::from_column_slice(lower),
            upper: DVector::from_column_slice(upper),
            rng: ChaCha8Rng::seed_from_u64(seed),
            generation: 0,
        })
    }

    fn inside(&self, x: &DVector<f64>) -> bool {
        (0..self.dim).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// Draws one generation of candidates inside the box.
    pub fn ask(&mut self) -> Vec<DVector<f64>> {
        let bd = &self.b * DMatrix::from_diagonal(&self.d);
        (0..self.lambda)
            .map(|_| {
                let mut x = DVector::zeros(self.dim);
                for _ in 0..MAX_RESAMPLES {
                    let z = DVector::from_iterator(self.dim, (0..self.dim).map(|_| StandardNormal.sample(&mut self.rng)));
                    x = &self.mean + self.sigma * &bd * z;
                    if self.inside(&x) {
                        return x;
                    }
                }
                x.zip_zip_map(&self.lower, &self.upper, |v, lo, hi| v.clamp(lo, hi))
            })
            .collect()
    }

    /// Updates the distribution from evaluated candidates. Non-finite
    /// fitness values rank last.
    pub fn tell(&mut self, candidates: &[DVector<f64>], fitness: &[f64]) {
        let n = self.dim as f64;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        let key = |i: usize| if fitness[i].is_finite() { fitness[i] } else { f64::INFINITY };
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
        let old_mean = self.mean.clone();
        let mut new_mean = DVector::zeros(self.dim);
        for (w, &i) in self.weights.iter().zip(&order) {
            new_mean += *w * &candidates[i];
        }
        self.mean = new_mean;
        self.generation += 1;

        let y_w = (&self.mean - &old_mean) / self.sigma;
        let inv_sqrt = &self.b * DMatrix::from_diagonal(&self.d.map(|d| 1.0 / d)) * self.b.transpose();
        self.p_sigma = (1.0 - self.c_sigma) * &self.p_sigma
            + (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt() * (&inv_sqrt * &y_w);
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - self.c_sigma).powi(2 * self.generation as i32);
        let h_sigma = ps_norm / decay.sqrt() / self.chi_n < 1.4 + 2.0 / (n + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - self.c_c) * &self.p_c + h * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, &i) in self.weights.iter().zip(&order) {
            let y = (&candidates[i] - &old_mean) / self.sigma;
            rank_mu += *w * &y * y.transpose();
        }
        let delta_h = (1.0 - h) * self.c_c * (2.0 - self.c_c);
        self.cov = (1.0 - self.c_1 - self.c_mu) * &self.cov
            + self.c_1 * (&self.p_c * self.p_c.transpose() + delta_h * &self.cov)
            + self.c_mu * rank_mu;
        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();

        // keep C symmetric and refresh its factorization
        self.cov = 0.5 * (&self.cov + self.cov.transpose());
        let eig = SymmetricEigen::new(self.cov.clone());
        self.b = eig.eigenvectors;
        self.d = eig.eigenvalues.map(|l| l.max(1e-30).sqrt());
    }
}
