//! Small dense layers with explicit backward passes, and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};
use crate::real17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    #[serde(with = "real17::vec")]
    pub b: Vec<f64>,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            w: Matrix::init_uniform(outputs, inputs, rng),
            b: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        linalg::axpy(&mut y, 1.0, &self.b);
        y
    }

    /// Accumulates `dy xᵀ` and `dy` into `grad`; returns `Wᵀ dy`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        grad.w.add_outer(1.0, dy, x);
        linalg::axpy(&mut grad.b, 1.0, dy);
        self.w.t_matvec(dy)
    }

    pub fn push_flat<'a>(&'a mut self, out: &mut Vec<&'a mut f64>) {
        out.extend(self.w.as_mut_slice().iter_mut());
        out.extend(self.b.iter_mut());
    }

    pub fn extend_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(&self.b);
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.b.iter().all(|x| x.is_finite())
    }

    /// `self ← τ·other + (1 − τ)·self`.
    pub fn blend(&mut self, other: &Dense, tau: f64) {
        for (a, b) in self.w.as_mut_slice().iter_mut().zip(other.w.as_slice()) {
            *a = tau * b + (1.0 - tau) * *a;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a = tau * b + (1.0 - tau) * *a;
        }
    }
}

pub fn tanh_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Descent step on `params` along `grad`.
    pub fn step(&mut self, params: Vec<&mut f64>, grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, p) in params.into_iter().enumerate() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn dense_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::init(3, 2, &mut rng);
        let x = vec![0.3, -0.7, 1.1];
        let dy = vec![1.0, -2.0];
        let mut g = d.zeros_like();
        let dx = d.backward(&x, &dy, &mut g);
        let f = |d: &Dense, x: &[f64]| linalg::dot(&d.forward(x), &dy);
        for k in 0..3 {
            let mut xp = x.clone();
            xp[k] += 1e-6;
            let mut xm = x.clone();
            xm[k] -= 1e-6;
            assert!(((f(&d, &xp) - f(&d, &xm)) / 2e-6 - dx[k]).abs() < 1e-8);
        }
        assert_eq!(g.b, dy);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(x.iter_mut().collect(), &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }
}
