//! Gradient-descent optimizers over flat parameter slices.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// One bias-corrected step. Coordinates outside `mask` keep both their
    /// value and their moments.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: Option<&[bool]>) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (math::sqrt(vhat) + self.eps);
        }
    }

    /// Zeroes both moments wherever `mask` is set.
    pub fn reset_moments(&mut self, mask: &[bool]) {
        for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
            self.m[i] = 0.0;
            self.v[i] = 0.0;
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// SGD with heavy-ball momentum (`momentum = 0` gives plain SGD).
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(dim: usize, lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: vec![0.0; dim] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: Option<&[bool]>) {
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            self.velocity[i] = self.momentum * self.velocity[i] + grad[i];
            params[i] -= self.lr * self.velocity[i];
        }
    }

    pub fn reset_moments(&mut self, mask: &[bool]) {
        for (v, _) in self.velocity.iter_mut().zip(mask).filter(|(_, &b)| b) {
            *v = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: Option<&[bool]>) {
        match self {
            Optimizer::Adam(o) => o.step(params, grad, mask),
            Optimizer::Sgd(o) => o.step(params, grad, mask),
        }
    }

    pub fn reset_moments(&mut self, mask: &[bool]) {
        match self {
            Optimizer::Adam(o) => o.reset_moments(mask),
            Optimizer::Sgd(o) => o.reset_moments(mask),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::new(2, 0.01);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.2], None);
        // bias-corrected first step is lr * sign(g) up to eps
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-7);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Adam::new(1, 0.05);
        let mut p = [4.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            opt.step(&mut p, &g, None);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn masked_coordinates_are_frozen() {
        let mut opt = Adam::new(3, 0.1);
        let mut p = [0.0; 3];
        opt.step(&mut p, &[1.0, 1.0, 1.0], Some(&[true, false, true]));
        assert_eq!(p[1], 0.0);
        assert!(p[0] < 0.0 && p[2] < 0.0);
        let mut sgd = Sgd::new(2, 0.5, 0.9);
        let mut q = [1.0, 1.0];
        sgd.step(&mut q, &[2.0, 2.0], Some(&[false, true]));
        assert_eq!(q, [1.0, 0.0]);
    }

    #[test]
    fn reset_clears_selected_moments() {
        let mut opt = Adam::new(2, 0.1);
        let mut p = [0.0; 2];
        opt.step(&mut p, &[1.0, 1.0], None);
        opt.reset_moments(&[true, false]);
        assert_eq!(opt.m[0], 0.0);
        assert!(opt.m[1] > 0.0);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut sgd = Sgd::new(1, 0.1, 0.9);
        let mut p = [0.0];
        sgd.step(&mut p, &[1.0], None);
        sgd.step(&mut p, &[1.0], None);
        assert!((p[0] + 0.1 + 0.19).abs() < 1e-15);
    }
}
