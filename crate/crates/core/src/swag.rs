//! Diagonal SWAG posterior fitted from training iterates.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{FlatParams, ParamLayout};

/// Lower bound on every fitted variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Accumulates first and second moments of parameter iterates.
#[derive(Debug, Clone)]
pub struct SwagBuilder {
    layout: Arc<ParamLayout>,
    count: u64,
    mean: Vec<f64>,
    // sum of squared deviations from the running mean (Welford)
    m2: Vec<f64>,
}

impl SwagBuilder {
    pub fn new(layout: Arc<ParamLayout>) -> Self {
        let d = layout.dim();
        Self { layout, count: 0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn collect(&mut self, iterate: &FlatParams) -> Result<()> {
        if iterate.dim() != self.mean.len() {
            return Err(Error::Dimension { expected: self.mean.len(), got: iterate.dim() });
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(iterate.values()) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
        Ok(())
    }

    /// Population moments of the collected iterates.
    pub fn finish(&self) -> Result<SwagDiagPosterior> {
        if self.count == 0 {
            return Err(Error::NoIterates);
        }
        let n = self.count as f64;
        let sigma2 = self.m2.iter().map(|s| (s / n).max(VARIANCE_FLOOR)).collect();
        SwagDiagPosterior::new(
            FlatParams::new(self.layout.clone(), self.mean.clone())?,
            sigma2,
            self.count,
        )
    }
}

/// `q(θ) = Π_i N(θ_i; μ_i, σ²_i)` over the trainables.
#[derive(Debug, Clone, PartialEq)]
pub struct SwagDiagPosterior {
    mu: FlatParams,
    sigma2: Vec<f64>,
    iterates: u64,
}

impl SwagDiagPosterior {
    /// Variances below the floor are raised to it.
    pub fn new(mu: FlatParams, sigma2: Vec<f64>, iterates: u64) -> Result<Self> {
        if sigma2.len() != mu.dim() {
            return Err(Error::Dimension { expected: mu.dim(), got: sigma2.len() });
        }
        if iterates == 0 {
            return Err(Error::NoIterates);
        }
        let sigma2 = sigma2.into_iter().map(|v| if v >= VARIANCE_FLOOR { v } else { VARIANCE_FLOOR }).collect();
        Ok(Self { mu, sigma2, iterates })
    }

    pub fn mu(&self) -> &FlatParams {
        &self.mu
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn iterates(&self) -> u64 {
        self.iterates
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    fn check(&self, theta: &FlatParams) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: theta.dim() });
        }
        Ok(())
    }

    pub fn log_density(&self, theta: &FlatParams) -> Result<f64> {
        self.check(theta)?;
        Ok(theta
            .values()
            .iter()
            .zip(self.mu.values())
            .zip(&self.sigma2)
            .map(|((&t, &m), &s)| -(t - m) * (t - m) / (2.0 * s) - 0.5 * (math::LN_2PI + math::ln(s)))
            .sum())
    }

    pub fn grad_log_density(&self, theta: &FlatParams) -> Result<FlatParams> {
        self.check(theta)?;
        let g = theta
            .values()
            .iter()
            .zip(self.mu.values())
            .zip(&self.sigma2)
            .map(|((&t, &m), &s)| -(t - m) / s)
            .collect();
        theta.with_values(g)
    }

    /// Mode of the diagonal Gaussian, i.e. the SWA mean.
    pub fn map_params(&self) -> FlatParams {
        self.mu.clone()
    }
}
