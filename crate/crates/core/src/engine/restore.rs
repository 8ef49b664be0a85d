//! Fisher-diagonal and stochastic restore masks.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::model::FlatParams;

/// Per-parameter flag: `true` means reset to the source value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestoreMask(Vec<bool>);

impl RestoreMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn none(dim: usize) -> Self {
        Self(vec![false; dim])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Diagonal of the outer product `g gᵀ`.
pub fn fim_diag(grad: &FlatParams) -> FlatParams {
    let f = grad.values().iter().map(|g| g * g).collect();
    grad.with_values(f).expect("same dimension")
}

/// Marks exactly `floor(delta * D)` entries: the smallest values of `fim`,
/// ties broken by lower index.
pub fn fim_mask(fim: &FlatParams, delta: f64) -> RestoreMask {
    let d = fim.dim();
    let r = (math::floor(delta * d as f64) as usize).min(d);
    let mut bits = vec![false; d];
    if r == 0 {
        return RestoreMask(bits);
    }
    let f = fim.values();
    let mut idx: Vec<usize> = (0..d).collect();
    let order = |a: &usize, b: &usize| -> Ordering { f[*a].total_cmp(&f[*b]).then(a.cmp(b)) };
    if r < d {
        idx.select_nth_unstable_by(r - 1, order);
    }
    for &i in &idx[..r] {
        bits[i] = true;
    }
    RestoreMask(bits)
}

/// i.i.d. Bernoulli(`rho`) entries.
pub fn stochastic_mask<R: Rng + ?Sized>(dim: usize, rho: f64, rng: &mut R) -> RestoreMask {
    RestoreMask((0..dim).map(|_| rng.random_bool(rho)).collect())
}

/// `m ⊙ θ₀ + (1 − m) ⊙ θ`.
pub fn restore(theta: &FlatParams, theta0: &FlatParams, mask: &RestoreMask) -> Result<FlatParams> {
    theta.check_same_layout(theta0)?;
    if mask.len() != theta.dim() {
        return Err(Error::Dimension { expected: theta.dim(), got: mask.len() });
    }
    let mut out = theta.clone();
    restore_in_place(out.values_mut(), theta0.values(), mask);
    Ok(out)
}

pub(crate) fn restore_in_place(theta: &mut [f64], theta0: &[f64], mask: &RestoreMask) {
    for ((t, &s), &m) in theta.iter_mut().zip(theta0).zip(&mask.0) {
        if m {
            *t = s;
        }
    }
}
