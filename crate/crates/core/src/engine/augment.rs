//! Random test-time augmentations for teacher averaging.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::bench::image::{affine, box_blur, clip01, hflip};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magnitudes of the per-sample augmentation chain: brightness/contrast
/// jitter, affine shift and rotation, optional 3×3 box blur, optional
/// horizontal flip, additive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    pub shift_px: f64,
    pub rotation_deg: f64,
    pub blur_prob: f64,
    pub flip_prob: f64,
    pub noise_std: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            brightness: 0.1,
            contrast: 0.2,
            shift_px: 1.0,
            rotation_deg: 10.0,
            blur_prob: 0.3,
            flip_prob: 0.5,
            noise_std: 0.02,
        }
    }
}

impl AugmentParams {
    /// Every magnitude and probability zero.
    pub fn identity() -> Self {
        Self { brightness: 0.0, contrast: 0.0, shift_px: 0.0, rotation_deg: 0.0, blur_prob: 0.0, flip_prob: 0.0, noise_std: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [self.brightness, self.contrast, self.shift_px, self.rotation_deg, self.noise_std];
        if mags.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::Config("augmentation magnitudes must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.blur_prob) || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, mag: f64) -> f64 {
    if mag > 0.0 {
        rng.random_range(-mag..=mag)
    } else {
        0.0
    }
}

fn augment_image<R: Rng + ?Sized>(img: &[f64], side: usize, p: &AugmentParams, rng: &mut R) -> Vec<f64> {
    let bright = symmetric(rng, p.brightness);
    let contrast = symmetric(rng, p.contrast);
    let mean = img.iter().sum::<f64>() / img.len() as f64;
    let mut out: Vec<f64> = img.iter().map(|&v| v + contrast * (v - mean) + bright).collect();
    clip01(&mut out);

    let angle = symmetric(rng, p.rotation_deg).to_radians();
    let (dx, dy) = (symmetric(rng, p.shift_px), symmetric(rng, p.shift_px));
    if angle != 0.0 || dx != 0.0 || dy != 0.0 {
        out = affine(&out, side, angle, dx, dy);
    }
    if p.blur_prob > 0.0 && rng.random_bool(p.blur_prob) {
        out = box_blur(&out, side, 3);
    }
    if p.flip_prob > 0.0 && rng.random_bool(p.flip_prob) {
        out = hflip(&out, side);
    }
    if p.noise_std > 0.0 {
        let normal = Normal::new(0.0, p.noise_std).expect("valid std");
        out.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    clip01(&mut out);
    out
}

/// Augments every row of a `[B, side*side]` batch independently.
pub fn augment<R: Rng + ?Sized>(x: &Tensor, side: usize, params: &AugmentParams, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(x.len());
    for row in x.rows() {
        data.extend(augment_image(row, side, params, rng));
    }
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}
