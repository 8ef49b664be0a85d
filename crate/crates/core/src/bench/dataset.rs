//! Procedural 8×8 glyph classification set.
//!
//! Eight classes, each symmetric under horizontal flips so that flip
//! augmentation never changes the label: horizontal bar, vertical bar,
//! plus, diagonal cross, ring, checkerboard, double bar and tee. Each
//! sample jitters position (±1 px), rotation (±15°), stroke width and
//! intensity, then adds background noise with std 0.02.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bench::image::clip01;
use crate::math;
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 8;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 8;
pub const BACKGROUND_NOISE: f64 = 0.02;

pub const CLASS_NAMES: [&str; CLASSES] =
    ["hbar", "vbar", "plus", "xcross", "ring", "checker", "double_bar", "tee"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    images: Tensor,
    labels: Vec<usize>,
    seed: u64,
}

impl SyntheticDataset {
    /// `[N, 64]` pixel rows in `[0, 1]`.
    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }
}

/// Whether glyph-local point `(u, v)` lies on the stroke of `class`.
/// Coordinates are in pixels relative to the glyph centre, `v` pointing down.
fn inside(class: usize, u: f64, v: f64, w: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    let extent = 3.0;
    match class {
        0 => av < w && au < extent,
        1 => au < w && av < extent,
        2 => (av < w && au < extent) || (au < w && av < extent),
        3 => {
            let d1 = (u - v).abs() / core::f64::consts::SQRT_2;
            let d2 = (u + v).abs() / core::f64::consts::SQRT_2;
            (d1 < w || d2 < w) && au < extent && av < extent
        }
        4 => {
            let r = math::sqrt(u * u + v * v);
            (r - 2.5).abs() < w
        }
        5 => {
            if au >= 3.0 || av >= 3.0 {
                return false;
            }
            let cu = math::floor((u + 3.0) / 2.0) as i64;
            let cv = math::floor((v + 3.0) / 2.0) as i64;
            (cu + cv) % 2 == 0
        }
        6 => au < extent && ((v - 1.6).abs() < 0.75 * w || (v + 1.6).abs() < 0.75 * w),
        7 => (au < extent && (v + 2.3).abs() < 0.8 * w) || (au < w && v > -3.0 && v < extent),
        _ => unreachable!("class out of range"),
    }
}

fn render(class: usize, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Vec<f64> {
    let angle = rng.random_range(-15.0f64..15.0).to_radians();
    let (dx, dy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let width = rng.random_range(0.7..1.1);
    let ink = rng.random_range(0.75..1.0);
    let (sn, cs) = (math::sin(angle), math::cos(angle));
    let c = IMAGE_SIDE as f64 / 2.0;
    let mut img = Vec::with_capacity(PIXELS);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            // 3×3 supersampling for soft edges
            let mut hits = 0;
            for sy in 0..3 {
                for sx in 0..3 {
                    let px = x as f64 + (sx as f64 + 0.5) / 3.0 - c - dx;
                    let py = y as f64 + (sy as f64 + 0.5) / 3.0 - c - dy;
                    let u = cs * px + sn * py;
                    let v = -sn * px + cs * py;
                    if inside(class, u, v, width) {
                        hits += 1;
                    }
                }
            }
            img.push(ink * hits as f64 / 9.0 + noise.sample(rng));
        }
    }
    clip01(&mut img);
    img
}

/// `n_per_class` samples of each class, interleaved by class.
pub fn make_source_dataset(seed: u64, n_per_class: usize) -> SyntheticDataset {
    assert!(n_per_class >= 1, "n_per_class must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, BACKGROUND_NOISE).expect("valid std");
    let n = n_per_class * CLASSES;
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % CLASSES;
        data.extend(render(class, &mut rng, &noise));
        labels.push(class);
    }
    let images = Tensor::new(alloc::vec![n, PIXELS], data).expect("dataset shape");
    SyntheticDataset { images, labels, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::image::hflip;

    #[test]
    fn deterministic_per_seed() {
        let a = make_source_dataset(42, 3);
        let b = make_source_dataset(42, 3);
        let c = make_source_dataset(43, 3);
        assert_eq!(a, b);
        assert_ne!(a.images(), c.images());
    }

    #[test]
    fn balanced_and_in_range() {
        let d = make_source_dataset(1, 100);
        assert_eq!(d.len(), 800);
        let mut counts = [0; CLASSES];
        d.labels().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().all(|&c| c == 100));
        assert!(d.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn glyph_shapes_are_flip_symmetric() {
        for class in 0..CLASSES {
            let mut img = Vec::new();
            for y in 0..16 {
                for x in 0..16 {
                    let u = (x as f64 - 7.5) / 2.0;
                    let v = (y as f64 - 7.5) / 2.0;
                    img.push(if inside(class, u, v, 0.9) { 1.0 } else { 0.0 });
                }
            }
            assert_eq!(hflip(&img, 16), img, "class {class}");
        }
    }
}
