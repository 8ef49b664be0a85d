//! Small helpers on square single-channel images stored row-major.

use alloc::vec::Vec;

use crate::math;

pub fn clip01(img: &mut [f64]) {
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// One pass of a `k×k` box filter with edge replication.
pub fn box_blur(img: &[f64], side: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let s = side as isize;
    let norm = (k * k) as f64;
    let mut out = Vec::with_capacity(img.len());
    for y in 0..s {
        for x in 0..s {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y + dy).clamp(0, s - 1) as usize;
                    let xx = (x + dx).clamp(0, s - 1) as usize;
                    acc += img[yy * side + xx];
                }
            }
            out.push(acc / norm);
        }
    }
    out
}

/// Bilinear lookup with edge replication.
pub fn sample_bilinear(img: &[f64], side: usize, x: f64, y: f64) -> f64 {
    let max = (side - 1) as f64;
    let x = x.clamp(0.0, max);
    let y = y.clamp(0.0, max);
    let x0 = math::floor(x) as usize;
    let y0 = math::floor(y) as usize;
    let x1 = (x0 + 1).min(side - 1);
    let y1 = (y0 + 1).min(side - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img[y0 * side + x0] * (1.0 - fx) + img[y0 * side + x1] * fx;
    let bottom = img[y1 * side + x0] * (1.0 - fx) + img[y1 * side + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotation by `angle` radians about the image centre followed by a
/// translation of `(dx, dy)` pixels.
pub fn affine(img: &[f64], side: usize, angle: f64, dx: f64, dy: f64) -> Vec<f64> {
    let c = (side as f64 - 1.0) / 2.0;
    let (sn, cs) = (math::sin(angle), math::cos(angle));
    let mut out = Vec::with_capacity(img.len());
    for y in 0..side {
        for x in 0..side {
            // inverse map from output to source coordinates
            let ux = x as f64 - c - dx;
            let uy = y as f64 - c - dy;
            let sx = cs * ux + sn * uy + c;
            let sy = -sn * ux + cs * uy + c;
            out.push(sample_bilinear(img, side, sx, sy));
        }
    }
    out
}

pub fn hflip(img: &[f64], side: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.len());
    for row in img.chunks_exact(side) {
        out.extend(row.iter().rev());
    }
    out
}

/// Averages `block×block` tiles and writes the mean back over each tile.
pub fn pixelate(img: &[f64], side: usize, block: usize) -> Vec<f64> {
    let mut out = img.to_vec();
    for by in (0..side).step_by(block) {
        for bx in (0..side).step_by(block) {
            let ys = by..(by + block).min(side);
            let xs = bx..(bx + block).min(side);
            let n = (ys.len() * xs.len()) as f64;
            let mean: f64 = ys.clone().flat_map(|y| xs.clone().map(move |x| (y, x))).map(|(y, x)| img[y * side + x]).sum::<f64>() / n;
            for y in ys.clone() {
                for x in xs.clone() {
                    out[y * side + x] = mean;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_blur_preserves_constant() {
        let img = [0.3; 16];
        assert!(box_blur(&img, 4, 3).iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn identity_affine() {
        let img: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let out = affine(&img, 4, 0.0, 0.0, 0.0);
        for (a, b) in out.iter().zip(&img) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hflip_is_involution() {
        let img: Vec<f64> = (0..9).map(f64::from).collect();
        assert_eq!(hflip(&hflip(&img, 3), 3), img);
        assert_eq!(&hflip(&img, 3)[..3], &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn pixelate_blocks() {
        let img: Vec<f64> = (0..16).map(f64::from).collect();
        let out = pixelate(&img, 4, 2);
        assert_eq!(out[0], 2.5);
        assert_eq!(out[5], 2.5);
        assert_eq!(out[15], 12.5);
        assert_eq!(pixelate(&img, 4, 1), img);
    }
}
