//! Corruption families with five severity levels.
//!
//! | kind           | severity 1..5                                  |
//! |----------------|------------------------------------------------|
//! | gaussian_noise | std 0.04, 0.08, 0.12, 0.18, 0.26               |
//! | impulse_noise  | fraction 0.01, 0.03, 0.05, 0.09, 0.14          |
//! | box_blur       | kernel 3, 3, 5, 5, 7 with passes 1, 2, 1, 2, 2 |
//! | contrast       | scale 0.75, 0.6, 0.45, 0.3, 0.2 about 0.5      |
//! | pixelate       | block 2, 2, 4, 4, 8                            |
//!
//! Severity 0 is the identity.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::bench::image::{box_blur, clip01, pixelate};
use crate::error::{Error, Result};

const GAUSSIAN_STD: [f64; 5] = [0.04, 0.08, 0.12, 0.18, 0.26];
const IMPULSE_FRACTION: [f64; 5] = [0.01, 0.03, 0.05, 0.09, 0.14];
const BLUR_KERNEL: [usize; 5] = [3, 3, 5, 5, 7];
const BLUR_PASSES: [usize; 5] = [1, 2, 1, 2, 2];
const CONTRAST_SCALE: [f64; 5] = [0.75, 0.6, 0.45, 0.3, 0.2];
const PIXELATE_BLOCK: [usize; 5] = [2, 2, 4, 4, 8];

pub const MAX_SEVERITY: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    BoxBlur,
    Contrast,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::BoxBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    /// Held out for hyperparameter tuning and excluded from headline schedules.
    pub const TUNING: CorruptionKind = CorruptionKind::ImpulseNoise;

    /// The four headline kinds in arrival order (noise, blur, digital).
    pub const HEADLINE: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::BoxBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown { what: "corruption kind", name: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    /// Severity must lie in `1..=5`.
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=MAX_SEVERITY).contains(&severity) {
            return Err(Error::Config(alloc::format!("severity {severity} outside 1..=5")));
        }
        Ok(Self { kind, severity })
    }

    /// Severity 0: leaves images untouched.
    pub fn identity(kind: CorruptionKind) -> Self {
        Self { kind, severity: 0 }
    }

    pub fn label(&self) -> String {
        alloc::format!("{}@{}", self.kind, self.severity)
    }
}

/// Corrupts one image; output is clipped to `[0, 1]`.
pub fn apply_corruption<R: Rng + ?Sized>(img: &[f64], side: usize, spec: CorruptionSpec, rng: &mut R) -> Vec<f64> {
    if spec.severity == 0 {
        return img.to_vec();
    }
    let s = usize::from(spec.severity.min(MAX_SEVERITY)) - 1;
    let mut out = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, GAUSSIAN_STD[s]).expect("valid std");
            img.iter().map(|&v| v + normal.sample(rng)).collect()
        }
        CorruptionKind::ImpulseNoise => img
            .iter()
            .map(|&v| {
                if rng.random_bool(IMPULSE_FRACTION[s]) {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
            .collect(),
        CorruptionKind::BoxBlur => {
            let mut cur = img.to_vec();
            for _ in 0..BLUR_PASSES[s] {
                cur = box_blur(&cur, side, BLUR_KERNEL[s]);
            }
            cur
        }
        CorruptionKind::Contrast => img.iter().map(|&v| 0.5 + CONTRAST_SCALE[s] * (v - 0.5)).collect(),
        CorruptionKind::Pixelate => pixelate(img, side, PIXELATE_BLOCK[s]),
    };
    clip01(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::dataset::{make_source_dataset, IMAGE_SIDE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn severity_zero_is_identity() {
        let d = make_source_dataset(0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in CorruptionKind::ALL {
            let out = apply_corruption(d.image(3), IMAGE_SIDE, CorruptionSpec::identity(kind), &mut rng);
            assert_eq!(out, d.image(3));
        }
    }

    #[test]
    fn contrast_fixed_point() {
        let img = [0.5; 64];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = CorruptionSpec::new(CorruptionKind::Contrast, 5).unwrap();
        assert_eq!(apply_corruption(&img, 8, spec, &mut rng), img.to_vec());
    }

    #[test]
    fn gaussian_noise_moment() {
        // mid-grey keeps clipping negligible at std 0.26 (|z| < 1.9 needed)
        let img = [0.5; 10_000];
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let normal = Normal::new(0.0, GAUSSIAN_STD[4]).unwrap();
        let raw: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let m = raw.iter().sum::<f64>() / 1e4;
        let sd = (raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 1e4).sqrt();
        assert!((sd - 0.26).abs() < 0.05 * 0.26, "unclipped std {sd}");
        // the corruption consumes the same stream the same way
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let out = apply_corruption(&img, 100, spec, &mut rng);
        for (o, r) in out.iter().zip(&raw) {
            assert_eq!(*o, (0.5 + r).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn deterministic_given_rng_state() {
        let d = make_source_dataset(5, 1);
        for kind in CorruptionKind::ALL {
            let spec = CorruptionSpec::new(kind, 3).unwrap();
            let a = apply_corruption(d.image(0), 8, spec, &mut ChaCha8Rng::seed_from_u64(4));
            let b = apply_corruption(d.image(0), 8, spec, &mut ChaCha8Rng::seed_from_u64(4));
            assert_eq!(a, b);
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn severity_monotone_distortion() {
        let d = make_source_dataset(9, 125);
        for kind in CorruptionKind::ALL {
            let mut prev = 0.0;
            for sev in 1..=5 {
                let spec = CorruptionSpec::new(kind, sev).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(100 + u64::from(sev));
                let mut total = 0.0;
                for i in 0..d.len() {
                    let img = d.image(i);
                    let out = apply_corruption(img, 8, spec, &mut rng);
                    total += img.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                }
                let mean = total / d.len() as f64;
                assert!(mean >= prev - 1e-12, "{kind} severity {sev}: {mean} < {prev}");
                prev = mean;
            }
        }
    }

    #[test]
    fn parse_names() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
        }
        assert!(matches!("fog".parse::<CorruptionKind>(), Err(Error::Unknown { .. })));
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 6).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 0).is_err());
    }
}
