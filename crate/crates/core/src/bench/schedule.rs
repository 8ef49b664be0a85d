//! Ordered (corruption, severity) segments.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::corruption::{CorruptionKind, CorruptionSpec, MAX_SEVERITY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScheduleMode {
    /// Each kind once at the highest severity.
    Continual5,
    /// First kind 5→1, every later kind 1→5→1.
    Gradual,
}

impl ScheduleMode {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleMode::Continual5 => "continual5",
            ScheduleMode::Gradual => "gradual",
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continual5" => Ok(ScheduleMode::Continual5),
            "gradual" => Ok(ScheduleMode::Gradual),
            _ => Err(Error::Unknown { what: "schedule mode", name: s.into() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Segment {
    pub spec: CorruptionSpec,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StreamSchedule {
    pub segments: Vec<Segment>,
    pub batch_size: usize,
}

impl StreamSchedule {
    /// Validates the segment list directly.
    pub fn new(segments: Vec<Segment>, batch_size: usize) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("schedule has no segments".into()));
        }
        if segments.iter().any(|s| s.batches == 0) {
            return Err(Error::Config("every segment needs at least one batch".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self { segments, batch_size })
    }

    /// A schedule with no segments; running it does nothing.
    pub fn empty(batch_size: usize) -> Self {
        Self { segments: Vec::new(), batch_size }
    }

    pub fn total_batches(&self) -> usize {
        self.segments.iter().map(|s| s.batches).sum()
    }

    pub fn pairs(&self) -> Vec<(CorruptionKind, u8)> {
        self.segments.iter().map(|s| (s.spec.kind, s.spec.severity)).collect()
    }
}

/// Serializable description of a schedule; the segments are rebuilt from it.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScheduleSpec {
    pub kinds: Vec<CorruptionKind>,
    pub mode: ScheduleMode,
    /// `None` keeps the listed arrival order.
    pub order_seed: Option<u64>,
    pub batches_per_segment: usize,
    pub batch_size: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kinds: CorruptionKind::HEADLINE.to_vec(),
            mode: ScheduleMode::Continual5,
            order_seed: None,
            batches_per_segment: 25,
            batch_size: 64,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<StreamSchedule> {
        build_schedule(&self.kinds, self.mode, self.batches_per_segment, self.batch_size, self.order_seed)
    }
}

pub fn build_schedule(
    kinds: &[CorruptionKind],
    mode: ScheduleMode,
    batches_per_segment: usize,
    batch_size: usize,
    order_seed: Option<u64>,
) -> Result<StreamSchedule> {
    if kinds.is_empty() {
        return Err(Error::Config("schedule needs at least one corruption kind".into()));
    }
    let mut order = kinds.to_vec();
    if let Some(seed) = order_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut pairs = Vec::new();
    match mode {
        ScheduleMode::Continual5 => pairs.extend(order.iter().map(|&k| (k, MAX_SEVERITY))),
        ScheduleMode::Gradual => {
            for (i, &k) in order.iter().enumerate() {
                if i == 0 {
                    pairs.extend((1..=MAX_SEVERITY).rev().map(|s| (k, s)));
                } else {
                    pairs.extend((1..=MAX_SEVERITY).map(|s| (k, s)));
                    pairs.extend((1..MAX_SEVERITY).rev().map(|s| (k, s)));
                }
            }
        }
    }
    let segments = pairs
        .into_iter()
        .map(|(k, s)| Ok(Segment { spec: CorruptionSpec::new(k, s)?, batches: batches_per_segment }))
        .collect::<Result<Vec<_>>>()?;
    StreamSchedule::new(segments, batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use CorruptionKind::*;

    #[test]
    fn gradual_three_kinds_pattern() {
        let s = build_schedule(&[GaussianNoise, BoxBlur, Contrast], ScheduleMode::Gradual, 1, 4, None).unwrap();
        let sev: Vec<u8> = s.segments.iter().map(|x| x.spec.severity).collect();
        assert_eq!(s.segments.len(), 23);
        assert_eq!(sev, [5, 4, 3, 2, 1, 1, 2, 3, 4, 5, 4, 3, 2, 1, 1, 2, 3, 4, 5, 4, 3, 2, 1]);
        assert!(s.segments[..5].iter().all(|x| x.spec.kind == GaussianNoise));
        assert!(s.segments[5..14].iter().all(|x| x.spec.kind == BoxBlur));
        assert!(s.segments[14..].iter().all(|x| x.spec.kind == Contrast));
    }

    #[test]
    fn gradual_length_formula() {
        for k in 1..=15 {
            let kinds: Vec<_> = (0..k).map(|i| CorruptionKind::ALL[i % 5]).collect();
            let s = build_schedule(&kinds, ScheduleMode::Gradual, 2, 4, Some(3)).unwrap();
            assert_eq!(s.segments.len(), 5 + 9 * (k - 1));
        }
        let fifteen: Vec<_> = (0..15).map(|i| CorruptionKind::ALL[i % 5]).collect();
        assert_eq!(build_schedule(&fifteen, ScheduleMode::Gradual, 1, 1, None).unwrap().segments.len(), 131);
    }

    #[test]
    fn gradual_singleton() {
        let s = build_schedule(&[Pixelate], ScheduleMode::Gradual, 1, 4, None).unwrap();
        assert_eq!(s.pairs(), [(Pixelate, 5), (Pixelate, 4), (Pixelate, 3), (Pixelate, 2), (Pixelate, 1)]);
    }

    #[test]
    fn continual_is_each_kind_at_five() {
        let s = build_schedule(&CorruptionKind::HEADLINE, ScheduleMode::Continual5, 25, 64, None).unwrap();
        assert_eq!(s.pairs(), CorruptionKind::HEADLINE.map(|k| (k, 5)));
        assert_eq!(s.total_batches(), 100);
    }

    #[test]
    fn order_seed_permutes_kinds() {
        let a = build_schedule(&CorruptionKind::ALL, ScheduleMode::Continual5, 1, 4, Some(1)).unwrap();
        let b = build_schedule(&CorruptionKind::ALL, ScheduleMode::Continual5, 1, 4, Some(1)).unwrap();
        assert_eq!(a, b);
        let mut kinds: Vec<_> = a.pairs().into_iter().map(|p| p.0).collect();
        kinds.sort();
        assert_eq!(kinds, CorruptionKind::ALL);
    }

    #[test]
    fn empty_kinds_rejected() {
        assert!(build_schedule(&[], ScheduleMode::Gradual, 1, 4, None).is_err());
        assert!(build_schedule(&[Contrast], ScheduleMode::Gradual, 0, 4, None).is_err());
    }
}
