//! Online batch stream over a schedule.
//!
//! Inputs and labels travel in separate types: the adaptation engine only
//! ever receives an [`UnlabeledBatch`], the labels stay with the metric
//! bookkeeping.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bench::corruption::apply_corruption;
use crate::bench::dataset::{SyntheticDataset, IMAGE_SIDE, PIXELS};
use crate::bench::schedule::StreamSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Corrupted test inputs, `[B, 64]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledBatch(Tensor);

impl UnlabeledBatch {
    pub fn new(inputs: Tensor) -> Self {
        Self(inputs)
    }

    pub fn inputs(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ground truth for scoring only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamItem {
    pub batch: UnlabeledBatch,
    pub labels: HiddenLabels,
    pub segment: usize,
}

pub struct StreamBatches<'a, R> {
    schedule: &'a StreamSchedule,
    dataset: &'a SyntheticDataset,
    rng: R,
    segment: usize,
    emitted_in_segment: usize,
    order: Vec<usize>,
    cursor: usize,
}

/// Batches for every segment in order. Each segment reshuffles the dataset
/// and draws without replacement, reshuffling only if it runs out.
pub fn stream_batches<'a, R: Rng>(
    schedule: &'a StreamSchedule,
    dataset: &'a SyntheticDataset,
    rng: R,
) -> Result<StreamBatches<'a, R>> {
    if schedule.batch_size > dataset.len() {
        return Err(Error::Config(alloc::format!(
            "batch size {} exceeds dataset size {}",
            schedule.batch_size,
            dataset.len()
        )));
    }
    Ok(StreamBatches {
        schedule,
        dataset,
        rng,
        segment: 0,
        emitted_in_segment: 0,
        order: (0..dataset.len()).collect(),
        cursor: usize::MAX,
    })
}

impl<R: Rng> StreamBatches<'_, R> {
    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }
}

impl<R: Rng> Iterator for StreamBatches<'_, R> {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        while self.segment < self.schedule.segments.len()
            && self.emitted_in_segment >= self.schedule.segments[self.segment].batches
        {
            self.segment += 1;
            self.emitted_in_segment = 0;
            self.cursor = usize::MAX;
        }
        let seg = self.schedule.segments.get(self.segment)?;
        let bs = self.schedule.batch_size;
        if self.cursor == usize::MAX || self.cursor + bs > self.order.len() {
            self.reshuffle();
        }
        let idx = self.order[self.cursor..self.cursor + bs].to_vec();
        self.cursor += bs;
        self.emitted_in_segment += 1;
        let mut data = Vec::with_capacity(bs * PIXELS);
        let mut labels = Vec::with_capacity(bs);
        for &i in &idx {
            data.extend(apply_corruption(self.dataset.image(i), IMAGE_SIDE, seg.spec, &mut self.rng));
            labels.push(self.dataset.labels()[i]);
        }
        let inputs = Tensor::new(alloc::vec![bs, PIXELS], data).expect("batch shape");
        Some(StreamItem { batch: UnlabeledBatch(inputs), labels: HiddenLabels(labels), segment: self.segment })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corruption::{CorruptionKind, CorruptionSpec};
    use crate::bench::dataset::make_source_dataset;
    use crate::bench::schedule::Segment;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_segments(sev: u8) -> StreamSchedule {
        let spec = |k| if sev == 0 { CorruptionSpec::identity(k) } else { CorruptionSpec::new(k, sev).unwrap() };
        StreamSchedule::new(
            alloc::vec![
                Segment { spec: spec(CorruptionKind::Contrast), batches: 3 },
                Segment { spec: spec(CorruptionKind::GaussianNoise), batches: 3 },
            ],
            5,
        )
        .unwrap()
    }

    #[test]
    fn segment_ids_and_count() {
        let d = make_source_dataset(0, 2);
        let s = two_segments(3);
        let ids: Vec<usize> = stream_batches(&s, &d, ChaCha8Rng::seed_from_u64(1)).unwrap().map(|b| b.segment).collect();
        assert_eq!(ids, [0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn identity_severity_yields_clean_samples() {
        let d = make_source_dataset(0, 2);
        let s = two_segments(0);
        for item in stream_batches(&s, &d, ChaCha8Rng::seed_from_u64(2)).unwrap() {
            for (row, &label) in item.batch.inputs().rows().zip(item.labels.as_slice()) {
                let found = (0..d.len()).any(|i| d.image(i) == row && d.labels()[i] == label);
                assert!(found);
            }
        }
    }

    #[test]
    fn no_repeats_within_a_segment_pass() {
        let d = make_source_dataset(0, 2);
        let s = StreamSchedule::new(
            alloc::vec![Segment { spec: CorruptionSpec::identity(CorruptionKind::Contrast), batches: 4 }],
            4,
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = stream_batches(&s, &d, ChaCha8Rng::seed_from_u64(3))
            .unwrap()
            .flat_map(|b| b.batch.inputs().rows().map(|r| r.to_vec()).collect::<Vec<_>>())
            .collect();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i], rows[j]);
            }
        }
    }

    #[test]
    fn deterministic_stream() {
        let d = make_source_dataset(0, 2);
        let s = two_segments(4);
        let a: Vec<_> = stream_batches(&s, &d, ChaCha8Rng::seed_from_u64(9)).unwrap().collect();
        let b: Vec<_> = stream_batches(&s, &d, ChaCha8Rng::seed_from_u64(9)).unwrap().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_batch_rejected() {
        let d = make_source_dataset(0, 1);
        let s = StreamSchedule::new(
            alloc::vec![Segment { spec: CorruptionSpec::identity(CorruptionKind::Contrast), batches: 1 }],
            9,
        )
        .unwrap();
        assert!(stream_batches(&s, &d, ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
