//! The lifelong loop over a stream schedule.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax, BnMode};
use crate::bench::{stream_batches, StreamSchedule, SyntheticDataset};
use crate::engine::config::{Method, PetalConfig};
use crate::engine::state::AdaptState;
use crate::engine::step::step;
use crate::error::{Error, Result};
use crate::metrics::{MetricAccumulator, MetricMeans, MetricTotals};
use crate::model::MlpClassifier;
use crate::swag::SwagDiagPosterior;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchRecord {
    pub step: u64,
    pub segment: usize,
    pub error: f64,
    pub nll: f64,
    pub brier: f64,
    pub loss: Option<f64>,
    pub restored: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SegmentSummary {
    pub index: usize,
    /// Corruption and severity, e.g. `gaussian_noise@5`.
    pub label: String,
    pub batches: usize,
    pub error: f64,
    pub nll: f64,
    pub brier: f64,
    pub restored_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub method: Method,
    pub batches: Vec<BatchRecord>,
    pub segments: Vec<SegmentSummary>,
    /// `None` for an empty schedule.
    pub overall: Option<MetricMeans>,
    pub restored_mean: f64,
}

impl RunReport {
    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// Streams `schedule` over `dataset` through `state`, scoring the online
/// predictions. Segment boundaries are never visible to the methods, except
/// for TENT with `tent_online`, which resets to the source model there.
///
/// Batch sampling and corruption draw from their own rng seeded with
/// `stream_seed`, so every method sees the same inputs.
pub fn run_lifelong(
    state: &mut AdaptState,
    schedule: &StreamSchedule,
    dataset: &SyntheticDataset,
    posterior: &SwagDiagPosterior,
    cfg: &PetalConfig,
    stream_seed: u64,
) -> Result<RunReport> {
    cfg.validate()?;
    let mut acc = MetricAccumulator::new();
    let mut batches = Vec::with_capacity(schedule.total_batches());
    let mut restored_sums = alloc::vec![0usize; schedule.segments.len()];
    let mut current = 0;
    for item in stream_batches(schedule, dataset, ChaCha8Rng::seed_from_u64(stream_seed))? {
        if item.segment != current {
            current = item.segment;
            if cfg.method == Method::Tent && cfg.tent_online {
                state.reset_to_source(cfg);
            }
        }
        let t = state.t;
        let report = step(state, &item.batch, posterior, cfg)
            .map_err(|e| Error::AtStep { step: t, source: alloc::boxed::Box::new(e) })?;
        let means = acc.add_batch(item.segment, &report.predictions, item.labels.as_slice())?;
        restored_sums[item.segment] += report.restored;
        batches.push(BatchRecord {
            step: t,
            segment: item.segment,
            error: means.error,
            nll: means.nll,
            brier: means.brier,
            loss: report.loss,
            restored: report.restored,
        });
    }

    let segments = schedule
        .segments
        .iter()
        .enumerate()
        .zip(acc.segments().iter().chain(core::iter::repeat(&MetricTotals::default())))
        .filter_map(|((i, seg), totals)| {
            let m = totals.means()?;
            Some(SegmentSummary {
                index: i,
                label: seg.spec.label(),
                batches: seg.batches,
                error: m.error,
                nll: m.nll,
                brier: m.brier,
                restored_mean: restored_sums[i] as f64 / seg.batches as f64,
            })
        })
        .collect();
    let restored_mean = if batches.is_empty() {
        0.0
    } else {
        batches.iter().map(|b| b.restored as f64).sum::<f64>() / batches.len() as f64
    };
    Ok(RunReport { method: cfg.method, batches, segments, overall: acc.total().means(), restored_mean })
}

/// Scores `model` on labeled inputs without touching it.
pub fn evaluate(model: &MlpClassifier, x: &Tensor, labels: &[usize], mode: BnMode) -> Result<MetricMeans> {
    let probs = softmax(&model.forward_frozen(x, mode)?)?;
    MetricAccumulator::new().add_batch(0, &probs, labels)
}
