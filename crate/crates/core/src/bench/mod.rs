//! Seeded synthetic source data, corruption families and stream schedules.

pub mod corruption;
pub mod dataset;
pub mod image;
pub mod schedule;
pub mod stream;

pub use corruption::{apply_corruption, CorruptionKind, CorruptionSpec};
pub use dataset::{make_source_dataset, SyntheticDataset, CLASSES, IMAGE_SIDE, PIXELS};
pub use schedule::{build_schedule, ScheduleMode, ScheduleSpec, Segment, StreamSchedule};
pub use stream::{stream_batches, HiddenLabels, StreamItem, UnlabeledBatch};
