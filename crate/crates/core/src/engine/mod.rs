//! Lifelong test-time adaptation: student/teacher self-training with a
//! source-posterior regularizer and parameter restoration, plus the
//! comparison baselines behind the same step interface.

mod augment;
mod config;
mod restore;
mod run;
mod state;
mod step;

pub use augment::{augment, AugmentParams};
pub use config::{Method, OptimizerChoice, PetalConfig, PredictFrom, Restore};
pub use restore::{fim_diag, fim_mask, restore, stochastic_mask, RestoreMask};
pub use run::{evaluate, run_lifelong, BatchRecord, RunReport, SegmentSummary};
pub use state::{ema_update, AdaptState};
pub use step::{adapt_step, baseline_step, cotta_step, petal_loss, step, teacher_pseudo_label, PetalLoss, PseudoLabels, StepReport};
