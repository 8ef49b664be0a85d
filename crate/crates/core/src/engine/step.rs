//! One adaptation step per incoming batch.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{softmax, BnMode, Graph};
use crate::bench::UnlabeledBatch;
use crate::engine::augment::augment;
use crate::engine::config::{Method, PetalConfig, PredictFrom, Restore};
use crate::engine::restore::{fim_diag, fim_mask, restore_in_place, stochastic_mask, RestoreMask};
use crate::engine::state::{ema_update, AdaptState};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::model::{FlatParams, MlpClassifier};
use crate::swag::SwagDiagPosterior;
use crate::tensor::Tensor;

/// Outcome of one step. `predictions` are the online outputs for the batch,
/// computed before any update that uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub predictions: Tensor,
    pub restored: usize,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub probs: Tensor,
    /// Rows that fell below the confidence threshold and were averaged.
    pub augmented: usize,
}

/// Loss value together with its gradient over every trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct PetalLoss {
    pub loss: f64,
    pub grad: FlatParams,
    /// Student softmax from the same forward.
    pub probs: Tensor,
}

fn image_side(model: &MlpClassifier) -> Result<usize> {
    let n = model.input_size();
    let side = (1..=n).find(|s| s * s >= n).unwrap_or(0);
    if side * side != n {
        return Err(Error::Config(alloc::format!("augmentation needs square images, input width is {n}")));
    }
    Ok(side)
}

#[cfg(feature = "std")]
fn teacher_forwards(teacher: &MlpClassifier, inputs: &[Tensor], threads: usize) -> Result<Vec<Tensor>> {
    if threads <= 1 || inputs.len() <= 1 {
        return inputs.iter().map(|x| softmax(&teacher.forward_frozen(x, BnMode::Batch)?)).collect();
    }
    let chunk = inputs.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter().map(|x| softmax(&teacher.forward_frozen(x, BnMode::Batch)?)).collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for h in handles {
            out.extend(h.join().expect("augmentation worker panicked")?);
        }
        Ok(out)
    })
}

#[cfg(not(feature = "std"))]
fn teacher_forwards(teacher: &MlpClassifier, inputs: &[Tensor], _threads: usize) -> Result<Vec<Tensor>> {
    inputs.iter().map(|x| softmax(&teacher.forward_frozen(x, BnMode::Batch)?)).collect()
}

/// Per row: the direct teacher prediction when the source model's top
/// probability reaches `tau`, else the mean teacher prediction over `k_aug`
/// augmented copies of the batch.
///
/// Teacher and source normalize with the batch's own statistics and leave
/// their running estimates alone.
pub fn teacher_pseudo_label(state: &mut AdaptState, x: &Tensor, cfg: &PetalConfig) -> Result<PseudoLabels> {
    let conf: Vec<f64> = softmax(&state.source.forward_frozen(x, BnMode::Batch)?)?
        .rows()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut probs = softmax(&state.teacher.forward_frozen(x, BnMode::Batch)?)?;
    let low: Vec<usize> = (0..conf.len()).filter(|&i| !(conf[i] >= cfg.tau)).collect();
    if low.is_empty() {
        return Ok(PseudoLabels { probs, augmented: 0 });
    }

    let side = image_side(&state.teacher)?;
    let inputs: Vec<Tensor> =
        (0..cfg.k_aug).map(|_| augment(x, side, &cfg.augment, &mut state.augment_rng)).collect();
    let outs = teacher_forwards(&state.teacher, &inputs, state.threads)?;
    let classes = probs.shape()[1];
    let mut mean = vec![0.0; low.len() * classes];
    for out in &outs {
        for (j, &i) in low.iter().enumerate() {
            for (m, p) in mean[j * classes..(j + 1) * classes].iter_mut().zip(out.row(i)) {
                *m += p;
            }
        }
    }
    let k = cfg.k_aug as f64;
    for (j, &i) in low.iter().enumerate() {
        let dst = &mut probs.data_mut()[i * classes..(i + 1) * classes];
        for (d, m) in dst.iter_mut().zip(&mean[j * classes..(j + 1) * classes]) {
            *d = m / k;
        }
    }
    Ok(PseudoLabels { probs, augmented: low.len() })
}

/// `CE(targets, student) − α log q(θ_student)`, the negated objective. The
/// student forward runs in train mode and folds the batch into its running
/// statistics.
pub fn petal_loss(
    student: &mut MlpClassifier,
    x: &Tensor,
    targets: &Tensor,
    posterior: &SwagDiagPosterior,
    alpha: f64,
) -> Result<PetalLoss> {
    if posterior.dim() != student.dim() {
        return Err(Error::Dimension { expected: student.dim(), got: posterior.dim() });
    }
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let fwd = student.forward_on(&mut g, xi, BnMode::Train, true)?;
    let ce = g.soft_cross_entropy(targets, fwd.logits)?;
    let log_q = g.gaussian_log_density(&fwd.params, posterior.mu().values(), posterior.sigma2())?;
    let root = g.combine(ce, 1.0, log_q, -alpha)?;
    let grads = g.backward(root)?;
    Ok(PetalLoss {
        loss: g.value(root).item(),
        grad: student.collect_grads(&g, &fwd, &grads),
        probs: softmax(g.value(fwd.logits))?,
    })
}

fn apply_restore(state: &mut AdaptState, cfg: &PetalConfig, grad: &FlatParams) -> usize {
    let dim = state.student.dim();
    let mask: RestoreMask = match cfg.restore {
        Restore::None => return 0,
        Restore::Stochastic { rho } => stochastic_mask(dim, rho, &mut state.restore_rng),
        Restore::Fim { delta } => fim_mask(&fim_diag(grad), delta),
    };
    restore_in_place(state.student.params_mut(), state.source.params().values(), &mask);
    if cfg.reset_optimizer_state {
        state.optimizer.reset_moments(mask.bits());
    }
    mask.count()
}

/// Pseudo-label, update the student, move the teacher, restore.
pub fn adapt_step(
    state: &mut AdaptState,
    batch: &UnlabeledBatch,
    posterior: &SwagDiagPosterior,
    cfg: &PetalConfig,
) -> Result<StepReport> {
    let x = batch.inputs();
    let labels = teacher_pseudo_label(state, x, cfg)?;
    let loss = petal_loss(&mut state.student, x, &labels.probs, posterior, cfg.alpha)?;
    let predictions = match cfg.predict_from {
        PredictFrom::Teacher => labels.probs,
        PredictFrom::Student => loss.probs,
    };
    state.optimizer.step(state.student.params_mut(), loss.grad.values(), state.trainable.as_deref());
    ema_update(&mut state.teacher, &state.student, cfg.pi)?;
    // the mask is scored on the gradient taken before the update
    let restored = apply_restore(state, cfg, &loss.grad);
    state.t += 1;
    Ok(StepReport { predictions, restored, loss: Some(loss.loss) })
}

/// The mean-teacher cross-entropy update with stochastic restore, written
/// out without the posterior term.
pub fn cotta_step(state: &mut AdaptState, batch: &UnlabeledBatch, cfg: &PetalConfig) -> Result<StepReport> {
    let x = batch.inputs();
    let labels = teacher_pseudo_label(state, x, cfg)?;

    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let fwd = state.student.forward_on(&mut g, xi, BnMode::Train, true)?;
    let ce = g.soft_cross_entropy(&labels.probs, fwd.logits)?;
    let grads = g.backward(ce)?;
    let grad = state.student.collect_grads(&g, &fwd, &grads);
    let predictions = match cfg.predict_from {
        PredictFrom::Teacher => labels.probs,
        PredictFrom::Student => softmax(g.value(fwd.logits))?,
    };

    state.optimizer.step(state.student.params_mut(), grad.values(), state.trainable.as_deref());
    ema_update(&mut state.teacher, &state.student, cfg.pi)?;
    let restored = match cfg.restore {
        Restore::Fim { .. } => return Err(Error::Config("cotta does not use fisher restore".into())),
        _ => apply_restore(state, cfg, &grad),
    };
    state.t += 1;
    Ok(StepReport { predictions, restored, loss: Some(g.value(ce).item()) })
}

fn one_hot_argmax(probs: &Tensor) -> Tensor {
    let classes = probs.shape()[1];
    let mut data = vec![0.0; probs.len()];
    for (i, row) in probs.rows().enumerate() {
        data[i * classes + argmax(row)] = 1.0;
    }
    Tensor::new(probs.shape().to_vec(), data).expect("same shape")
}

/// Source, BN statistic refresh, entropy minimization and hard
/// self-labeling. The gradient methods only move batch-norm affines.
pub fn baseline_step(state: &mut AdaptState, batch: &UnlabeledBatch, cfg: &PetalConfig) -> Result<StepReport> {
    let x = batch.inputs();
    let report = match cfg.method {
        Method::Source => {
            let predictions = softmax(&state.student.forward_frozen(x, BnMode::Eval)?)?;
            StepReport { predictions, restored: 0, loss: None }
        }
        Method::BnAdapt => {
            let predictions = softmax(&state.student.forward(x, BnMode::Train)?)?;
            StepReport { predictions, restored: 0, loss: None }
        }
        Method::Tent | Method::PseudoLabel => {
            let mut g = Graph::new();
            let xi = g.constant(x.clone());
            let fwd = state.student.forward_on(&mut g, xi, BnMode::Train, true)?;
            let predictions = softmax(g.value(fwd.logits))?;
            let root = if cfg.method == Method::Tent {
                g.entropy(fwd.logits)?
            } else {
                g.soft_cross_entropy(&one_hot_argmax(&predictions), fwd.logits)?
            };
            let grads = g.backward(root)?;
            let grad = state.student.collect_grads(&g, &fwd, &grads);
            state.optimizer.step(state.student.params_mut(), grad.values(), state.trainable.as_deref());
            StepReport { predictions, restored: 0, loss: Some(g.value(root).item()) }
        }
        m => return Err(Error::Unknown { what: "baseline method", name: m.name().into() }),
    };
    state.t += 1;
    Ok(report)
}

/// Dispatches on `cfg.method`.
pub fn step(
    state: &mut AdaptState,
    batch: &UnlabeledBatch,
    posterior: &SwagDiagPosterior,
    cfg: &PetalConfig,
) -> Result<StepReport> {
    match cfg.method {
        Method::Petal => adapt_step(state, batch, posterior, cfg),
        Method::Cotta => cotta_step(state, batch, cfg),
        _ => baseline_step(state, batch, cfg),
    }
}
