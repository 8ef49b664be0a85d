use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::config::{Method, OptimizerChoice, PetalConfig};
use crate::error::{Error, Result};
use crate::model::{FlatParams, MlpClassifier, ParamFilter};
use crate::optim::{Adam, Optimizer, Sgd};
use crate::swag::SwagDiagPosterior;

const AUGMENT_STREAM: u64 = 1;
const RESTORE_STREAM: u64 = 2;

/// Everything the adaptation loop carries from one batch to the next.
#[derive(Debug, Clone)]
pub struct AdaptState {
    pub student: MlpClassifier,
    pub teacher: MlpClassifier,
    /// The unadapted model, used for gating confidence and for resets.
    pub source: MlpClassifier,
    pub optimizer: Optimizer,
    /// Coordinates the optimizer may move; `None` means all of them.
    pub trainable: Option<Vec<bool>>,
    pub augment_rng: ChaCha8Rng,
    pub restore_rng: ChaCha8Rng,
    pub t: u64,
    /// Worker threads for the augmented teacher forwards.
    pub threads: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl AdaptState {
    /// Student, teacher and source all start at the posterior mean. The
    /// batch-norm buffers come from `model`.
    pub fn new(model: &MlpClassifier, posterior: &SwagDiagPosterior, cfg: &PetalConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut source = model.clone();
        source.load(&posterior.map_params())?;
        let dim = source.dim();
        let optimizer = match cfg.optimizer {
            OptimizerChoice::Adam => Optimizer::Adam(Adam::new(dim, cfg.eta)),
            OptimizerChoice::Sgd => Optimizer::Sgd(Sgd::new(dim, cfg.eta, 0.0)),
        };
        let trainable = match cfg.method {
            Method::Tent | Method::PseudoLabel => Some(ParamFilter::BnAffine.mask(source.layout())),
            _ => None,
        };
        Ok(Self {
            student: source.clone(),
            teacher: source.clone(),
            source,
            optimizer,
            trainable,
            augment_rng: stream(seed, AUGMENT_STREAM),
            restore_rng: stream(seed, RESTORE_STREAM),
            t: 0,
            threads: 1,
        })
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn theta0(&self) -> &FlatParams {
        self.source.params()
    }

    /// Puts student, teacher and optimizer back to their initial values.
    /// The rng streams and the step counter keep going.
    pub fn reset_to_source(&mut self, cfg: &PetalConfig) {
        self.student = self.source.clone();
        self.teacher = self.source.clone();
        let dim = self.source.dim();
        self.optimizer = match cfg.optimizer {
            OptimizerChoice::Adam => Optimizer::Adam(Adam::new(dim, cfg.eta)),
            OptimizerChoice::Sgd => Optimizer::Sgd(Sgd::new(dim, cfg.eta, 0.0)),
        };
    }
}

/// `θ' ← π θ' + (1 − π) θ` over the trainables; batch-norm buffers are
/// copied from the student.
pub fn ema_update(teacher: &mut MlpClassifier, student: &MlpClassifier, pi: f64) -> Result<()> {
    if teacher.sizes() != student.sizes() {
        return Err(Error::Registry(alloc::format!(
            "teacher sizes {:?} differ from student sizes {:?}",
            teacher.sizes(),
            student.sizes()
        )));
    }
    for (tp, &sp) in teacher.params_mut().iter_mut().zip(student.params().values()) {
        *tp = pi * *tp + (1.0 - pi) * sp;
    }
    teacher.running_stats_mut().clone_from_slice(student.running_stats());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (MlpClassifier, MlpClassifier) {
        (MlpClassifier::init(1, &[3, 4, 2]).unwrap(), MlpClassifier::init(2, &[3, 4, 2]).unwrap())
    }

    #[test]
    fn pi_one_keeps_teacher_and_zero_copies_student() {
        let (t0, s) = pair();
        let mut t = t0.clone();
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(t.params(), t0.params());
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(t.params(), s.params());
    }

    #[test]
    fn ema_arithmetic() {
        let (mut t, mut s) = pair();
        t.params_mut().fill(1.0);
        s.params_mut().fill(0.0);
        s.running_stats_mut()[0].mean[0] = 0.25;
        ema_update(&mut t, &s, 0.999).unwrap();
        assert!(t.params().values().iter().all(|&v| v == 0.999));
        assert_eq!(t.running_stats()[0].mean[0], 0.25);
    }

    #[test]
    fn mismatched_registries_are_rejected() {
        let mut t = MlpClassifier::init(1, &[3, 4, 2]).unwrap();
        let s = MlpClassifier::init(1, &[3, 5, 2]).unwrap();
        assert!(matches!(ema_update(&mut t, &s, 0.5), Err(Error::Registry(_))));
    }
}
