//! Supervised source training with SWAG iterate collection.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BnMode, Graph};
use crate::bench::SyntheticDataset;
use crate::error::{Error, Result};
use crate::model::{validate_sizes, MlpClassifier, DEFAULT_SIZES};
use crate::optim::Sgd;
use crate::swag::{SwagBuilder, SwagDiagPosterior};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub sizes: Vec<usize>,
    pub init_seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// One iterate per epoch is collected over this many final epochs.
    pub swag_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sizes: DEFAULT_SIZES.to_vec(),
            init_seed: 0,
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 64,
            swag_epochs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sizes(&self.sizes)?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(alloc::format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(alloc::format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("training batch size must be at least 2".into()));
        }
        if self.swag_epochs == 0 {
            return Err(Error::Config("swag_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSource {
    /// Weights at the posterior mean, batch-norm buffers recalibrated on the
    /// training set.
    pub model: MlpClassifier,
    pub posterior: SwagDiagPosterior,
    /// Mean training cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data).expect("one-hot shape")
}

/// Momentum SGD on cross-entropy. Batches are reshuffled every epoch; a
/// trailing batch with fewer than 2 rows is dropped.
pub fn train_source(cfg: &TrainConfig, data: &SyntheticDataset) -> Result<TrainedSource> {
    cfg.validate()?;
    let mut model = MlpClassifier::init(cfg.init_seed, &cfg.sizes)?;
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= model.classes()) {
        return Err(Error::Config(alloc::format!("label {bad} out of range for {} classes", model.classes())));
    }
    let mut opt = Sgd::new(model.dim(), cfg.lr, cfg.momentum);
    let mut swag = SwagBuilder::new(model.layout().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let x = data.images().select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let mut g = Graph::new();
            let xi = g.constant(x);
            let fwd = model.forward_on(&mut g, xi, BnMode::Train, true)?;
            let ce = g.soft_cross_entropy(&one_hot(&labels, model.classes()), fwd.logits)?;
            let grads = g.backward(ce)?;
            let grad = model.collect_grads(&g, &fwd, &grads);
            opt.step(model.params_mut(), grad.values(), None);
            total += g.value(ce).item() * idx.len() as f64;
            seen += idx.len();
        }
        epoch_losses.push(total / seen.max(1) as f64);
        if epoch + cfg.swag_epochs >= cfg.epochs {
            swag.collect(model.params())?;
        }
    }

    let posterior = swag.finish()?;
    model.load(&posterior.map_params())?;
    model.calibrate_running_stats(data.images())?;
    Ok(TrainedSource { model, posterior, epoch_losses })
}
