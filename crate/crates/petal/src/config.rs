//! Experiment configuration: strict JSON, defaults for every field.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use petal_core::bench::{ScheduleSpec, CLASSES};
use petal_core::engine::{AugmentParams, Method, OptimizerChoice, PetalConfig, PredictFrom, Restore};
use petal_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_seed: u64,
    pub train_per_class: usize,
    pub test_seed: u64,
    pub test_per_class: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { train_seed: 0, train_per_class: 250, test_seed: 1, test_per_class: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RestoreKind {
    None,
    Stochastic,
    Fim,
}

/// Adaptation hyperparameters shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub k_aug: usize,
    pub tau: f64,
    pub alpha: f64,
    pub pi: f64,
    pub eta: f64,
    /// Restore used by the plain `petal` method.
    pub restore: RestoreKind,
    pub delta: f64,
    pub rho: f64,
    pub optimizer: OptimizerChoice,
    pub predict_from: PredictFrom,
    pub reset_optimizer_state: bool,
    pub augment: AugmentParams,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        let p = PetalConfig::default();
        Self {
            k_aug: p.k_aug,
            tau: p.tau,
            alpha: p.alpha,
            pi: p.pi,
            eta: p.eta,
            restore: RestoreKind::Fim,
            delta: 0.03,
            rho: 0.01,
            optimizer: p.optimizer,
            predict_from: p.predict_from,
            reset_optimizer_state: p.reset_optimizer_state,
            augment: p.augment,
        }
    }
}

/// Method names accepted by `adapt`.
pub const METHODS: [&str; 11] = [
    "source",
    "bn_adapt",
    "tent",
    "tent_online",
    "pseudo_label",
    "cotta",
    "petal",
    "petal_fim",
    "petal_sres",
    "petal_none",
    "petal_student",
];

impl AdaptConfig {
    fn restore_of(&self, kind: RestoreKind) -> Restore {
        match kind {
            RestoreKind::None => Restore::None,
            RestoreKind::Stochastic => Restore::Stochastic { rho: self.rho },
            RestoreKind::Fim => Restore::Fim { delta: self.delta },
        }
    }

    /// Engine configuration for one of [`METHODS`].
    pub fn resolve(&self, name: &str) -> anyhow::Result<PetalConfig> {
        let base = PetalConfig {
            method: Method::Petal,
            k_aug: self.k_aug,
            tau: self.tau,
            alpha: self.alpha,
            pi: self.pi,
            eta: self.eta,
            restore: self.restore_of(self.restore),
            optimizer: self.optimizer,
            predict_from: self.predict_from,
            reset_optimizer_state: self.reset_optimizer_state,
            tent_online: false,
            augment: self.augment,
        };
        let cfg = match name {
            "source" | "bn_adapt" | "tent" | "pseudo_label" => {
                PetalConfig { method: name.parse()?, restore: Restore::None, ..base }
            }
            "tent_online" => PetalConfig { method: Method::Tent, restore: Restore::None, tent_online: true, ..base },
            "cotta" => PetalConfig { method: Method::Cotta, restore: self.restore_of(RestoreKind::Stochastic), ..base },
            "petal" => base,
            "petal_fim" => PetalConfig { restore: self.restore_of(RestoreKind::Fim), ..base },
            "petal_sres" => PetalConfig { restore: self.restore_of(RestoreKind::Stochastic), ..base },
            "petal_none" => PetalConfig { restore: Restore::None, ..base },
            "petal_student" => PetalConfig { predict_from: PredictFrom::Student, ..base },
            other => bail!("unknown method {other:?}; expected one of {}", METHODS.join(", ")),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub schedule: ScheduleSpec,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Where `adapt` looks for checkpoints; `None` means `out_dir`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            schedule: ScheduleSpec::default(),
            methods: ["source", "bn_adapt", "tent", "cotta", "petal_fim"].map(String::from).to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            checkpoint_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn checkpoint_dir(&self) -> &Path {
        self.checkpoint_dir.as_deref().unwrap_or(&self.out_dir)
    }

    /// Checks every range and name; nothing runs before this passes.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        if *self.train.sizes.last().unwrap() != CLASSES || self.train.sizes[0] != petal_core::bench::PIXELS {
            bail!(
                "model sizes {:?} must start at {} inputs and end at {} classes",
                self.train.sizes,
                petal_core::bench::PIXELS,
                CLASSES
            );
        }
        if self.dataset.train_per_class == 0 || self.dataset.test_per_class == 0 {
            bail!("dataset sizes must be positive");
        }
        let schedule = self.schedule.build()?;
        let test_len = self.dataset.test_per_class * CLASSES;
        if schedule.batch_size > test_len {
            bail!("batch size {} exceeds the {test_len} test images", schedule.batch_size);
        }
        if self.seeds.is_empty() {
            bail!("seed list is empty");
        }
        if self.methods.is_empty() {
            bail!("method list is empty");
        }
        for m in &self.methods {
            self.adapt.resolve(m).with_context(|| format!("method {m}"))?;
        }
        Ok(())
    }
}
