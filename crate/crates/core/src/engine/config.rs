use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use crate::engine::augment::AugmentParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    Petal,
    Cotta,
    Tent,
    BnAdapt,
    PseudoLabel,
    Source,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Petal => "petal",
            Method::Cotta => "cotta",
            Method::Tent => "tent",
            Method::BnAdapt => "bn_adapt",
            Method::PseudoLabel => "pseudo_label",
            Method::Source => "source",
        }
    }

    pub fn is_baseline(self) -> bool {
        !matches!(self, Method::Petal | Method::Cotta)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Petal, Method::Cotta, Method::Tent, Method::BnAdapt, Method::PseudoLabel, Method::Source]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Unknown { what: "method", name: s.to_string() })
    }
}

/// Which parameters get reset to the source weights after each update.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum Restore {
    None,
    /// i.i.d. Bernoulli(`rho`) mask.
    Stochastic { rho: f64 },
    /// The `floor(delta * D)` parameters with the smallest squared gradient.
    Fim { delta: f64 },
}

impl Restore {
    pub fn name(self) -> &'static str {
        match self {
            Restore::None => "none",
            Restore::Stochastic { .. } => "stochastic",
            Restore::Fim { .. } => "fim",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerChoice {
    Adam,
    /// Plain gradient steps, as written in the update line of the algorithm.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PredictFrom {
    /// The gated teacher pseudo-labels.
    Teacher,
    /// The student's own pre-update softmax.
    Student,
}

impl FromStr for PredictFrom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(PredictFrom::Teacher),
            "student" => Ok(PredictFrom::Student),
            _ => Err(Error::Unknown { what: "prediction source", name: s.to_string() }),
        }
    }
}

/// Hyperparameters of one adaptation run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PetalConfig {
    pub method: Method,
    /// Number of augmentations averaged for low-confidence inputs.
    pub k_aug: usize,
    /// Source-confidence threshold; at or above it the direct teacher
    /// prediction is used.
    pub tau: f64,
    /// Weight of `log q(θ)`, the reciprocal of the cross-entropy weight.
    pub alpha: f64,
    /// Teacher EMA smoothing factor.
    pub pi: f64,
    /// Learning rate.
    pub eta: f64,
    pub restore: Restore,
    pub optimizer: OptimizerChoice,
    pub predict_from: PredictFrom,
    /// Zero the optimizer moments of restored coordinates.
    pub reset_optimizer_state: bool,
    /// Reset TENT to the source model at every segment boundary. Uses the
    /// domain-change signal, so results are oracle-assisted.
    pub tent_online: bool,
    pub augment: AugmentParams,
}

impl Default for PetalConfig {
    fn default() -> Self {
        Self {
            method: Method::Petal,
            k_aug: 32,
            tau: 0.72,
            alpha: 1e-9,
            pi: 0.999,
            eta: 1e-3,
            restore: Restore::Fim { delta: 0.03 },
            optimizer: OptimizerChoice::Adam,
            predict_from: PredictFrom::Teacher,
            reset_optimizer_state: false,
            tent_online: false,
            augment: AugmentParams::default(),
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(alloc::format!("{name} = {v} outside [0, 1]")))
    }
}

impl PetalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_aug == 0 {
            return Err(Error::Config("k_aug must be at least 1".into()));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(alloc::format!("tau = {} must be a finite nonnegative number", self.tau)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(alloc::format!("alpha = {} must be finite and nonnegative", self.alpha)));
        }
        unit("pi", self.pi)?;
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(alloc::format!("eta = {} must be finite and nonnegative", self.eta)));
        }
        match self.restore {
            Restore::None => {}
            Restore::Stochastic { rho } => unit("rho", rho)?,
            Restore::Fim { delta } => unit("delta", delta)?,
        }
        if self.method == Method::Cotta && matches!(self.restore, Restore::Fim { .. }) {
            return Err(Error::Config("cotta restores stochastically; use petal for fim restore".into()));
        }
        self.augment.validate()
    }
}
