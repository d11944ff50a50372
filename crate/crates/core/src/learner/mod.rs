//! Trainable weight-map fusion network and the losses that distill the
//! oracle's per-pair optima into it.

mod loss;
mod net;
mod train;

pub use loss::{gradient_preservation, loss_supervised, loss_unsupervised, ssim_with_grad};
pub use net::{net_load, net_store, ForwardTrace, FusionNet, LAYERS, PARAM_COUNT};
pub use train::{loss_total, train, TrainSample};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("expected {expected} parameters, found {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("not an AENET1 model file")]
    BadMagic,
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("loss mode {0} needs an oracle optimum for pair '{1}'")]
    MissingOracle(LossMode, String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

/// Which terms enter the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    Unsupervised,
    SemiSupervised,
    Supervised,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [
        LossMode::Unsupervised,
        LossMode::SemiSupervised,
        LossMode::Supervised,
    ];

    /// `(weight of the distillation term, weight of the source term)`.
    pub fn coefficients(self) -> (f64, f64) {
        match self {
            LossMode::Supervised => (1.0, 0.0),
            LossMode::SemiSupervised => (1.0, 0.5),
            LossMode::Unsupervised => (0.0, 1.0),
        }
    }

    pub fn needs_oracle(self) -> bool {
        self != LossMode::Unsupervised
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Unsupervised => "unsupervised",
            LossMode::SemiSupervised => "semi",
            LossMode::Supervised => "supervised",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unsupervised" => Ok(LossMode::Unsupervised),
            "semi" | "semisupervised" | "semi-supervised" => Ok(LossMode::SemiSupervised),
            "supervised" => Ok(LossMode::Supervised),
            other => Err(format!("unknown loss mode '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub crop_size: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 5,
            epochs: 50,
            learning_rate: 1e-5,
            crop_size: 128,
            loss_mode: LossMode::SemiSupervised,
            seed: 42,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    /// `allow_zero_lr` admits the null-update configuration used to check
    /// that training without steps leaves the parameters alone.
    pub fn validate(&self, allow_zero_lr: bool) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.crop_size < 16 {
            return bad("crop_size must be >= 16");
        }
        let lr_ok = if allow_zero_lr {
            self.learning_rate >= 0.0
        } else {
            self.learning_rate > 0.0
        };
        if !lr_ok || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }
}

/// Loss terms for one sample or one epoch mean.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub term_supervised: f64,
    pub term_unsupervised: f64,
    pub epoch: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate(false).is_ok());
        let with = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c
        };
        assert!(with(|c| c.batch_size = 0).validate(false).is_err());
        assert!(with(|c| c.crop_size = 15).validate(false).is_err());
        let c = with(|c| c.learning_rate = 0.0);
        assert!(c.validate(false).is_err());
        assert!(c.validate(true).is_ok());
    }

    #[test]
    fn mode_parsing() {
        for m in LossMode::ALL {
            assert_eq!(m.as_str().parse::<LossMode>().unwrap(), m);
        }
        assert!("both".parse::<LossMode>().is_err());
    }
}
