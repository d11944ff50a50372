//! Quality indices and the combined evaluators built from them.

mod combined;
mod info;
pub mod niqe;
mod structural;
mod vif;

pub use combined::{
    compose_crossmodal, eval_crossmodal, eval_pair_quality, eval_supervised, Evaluator,
    EvaluatorKind, MetricPanel, Normalizer, PairPanel, QualityWeights,
};
pub use info::{entropy, mutual_information};
pub use niqe::{niqe, niqe_fit, NssModel};
pub use structural::{avg_gradient, psnr, ssim, SSIM_C1, SSIM_C2, SSIM_RADIUS, SSIM_SIGMA};
pub use vif::vif;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::image::GrayImage;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("{width}x{height} image admits no {patch}x{patch} patch")]
    ImageTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("corpus yields {found} qualifying patches, need {required}")]
    InsufficientPatches { found: usize, required: usize },
    #[error("feature covariance is singular after regularization")]
    SingularCovariance,
    #[error("invalid NSS model: {0}")]
    InvalidModel(String),
    #[error("invalid quality weights: {0}")]
    InvalidWeights(String),
    #[error("cross-modal evaluation needs an NSS model")]
    MissingModel,
    #[error("i/o failure on {0}: {1}")]
    Io(String, #[source] std::io::Error),
}

impl MetricError {
    pub(crate) fn dims(a: &GrayImage, b: &GrayImage) -> Self {
        MetricError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    En,
    Ag,
    Ssim,
    Vif,
    Niqe,
    Psnr,
    Mi,
}

impl MetricId {
    pub const ALL: [MetricId; 7] = [
        MetricId::En,
        MetricId::Ag,
        MetricId::Ssim,
        MetricId::Vif,
        MetricId::Niqe,
        MetricId::Psnr,
        MetricId::Mi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::En => "EN",
            MetricId::Ag => "AG",
            MetricId::Ssim => "SSIM",
            MetricId::Vif => "VIF",
            MetricId::Niqe => "NIQE",
            MetricId::Psnr => "PSNR",
            MetricId::Mi => "MI",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown metric '{s}'"))
    }
}
