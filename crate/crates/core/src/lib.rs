//! Grayscale image fusion with a self-improving method library.
//!
//! The pipeline has four layers:
//!
//! * [`fusion`] holds a registry of classical fusion operators that each
//!   produce a candidate for a source pair.
//! * [`metrics`] scores candidates with entropy, gradient, structural,
//!   information-fidelity, naturalness, PSNR and mutual-information indices,
//!   and combines them into the supervised and cross-modal evaluators.
//! * [`oracle`] keeps, per pair, the best candidate seen so far and folds
//!   new methods in without ever lowering the cached score.
//! * [`learner`] distills the cached optima into a small weight-map network.
//!
//! [`synthetic`] generates hermetic test pairs and a pristine corpus.

pub mod fusion;
pub mod image;
pub mod learner;
pub mod metrics;
pub mod oracle;
pub mod synthetic;

pub use image::{GrayImage, ImagePair, Plane, TaskKind};
