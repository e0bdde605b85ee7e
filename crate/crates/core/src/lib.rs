//! Robust regression feed-forward networks.
//!
//! Exact backpropagation for fully-connected regression networks, robust
//! residual losses (Huber, Tukey biweight, trimmed squares), sign-based
//! training (Rprop+ and plain sign descent) with breakdown detection, data
//! contamination generators, and a deterministic factorial simulation runner.

pub mod activation;
pub mod config;
pub mod contamination;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod network;
pub mod optimizer;
pub mod report;
pub mod seed;

pub use activation::ActivationKind;
pub use contamination::{ContaminationKind, ContaminationSpec};
pub use datagen::{DataGenSpec, Dataset, Standardizer, Structure};
pub use error::{Error, Result};
pub use experiment::{CellSummary, Depth, ExperimentConfig, RunRecord};
pub use losses::{LossSpec, ResidualLoss};
pub use network::{Architecture, GradientSet, Network};
pub use optimizer::{OptimizerSpec, TrainOutcome, TrainStatus, UpdateRule};
