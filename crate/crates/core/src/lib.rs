//! Per-example prototypicality metrics for labeled datasets.
//!
//! Five independent scores (adversarial distance, retraining divergence,
//! ensemble agreement, ensemble confidence, privacy tolerance) are computed
//! for every example and unified as percentiles where 100 means most
//! well-represented. The [`analysis`] module builds on the resulting
//! [`ScoreTable`]: correlations, combined metrics, extraction of memorized
//! exceptions / uncommon submodes / canonical prototypes, and curriculum and
//! robustness experiments.

mod error;
mod fingerprint;

pub mod analysis;
pub mod attacks;
pub mod data;
pub mod dp;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
pub use fingerprint::{fingerprint, fingerprint_debug};

pub use attacks::{adv_distance, AdversarialResult, AttackConfig, Norm};
pub use data::{DatasetSplit, GenConfig, LabeledDataset, Planted};
pub use dp::{build_privacy_ladder, epsilon_of, DpConfig, PrivacyLadder, PrivacyLevel};
pub use metrics::{Ensemble, EnsembleConfig, Metric, Orientation, ScoreColumn, ScoreTable};
pub use nn::{ModelCheckpoint, ModelSpec, ProbVector, TrainConfig};
pub use rng::RngStream;
pub use pipeline::{score_all, PipelineConfig, ScoreArtifacts};
