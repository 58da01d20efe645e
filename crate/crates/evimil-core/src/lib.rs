//! Evidential multi-instance learning library.
//!
//! Layers, bottom to top:
//! - [`numcore`]: dense f64 arrays, special functions, reverse-mode tape;
//! - [`dirichlet`]: closed-form uncertainty measures and belief assignment;
//! - [`milmodel`]: encoders, pooling, bag/instance estimators, checkpoints;
//! - [`losses`]: evidential bag and instance objectives;
//! - [`data`]: instance pools, bag synthesis, IDX ingestion, caches;
//! - [`training`]: optimizer, schedules, the training loop;
//! - [`eval`]: discrimination and uncertainty metrics, report export.

pub mod data;
pub mod dirichlet;
pub mod error;
pub mod eval;
pub mod losses;
pub mod milmodel;
pub mod numcore;
pub mod training;

pub use data::{BagDataset, BagSample, InstancePool, Split, TrainBag};
pub use dirichlet::{BeliefAssignment, ConfidenceKind, DirichletParams, UncertaintyReport};
pub use error::{Error, Result};
pub use eval::{EvalReport, Histogram, Level};
pub use losses::{InstanceWeights, LossConfig, Strategy};
pub use milmodel::{Architecture, MilParams, Pooling, ResidualForm};
pub use numcore::{Array, Tape, Var};
pub use training::{TrainConfig, TrainHistory};
