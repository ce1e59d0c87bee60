//! Self-supervised knowledge distillation for embedding models.
//!
//! A frozen teacher's output embeddings are the only training signal: a small
//! student encoder plus a mapping head are trained so the projected student
//! embeddings align with the teacher's, under one of five alignment losses.
//! Epoch sampling can be balanced by inverse k-means cluster frequency, and
//! trained students are scored with linear or kNN probes against their
//! teacher.
//!
//! Modules follow the pipeline: [`features`] turns waveforms into log-mel
//! inputs, [`store`] persists id-keyed embedding matrices, [`bds`] builds
//! sampling weights, [`nn`] and [`losses`] implement the differentiable
//! parts, [`trainer`] runs the loop, [`eval`] probes the result, and
//! [`sweep`] ablates the cluster count.

pub mod bds;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod nn;
pub mod ssnd;
pub mod store;
pub mod sweep;
pub mod synth;
pub mod trainer;

pub use config::{AdamConfig, ProbeConfig, TrainConfig};
pub use error::{Error, Result};
pub use eval::{EvalReport, LabeledSplit, Labels};
pub use losses::{ClapVariant, LossKind, LossOutput};
pub use nn::{Activation, Mlp};
pub use store::{EmbeddingSet, PairedDataset};
pub use trainer::{TrainReport, TrainState};
