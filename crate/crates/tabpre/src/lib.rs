//! Pretraining and finetuning for tabular deep learning models.
//!
//! The crate is organized around a small dense autodiff engine (`tensor`,
//! `graph`, `optim`), a typed tabular dataset layer (`data`), corruption
//! samplers (`corrupt`), MLP-family backbones with numeric embeddings
//! (`model`), a registry of pretraining objectives (`objective`), the
//! two-stage train/finetune pipeline (`trainer`), evaluation metrics
//! (`metrics`), a synthetic-data generator with a decodability probe
//! (`synth`), and random-search hyperparameter optimization (`hpo`).

pub mod checkpoint;
pub mod corrupt;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod hpo;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::TabError;
