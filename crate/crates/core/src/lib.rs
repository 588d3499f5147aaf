//! Frequency-aware super-resolution of gridded scalar fields: a small
//! reverse-mode tensor core, 2D Fourier filtering, ViSIR/ViFOR models and
//! their training loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod benchmark;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod ndtensor;
pub mod spectral;
pub mod training;

pub use data::{Dataset, DatasetMode, DatasetSpec, GridField, SRPair, VariableTag};
pub use error::{Error, Result};
pub use metrics::MetricTriple;
pub use models::{Arch, Model, ModelConfig};
pub use ndtensor::{Graph, Tensor, Var};
pub use spectral::{BandSpectrum, ComplexGrid, FreqMask, MaskKind};
pub use training::{LossWeights, TrainConfig, TrainReport};
