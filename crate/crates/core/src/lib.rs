//! Dynamic-graph edge-convolution networks for point clouds, with a
//! self-contained reverse-mode autodiff engine, data pipeline, and trainer.
//!
//! The crate is organized bottom-up:
//! - [`scalar`], [`value`]: dense tensors generic over f32/f64.
//! - [`tape`]: reverse-mode autodiff over a fixed op set.
//! - [`params`], [`optim`], [`gradcheck`]: parameter storage, SGD with
//!   momentum and cosine decay, finite-difference gradient verification.
//! - [`graph`]: exact k-nearest-neighbor graphs in feature or coordinate space.
//! - [`layers`], [`dfa`], [`models`]: network building blocks and the
//!   classifier / part- and scene-segmentation architectures.
//! - [`data`]: point-cloud containers, mesh loading and surface sampling,
//!   synthetic shape generation, augmentation, and a binary batch format.
//! - [`train`]: training loop, evaluation metrics, ablation sweeps, reports.

pub mod checkpoint;
pub mod data;
pub mod dfa;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod models;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod suite;
pub mod tape;
pub mod train;
pub mod value;

pub use error::{Error, Result};
pub use params::{ParamEntry, ParamSet};
pub use scalar::{Dtype, Scalar};
pub use tape::{Mode, NodeId, Tape};
pub use value::Value;
