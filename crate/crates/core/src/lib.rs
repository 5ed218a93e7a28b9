//! Nested recurrent-residual U-Net segmentation on a small reverse-mode
//! tensor engine.
//!
//! The crate is organised bottom-up: [`tensor`] and [`ops`] hold the dense
//! NCHW arithmetic, [`autodiff`] records it for differentiation, [`blocks`]
//! and [`network`] assemble the model from a [`graph::GraphPlan`], and
//! [`trainer`], [`data`], [`inference`] and [`checkpoint`] turn it into a
//! usable segmentation pipeline.

pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod inference;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod param;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{build_plan, ArchitectureConfig, GraphPlan, NodeId, Preset, SkipStyle};
pub use network::{count_parameters, Network, PredictMode};
pub use tensor::{Shape, Tensor};
