//! Incremental object detection toolkit.
//!
//! The crate covers the training-side machinery a two-stage incremental
//! detector needs when classes arrive in disjoint tasks and the previous
//! model acts as a frozen teacher:
//!
//! * [`geometry`] / [`model`]: boxes, detections, annotations, query batches,
//!   and the line-oriented detection stream format.
//! * [`scale`]: Small / Medium / Large bucketing of queries by box area.
//! * [`topology`]: scale-bucketed prototype topologies and the relational
//!   distillation loss between teacher and student.
//! * [`pseudo`]: score banks, exact 1-D 2-means thresholding, and pseudo-label
//!   generation from teacher detections.
//! * [`response`]: confidence-weighted response distillation over decoder
//!   layers (classification KL plus box regression).
//! * [`setloss`]: Hungarian set matching and the detection loss.
//! * [`metrics`]: COCO-protocol mAP evaluation and forgetting deltas.
//! * [`coco`] / [`dataset`]: COCO JSON I/O, task schedules, incremental
//!   splits, and co-occurrence statistics.
//! * [`sim`]: a desk-scale synthetic world and training loop that exercises
//!   every loss end to end and reproduces the ablation ordering.
//! * [`gradcheck`]: finite-difference verification of every analytic
//!   gradient.
//! * [`config`]: the TOML run configuration shared by library and CLI.
//!
//! All numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`, which is what the simulator and CLI
//! use.

pub mod coco;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod pseudo;
pub mod response;
pub mod scalar;
pub mod scale;
pub mod setloss;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
pub use scalar::Real;
pub use scale::{ScaleBucket, ScalePartition};

/// Concrete `f64` aliases for the generic core types.
pub type BBox = geometry::BBox<f64>;
pub type CenterBox = geometry::CenterBox<f64>;
pub type Detection = model::Detection<f64>;
pub type Annotation = model::Annotation<f64>;
pub type QueryBatch = model::QueryBatch<f64>;
pub type FeatureMap = model::FeatureMap<f64>;
pub type DetRecord = model::DetRecord<f64>;
pub type ScaleConfig = scale::ScaleConfig<f64>;
