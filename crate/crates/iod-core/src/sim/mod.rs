//! Desk-scale incremental-detection simulator.
//!
//! A deterministic synthetic world of query features feeds a linear student
//! head trained with the same losses as the full detector. The harness exists
//! to exercise forgetting and its mitigations end to end at unit-test cost,
//! not to approximate real backbone accuracy.

mod head;
mod train;
mod world;

pub use head::{HeadGrads, HeadOutput, Sgd, StudentHead};
pub use train::{
    eval_dataset, run_experiment, run_mode, student_detections, train_stage, EpochRecord, Mode,
    RunLedger, StageRecord,
};
pub use world::{generate_world, SimImage, SimObject, StageData, World, IMAGE_SIZE};
