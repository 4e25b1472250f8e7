//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by the library.
///
/// Domain violations are structured so callers (and the CLI) can print the
/// offending values instead of a generic message.
#[derive(Debug, Error)]
pub enum Error {
    /// A box with non-finite or non-positive extent was constructed or parsed.
    #[error("invalid box (x={x}, y={y}, w={w}, h={h}): {reason}")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64, reason: &'static str },

    /// A detection score fell outside `[0, 1]`.
    #[error("detection score {score} outside [0, 1]")]
    InvalidScore { score: f64 },

    /// Query indices inside a single image's prediction set must be unique.
    #[error("duplicate query index {query_index} in one image's predictions")]
    DuplicateQueryIndex { query_index: u32 },

    /// Feature rows and detection records of a query batch must align.
    #[error("query batch misaligned: {features} feature rows vs {detections} detections")]
    BatchMisaligned { features: usize, detections: usize },

    /// An empty feature map has no mean.
    #[error("feature map is empty")]
    EmptyFeatureMap,

    /// Scale thresholds must satisfy `0 < tau_s < tau_m`.
    #[error("invalid scale thresholds: tau_s={tau_s}, tau_m={tau_m}")]
    InvalidScaleThresholds { tau_s: f64, tau_m: f64 },

    /// Distillation temperature must be strictly positive and finite.
    #[error("invalid temperature {value}")]
    InvalidTemperature { value: f64 },

    /// Teacher and student topologies must share node sets bucket by bucket.
    #[error("topology node mismatch in bucket {bucket}: teacher has {teacher} nodes, student has {student}")]
    TopologyNodeMismatch { bucket: &'static str, teacher: usize, student: usize },

    /// A relation topology needs at least two nodes.
    #[error("degenerate topology in bucket {bucket}: {nodes} node(s)")]
    DegenerateTopology { bucket: &'static str, nodes: usize },

    /// No threshold is known for an old class present in the predictions.
    #[error("no score threshold for class {class_id}")]
    MissingThreshold { class_id: u32 },

    /// Response distillation needs a non-empty old-class set.
    #[error("old class set is empty")]
    EmptyOldClasses,

    /// Teacher and student must expose the same decoder layers.
    #[error("decoder layer mismatch: teacher has {teacher}, student has {student}")]
    LayerMismatch { teacher: usize, student: usize },

    /// Per-layer responses must agree on query count and class count.
    #[error("response shape mismatch at layer {layer}: teacher {teacher:?}, student {student:?}")]
    ResponseShapeMismatch { layer: usize, teacher: (usize, usize), student: (usize, usize) },

    /// Set matching requires at least as many queries as targets.
    #[error("{targets} targets exceed {queries} queries")]
    TooManyTargets { targets: usize, queries: usize },

    /// A class id was not declared in the dataset categories.
    #[error("unknown class id {class_id}")]
    UnknownClass { class_id: u32 },

    /// A schedule references a category name the dataset does not define.
    #[error("unknown category name '{name}'")]
    UnknownCategory { name: String },

    /// Task schedules must consist of non-empty, pairwise disjoint stages.
    #[error("invalid task schedule: {reason}")]
    InvalidSchedule { reason: String },

    /// A stage index was out of range for the schedule.
    #[error("stage {stage} out of range: schedule has {stages} stage(s)")]
    StageOutOfRange { stage: usize, stages: usize },

    /// Crowd ground-truth regions are not supported by this evaluator.
    #[error("annotation {ann_id} has iscrowd=1; crowd regions are not supported")]
    CrowdAnnotation { ann_id: u64 },

    /// An annotation references an image absent from the image list.
    #[error("annotation {ann_id} references unknown image {image_id}")]
    UnknownImage { ann_id: u64, image_id: u64 },

    /// A detection references an image absent from the ground truth.
    #[error("detection references unknown image {image_id}")]
    DetectionUnknownImage { image_id: u64 },

    /// Text record (detection stream, schedule file) failed to parse.
    #[error("parse error at line {line}: {message}")]
    ParseRecord { line: usize, message: String },

    /// Configuration value violated the documented schema.
    #[error("config error: {message}")]
    Config { message: String },

    /// World generation parameters are inconsistent.
    #[error("world config error: {message}")]
    World { message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("TOML error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
