//! Run configuration: a single TOML document with one section per module.
//!
//! Every key has a default matching the reference training setup, unknown
//! keys are rejected, and the fully resolved document can be echoed back out
//! so a run's exact configuration is reproducible from its outputs.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pseudo::CpgConfig;
use crate::response::CrdConfig;
use crate::scale::ScaleConfig;
use crate::setloss::SetLossConfig;
use crate::topology::StdConfig;

/// Environment variable consulted for the default `--config` path.
pub const CONFIG_PATH_ENV: &str = "IOD_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdSection {
    /// Query-area thresholds of the small/medium/large buckets.
    pub tau_s: f64,
    pub tau_m: f64,
    /// Softmax temperature of the relation affinities.
    pub temperature: f64,
    pub include_background_anchor: bool,
    /// Alias of `loss.lambda1`; when set, the two must agree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl Default for StdSection {
    fn default() -> Self {
        Self {
            tau_s: 1024.0,
            tau_m: 9216.0,
            temperature: 1.0,
            include_background_anchor: true,
            weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrdSection {
    pub temperature: f64,
    pub bbox_l1_weight: f64,
    pub bbox_giou_weight: f64,
    /// Rescale the alignment term by temperature squared.
    pub tau_squared: bool,
}

impl Default for CrdSection {
    fn default() -> Self {
        Self { temperature: 1.0, bbox_l1_weight: 5.0, bbox_giou_weight: 2.0, tau_squared: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpgSection {
    pub delta_min: f64,
    pub bank_capacity: usize,
    pub theta_nms: f64,
    pub min_samples: usize,
    pub fallback_threshold: f64,
}

impl Default for CpgSection {
    fn default() -> Self {
        Self {
            delta_min: 0.3,
            bank_capacity: 20000,
            theta_nms: 0.7,
            min_samples: 50,
            fallback_threshold: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// Weight of the topology-distillation term in the total loss.
    pub lambda1: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Loss multiplier of pseudo-label targets.
    pub pseudo_weight: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { lambda1: 3.0, focal_alpha: 0.25, focal_gamma: 2.0, pseudo_weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    /// Classes introduced per task; length is the number of stages.
    pub classes_per_task: Vec<usize>,
    /// World feature width; the last four dimensions carry the box encoding.
    pub feature_dim: usize,
    pub queries_per_image: usize,
    pub objects_per_image: usize,
    pub train_images_per_stage: usize,
    pub eval_images_per_stage: usize,
    /// Half-width of the uniform jitter added to semantic feature means.
    pub noise: f64,
    /// Minimum distance between any two (class, bucket) feature means.
    pub margin: f64,
    /// Fraction of incremental-stage images that contain an unlabeled
    /// old-class instance.
    pub cooccurrence_rate: f64,
    pub seed: u64,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            classes_per_task: vec![3, 3],
            feature_dim: 12,
            queries_per_image: 12,
            objects_per_image: 3,
            train_images_per_stage: 60,
            eval_images_per_stage: 40,
            noise: 0.08,
            margin: 2.0,
            cooccurrence_rate: 0.5,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// One of: finetune, crd, cpg, crd+cpg, full.
    pub mode: String,
    /// Teacher confidence below which a query gets no topology label.
    pub std_label_floor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 15,
            learning_rate: 0.01,
            momentum: 0.0,
            mode: "full".into(),
            std_label_floor: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: String,
    /// Worker threads; 0 means all available.
    pub workers: usize,
}

impl Default for IoSection {
    fn default() -> Self {
        Self { out_dir: "out".into(), workers: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub std: StdSection,
    pub crd: CrdSection,
    pub cpg: CpgSection,
    pub loss: LossSection,
    pub world: WorldSection,
    pub train: TrainSection,
    pub io: IoSection,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    /// Serializes the fully resolved configuration (the effective-config
    /// echo written next to run outputs).
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Schema checks beyond TOML syntax. Returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let fail = |message: String| Err(Error::Config { message });
        if let Some(weight) = self.std.weight {
            if weight != self.loss.lambda1 {
                return fail(format!(
                    "std.weight ({weight}) and loss.lambda1 ({}) disagree; set only loss.lambda1",
                    self.loss.lambda1
                ));
            }
        }
        self.scale_config()?;
        self.cpg_config().validate()?;
        if self.std.temperature <= 0.0 || !self.std.temperature.is_finite() {
            return Err(Error::InvalidTemperature { value: self.std.temperature });
        }
        if self.crd.temperature <= 0.0 || !self.crd.temperature.is_finite() {
            return Err(Error::InvalidTemperature { value: self.crd.temperature });
        }
        if self.loss.lambda1 < 0.0 || !self.loss.lambda1.is_finite() {
            return fail(format!("loss.lambda1 must be finite and non-negative, got {}", self.loss.lambda1));
        }
        if self.loss.pseudo_weight < 0.0 {
            return fail("loss.pseudo_weight must be non-negative".into());
        }

        let w = &self.world;
        if w.classes_per_task.is_empty() || w.classes_per_task.iter().any(|&c| c == 0) {
            return fail("world.classes_per_task needs at least one class per task".into());
        }
        if w.feature_dim < 6 {
            return fail("world.feature_dim must be at least 6 (4 box dimensions + semantics)".into());
        }
        if w.objects_per_image == 0 || w.objects_per_image > w.queries_per_image {
            return fail("world.objects_per_image must be in 1..=queries_per_image".into());
        }
        if w.train_images_per_stage == 0 || w.eval_images_per_stage == 0 {
            return fail("world image counts must be positive".into());
        }
        if !(0.0..=1.0).contains(&w.cooccurrence_rate) {
            return fail("world.cooccurrence_rate must lie in [0, 1]".into());
        }
        if w.noise < 0.0 || w.margin <= 0.0 {
            return fail("world.noise must be >= 0 and world.margin > 0".into());
        }

        let t = &self.train;
        if t.epochs == 0 {
            return fail("train.epochs must be positive".into());
        }
        if t.learning_rate < 0.0 || !(0.0..1.0).contains(&t.momentum) {
            return fail("train.learning_rate must be >= 0 and momentum in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&t.std_label_floor) {
            return fail("train.std_label_floor must lie in [0, 1]".into());
        }
        crate::sim::Mode::parse(&t.mode)?;

        let mut warnings = Vec::new();
        if w.margin <= w.noise {
            warnings.push(format!(
                "world.margin ({}) <= world.noise ({}): classes may be inseparable",
                w.margin, w.noise
            ));
        }
        Ok(warnings)
    }

    pub fn scale_config(&self) -> Result<ScaleConfig<f64>> {
        ScaleConfig::new(self.std.tau_s, self.std.tau_m)
    }

    pub fn std_config(&self) -> StdConfig<f64> {
        StdConfig {
            temperature: self.std.temperature,
            include_background_anchor: self.std.include_background_anchor,
        }
    }

    pub fn crd_config(&self) -> CrdConfig<f64> {
        CrdConfig {
            temperature: self.crd.temperature,
            bbox_l1_weight: self.crd.bbox_l1_weight,
            bbox_giou_weight: self.crd.bbox_giou_weight,
            tau_squared: self.crd.tau_squared,
        }
    }

    pub fn cpg_config(&self) -> CpgConfig<f64> {
        CpgConfig {
            delta_min: self.cpg.delta_min,
            capacity: self.cpg.bank_capacity,
            theta_nms: self.cpg.theta_nms,
            min_samples: self.cpg.min_samples,
            fallback_threshold: self.cpg.fallback_threshold,
        }
    }

    /// Detection-loss coefficients; box weights are shared with the
    /// response-distillation regression term.
    pub fn set_loss_config(&self) -> SetLossConfig<f64> {
        SetLossConfig {
            focal_alpha: self.loss.focal_alpha,
            focal_gamma: self.loss.focal_gamma,
            bbox_l1_weight: self.crd.bbox_l1_weight,
            bbox_giou_weight: self.crd.bbox_giou_weight,
            pseudo_weight: self.loss.pseudo_weight,
        }
    }

    pub fn lambda1(&self) -> f64 {
        self.loss.lambda1
    }
}
