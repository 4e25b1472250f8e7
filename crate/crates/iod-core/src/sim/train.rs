//! Incremental training loop over the synthetic world.
//!
//! One mode run trains a single student head through every stage. From the
//! second stage on, the frozen previous-stage student acts as teacher for
//! response distillation, pseudo-label generation, and feature-topology
//! distillation, depending on the mode. Training is fully deterministic: the
//! only randomness is in world generation, and all reductions run in a fixed
//! order.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::{evaluate, EvalConfig, EvalReport};
use crate::model::{DetRecord, Detection};
use crate::pseudo::{
    deduplicate, generate_pseudo_labels, threshold_table, ScoreBanks, ThresholdTable,
};
use crate::response::{crd_total, LayerResponses};
use crate::scale::{partition_queries, ScaleConfig, ScalePartition};
use crate::setloss::{detr_loss, match_targets, total_loss, LossBreakdown};
use crate::sim::head::{sigmoid, HeadOutput, Sgd, StudentHead};
use crate::sim::world::{generate_world, SimImage, World, IMAGE_SIZE};
use crate::topology::{std_loss_and_grad, QueryLabel};
use crate::coco::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage, CocoInfo};

/// Which loss components participate in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Finetune,
    Crd,
    Cpg,
    #[serde(rename = "crd+cpg")]
    CrdCpg,
    Full,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Finetune, Mode::Crd, Mode::Cpg, Mode::CrdCpg, Mode::Full];

    pub fn parse(name: &str) -> Result<Mode> {
        match name.trim() {
            "finetune" => Ok(Mode::Finetune),
            "crd" => Ok(Mode::Crd),
            "cpg" => Ok(Mode::Cpg),
            "crd+cpg" => Ok(Mode::CrdCpg),
            "full" => Ok(Mode::Full),
            other => Err(Error::Config {
                message: format!(
                    "unknown mode '{other}'; expected finetune, crd, cpg, crd+cpg, or full"
                ),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Finetune => "finetune",
            Mode::Crd => "crd",
            Mode::Cpg => "cpg",
            Mode::CrdCpg => "crd+cpg",
            Mode::Full => "full",
        }
    }

    fn uses_crd(self) -> bool {
        matches!(self, Mode::Crd | Mode::CrdCpg | Mode::Full)
    }

    fn uses_cpg(self) -> bool {
        matches!(self, Mode::Cpg | Mode::CrdCpg | Mode::Full)
    }

    fn uses_std(self) -> bool {
        matches!(self, Mode::Full)
    }

    /// Whether this mode needs a frozen teacher at the given stage.
    pub fn needs_teacher(self, stage: usize) -> bool {
        stage > 1 && self != Mode::Finetune
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One epoch's summed losses and pseudo-label activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub loss: LossBreakdown<f64>,
    /// Pseudo annotations added across the epoch, after de-duplication.
    pub pseudo_labels: usize,
    /// Per-class thresholds in effect this epoch, when CPG is active.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdTable<f64>>,
}

/// Evaluation over all eval images seen up to and including the stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub report: EvalReport,
}

/// Complete, replayable record of one mode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub mode: String,
    pub seed: u64,
    pub config: RunConfig,
    pub epochs: Vec<EpochRecord>,
    pub stages: Vec<StageRecord>,
}

impl RunLedger {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn final_report(&self) -> Option<&EvalReport> {
        self.stages.last().map(|s| &s.report)
    }
}

/// Frozen per-image teacher signals, computed once per stage.
struct TeacherView {
    layer: LayerResponses<f64>,
    adapted: Array2<f64>,
    anchor: Array1<f64>,
    /// Per-query argmax detection over old classes, for CPG.
    detections: Vec<Detection<f64>>,
    /// Confidence-gated old-class labels for topology prototypes.
    labels: Vec<Option<QueryLabel<f64>>>,
    /// Scale partition of the teacher's decoded boxes.
    partition: ScalePartition,
}

fn layer_of(out: &HeadOutput) -> LayerResponses<f64> {
    LayerResponses::new(out.logits.clone(), out.boxes.clone(), 0)
        .expect("head output rows are aligned and sigmoid boxes are positive")
}

fn teacher_view(
    teacher: &StudentHead,
    img: &SimImage,
    old: &BTreeSet<u32>,
    label_floor: f64,
    scale: &ScaleConfig<f64>,
) -> TeacherView {
    let out = teacher.forward(&img.features);
    let mut detections = Vec::with_capacity(out.boxes.len());
    let mut labels = Vec::with_capacity(out.boxes.len());
    let mut abs_boxes: Vec<BBox<f64>> = Vec::with_capacity(out.boxes.len());
    for (q, cbox) in out.boxes.iter().enumerate() {
        let bbox = cbox.to_bbox(IMAGE_SIZE, IMAGE_SIZE).expect("sigmoid boxes are valid");
        abs_boxes.push(bbox);
        let best = old
            .iter()
            .map(|&c| (c, sigmoid(out.logits[[q, c as usize]])))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((class_id, score)) = best {
            detections.push(
                Detection::new(bbox, score, class_id, q as u32)
                    .expect("sigmoid scores lie in [0, 1]"),
            );
            labels.push((score >= label_floor).then_some(QueryLabel { class_id, score }));
        } else {
            labels.push(None);
        }
    }
    let partition = partition_queries(&abs_boxes, scale);
    let anchor = out.adapted.mean_axis(Axis(0)).expect("at least one query per image");
    TeacherView { layer: layer_of(&out), adapted: out.adapted, anchor, detections, labels, partition }
}

/// Trains the student in place on one stage's data, appending one record per
/// epoch. The teacher is required whenever the mode distills.
pub fn train_stage(
    student: &mut StudentHead,
    teacher: Option<&StudentHead>,
    world: &World,
    cfg: &RunConfig,
    mode: Mode,
    stage: usize,
    epochs_out: &mut Vec<EpochRecord>,
) -> Result<()> {
    let data = world
        .stages
        .get(stage - 1)
        .ok_or(Error::StageOutOfRange { stage, stages: world.stages.len() })?;
    let old = world.schedule.previous_classes(stage)?;
    let distill = mode.needs_teacher(stage);
    if distill && teacher.is_none() {
        return Err(Error::Config {
            message: format!("mode {mode} requires a frozen teacher at stage {stage}"),
        });
    }

    let scale = cfg.scale_config()?;
    let std_cfg = cfg.std_config();
    let crd_cfg = cfg.crd_config();
    let cpg_cfg = cfg.cpg_config();
    let set_cfg = cfg.set_loss_config();
    let lambda1 = cfg.lambda1();
    let label_floor = cfg.train.std_label_floor;

    let teacher_views: Vec<TeacherView> = if distill {
        let t = teacher.unwrap();
        data.train.iter().map(|img| teacher_view(t, img, &old, label_floor, &scale)).collect()
    } else {
        Vec::new()
    };

    let mut banks = ScoreBanks::new(cpg_cfg.capacity);
    let mut opt = Sgd::new(
        cfg.train.learning_rate,
        cfg.train.momentum,
        world.feature_dim,
        world.num_classes,
    );

    for epoch in 1..=cfg.train.epochs {
        let thresholds = (distill && mode.uses_cpg() && !old.is_empty())
            .then(|| threshold_table(&banks, &old, &cpg_cfg));
        let mut detr_sum = 0.0;
        let mut detr_align = 0.0;
        let mut detr_reg = 0.0;
        let mut std_sum = 0.0;
        let mut crd_sum = 0.0;
        let mut crd_align = 0.0;
        let mut crd_reg = 0.0;
        let mut pseudo_labels = 0usize;

        for (i, img) in data.train.iter().enumerate() {
            let out = student.forward(&img.features);
            let view = distill.then(|| &teacher_views[i]);

            let mut targets = img.annotations.clone();
            if let (Some(view), Some(table)) = (view, thresholds.as_ref()) {
                let pseudo =
                    generate_pseudo_labels(img.image_id, &view.detections, &old, table)?;
                let kept = deduplicate(pseudo, &img.annotations, cpg_cfg.theta_nms);
                pseudo_labels += kept.len();
                targets.extend(kept);
                for det in &view.detections {
                    banks.update(det.class_id, [det.score], cpg_cfg.delta_min);
                }
            }

            let student_layer = layer_of(&out);
            let matching =
                match_targets(&student_layer, &targets, IMAGE_SIZE, IMAGE_SIZE, &set_cfg)?;
            let detr =
                detr_loss(&student_layer, &targets, IMAGE_SIZE, IMAGE_SIZE, &matching, &set_cfg)?;
            detr_sum += detr.loss;
            detr_align += detr.align;
            detr_reg += detr.reg;
            let mut logits_grad = detr.logits_grad;
            let mut boxes_grad = detr.boxes_grad;

            let mut std_grad: Option<Array2<f64>> = None;
            if let Some(view) = view {
                if mode.uses_crd() {
                    let crd = crd_total(
                        std::slice::from_ref(&view.layer),
                        std::slice::from_ref(&student_layer),
                        &old,
                        &crd_cfg,
                    )?;
                    crd_sum += crd.loss;
                    crd_align += crd.align;
                    crd_reg += crd.reg;
                    logits_grad += &crd.layers[0].logits_grad;
                    boxes_grad += &crd.layers[0].boxes_grad;
                }
                if mode.uses_std() {
                    let anchors = std_cfg
                        .include_background_anchor
                        .then(|| out.adapted.mean_axis(Axis(0)).expect("non-empty"));
                    let std_out = std_loss_and_grad(
                        &view.adapted.view(),
                        &out.adapted.view(),
                        &view.labels,
                        &view.partition,
                        std_cfg.include_background_anchor.then_some(&view.anchor),
                        anchors.as_ref(),
                        &std_cfg,
                    )?;
                    std_sum += std_out.loss;
                    if lambda1 != 0.0 {
                        let mut g = std_out.feature_grad;
                        g.mapv_inplace(|v| v * lambda1);
                        std_grad = Some(g);
                    }
                }
            }

            let grads =
                student.backward(&img.features, &out, &logits_grad, &boxes_grad, std_grad.as_ref());
            opt.step(student, &grads);
        }

        let mut loss = total_loss(detr_sum, std_sum, crd_sum, lambda1);
        loss.detr_align = detr_align;
        loss.detr_reg = detr_reg;
        loss.crd_align = crd_align;
        loss.crd_reg = crd_reg;
        epochs_out.push(EpochRecord { stage, epoch, loss, pseudo_labels, thresholds });
    }
    Ok(())
}

/// Ground-truth COCO view of all eval images of stages `1..=stage`.
pub fn eval_dataset(world: &World, stage: usize) -> Result<CocoDataset> {
    if stage == 0 || stage > world.stages.len() {
        return Err(Error::StageOutOfRange { stage, stages: world.stages.len() });
    }
    let categories = (0..world.num_classes as u32)
        .map(|id| CocoCategory { id, name: format!("class-{id}") })
        .collect();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut next_ann = 1u64;
    for data in &world.stages[..stage] {
        for img in &data.eval {
            images.push(CocoImage {
                id: img.image_id,
                width: IMAGE_SIZE as u32,
                height: IMAGE_SIZE as u32,
                file_name: format!("synthetic-{}.png", img.image_id),
            });
            for ann in &img.annotations {
                annotations.push(CocoAnnotation {
                    id: next_ann,
                    image_id: img.image_id,
                    category_id: ann.class_id,
                    bbox: [ann.bbox.x, ann.bbox.y, ann.bbox.w, ann.bbox.h],
                    iscrowd: 0,
                    area: Some(ann.bbox.area()),
                    is_pseudo: false,
                });
                next_ann += 1;
            }
        }
    }
    Ok(CocoDataset {
        info: CocoInfo {
            description: Some(format!("synthetic eval set through stage {stage}")),
            source_sha256: None,
            schedule: None,
            stage: Some(stage),
        },
        images,
        annotations,
        categories,
    })
}

/// Per-query argmax detections of the student over the seen classes.
pub fn student_detections(
    student: &StudentHead,
    world: &World,
    stage: usize,
) -> Result<Vec<DetRecord<f64>>> {
    let seen = world.schedule.seen_classes(stage)?;
    let mut out = Vec::new();
    for data in &world.stages[..stage] {
        for img in &data.eval {
            let fwd = student.forward(&img.features);
            for (q, cbox) in fwd.boxes.iter().enumerate() {
                let (class_id, score) = seen
                    .iter()
                    .map(|&c| (c, sigmoid(fwd.logits[[q, c as usize]])))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("seen class set is never empty");
                out.push(DetRecord {
                    image_id: img.image_id,
                    bbox: cbox.to_bbox(IMAGE_SIZE, IMAGE_SIZE)?,
                    score,
                    class_id,
                });
            }
        }
    }
    Ok(out)
}

/// Runs one mode through every stage of the world.
pub fn run_mode(world: &World, cfg: &RunConfig, mode: Mode) -> Result<RunLedger> {
    let mut student = StudentHead::new(world.feature_dim, world.num_classes);
    let mut teacher: Option<StudentHead> = None;
    let mut epochs = Vec::new();
    let mut stages = Vec::new();
    let eval_cfg = EvalConfig { keep_pr_curves: true, ..EvalConfig::default() };

    for stage in 1..=world.stages.len() {
        if stage > 1 {
            teacher = Some(student.clone());
        }
        train_stage(&mut student, teacher.as_ref(), world, cfg, mode, stage, &mut epochs)?;
        let dets = student_detections(&student, world, stage)?;
        let gt = eval_dataset(world, stage)?;
        let report = evaluate(&dets, &gt, &world.schedule, stage, &eval_cfg)?;
        stages.push(StageRecord { stage, report });
    }

    Ok(RunLedger {
        mode: mode.name().to_string(),
        seed: cfg.world.seed,
        config: cfg.clone(),
        epochs,
        stages,
    })
}

/// Generates the world once and runs every requested mode on it.
pub fn run_experiment(cfg: &RunConfig, modes: &[Mode]) -> Result<Vec<RunLedger>> {
    let world = generate_world(cfg)?;
    modes.iter().map(|&mode| run_mode(&world, cfg, mode)).collect()
}
