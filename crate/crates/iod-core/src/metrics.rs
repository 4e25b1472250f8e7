//! COCO-protocol detection evaluation and incremental aggregates.
//!
//! Per (class, IoU threshold, area range): detections are ranked by score,
//! greedily matched per image to the unmatched ground-truth box of highest
//! IoU at or above the threshold, and the precision-recall curve is reduced
//! to 101-point interpolated AP. Ground truth outside the area range is
//! ignored rather than counted: detections matched to ignored boxes, and
//! unmatched detections outside the range, contribute neither true nor false
//! positives.
//!
//! Incremental aggregates follow the task schedule: mAP over previous-task
//! classes, current-task classes, and all classes seen so far.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::coco::CocoDataset;
use crate::dataset::TaskSchedule;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::model::DetRecord;
use crate::scale::{ScaleBucket, ScaleConfig};

pub const IOU_THRESHOLDS: [f64; 10] =
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

const NUM_RECALL_POINTS: usize = 101;

/// AP value meaning "no ground truth in this slice"; excluded from means.
pub const AP_UNDEFINED: f64 = -1.0;

/// Area slices of the evaluation. `Small`/`Medium`/`Large` reuse the query
/// scale-bucket boundaries, so the two modules cannot drift apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] =
        [AreaRange::All, AreaRange::Small, AreaRange::Medium, AreaRange::Large];

    pub fn contains(self, area: f64) -> bool {
        let bucket = ScaleConfig::default().bucket_of_area(area);
        match self {
            AreaRange::All => true,
            AreaRange::Small => bucket == ScaleBucket::Small,
            AreaRange::Medium => bucket == ScaleBucket::Medium,
            AreaRange::Large => bucket == ScaleBucket::Large,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Rank cutoff per image and class before matching.
    pub max_dets_per_image: usize,
    /// Retain interpolated precision curves in the report (for CSV export).
    pub keep_pr_curves: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_dets_per_image: 100, keep_pr_curves: false }
    }
}

/// One class's AP at every IoU threshold and area range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: u32,
    /// Indexed like [`IOU_THRESHOLDS`]; area range All.
    pub by_threshold: Vec<f64>,
    pub small: Vec<f64>,
    pub medium: Vec<f64>,
    pub large: Vec<f64>,
    /// Ground-truth boxes of this class (area range All).
    pub npos: usize,
}

impl ClassAp {
    /// Mean over IoU thresholds; `AP_UNDEFINED` when the class has no GT.
    pub fn mean(&self) -> f64 {
        mean_defined(self.by_threshold.iter().copied())
    }

    pub fn ap50(&self) -> f64 {
        self.by_threshold[0]
    }

    pub fn ap75(&self) -> f64 {
        self.by_threshold[5]
    }
}

/// Interpolated precision at the 101 standard recall points for one
/// (class, IoU threshold) slice over all areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub class_id: u32,
    pub iou_threshold: f64,
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Ascending class id; exactly the classes of tasks 1..=current.
    pub classes: Vec<ClassAp>,
    pub map: f64,
    pub map50: f64,
    pub map75: f64,
    pub map_small: f64,
    pub map_medium: f64,
    pub map_large: f64,
    /// Equals `map`; kept as the explicit "all seen classes" group aggregate.
    pub map_all: f64,
    /// Mean over previous-task classes; absent at the first task.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_previous: Option<f64>,
    /// Mean over current-task classes.
    pub map_current: f64,
    pub previous_classes: Vec<u32>,
    pub current_classes: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pr_curves: Vec<PrCurve>,
}

fn mean_defined(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        if v >= 0.0 {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        AP_UNDEFINED
    } else {
        sum / count as f64
    }
}

struct GtBox {
    bbox: crate::geometry::BBox<f64>,
    area: f64,
}

struct DetBox {
    bbox: crate::geometry::BBox<f64>,
    score: f64,
    /// Position of the image in ascending image-id order, then rank within
    /// the image; makes the global score ordering total and deterministic.
    image_pos: usize,
    rank: usize,
}

/// Flags of one detection after matching, per IoU threshold.
struct MatchedDet {
    score: f64,
    image_pos: usize,
    rank: usize,
    matched: [bool; 10],
    ignored: [bool; 10],
}

/// Greedy score-ranked matching of one image's detections of one class,
/// under one area range. Returns matched detections plus the non-ignored
/// ground-truth count.
fn match_image(
    dets: &[DetBox],
    gts: &[GtBox],
    ious: &[Vec<f64>],
    range: AreaRange,
) -> (Vec<MatchedDet>, usize) {
    let gt_ignored: Vec<bool> = gts.iter().map(|g| !range.contains(g.area)).collect();
    let npos = gt_ignored.iter().filter(|&&ig| !ig).count();

    // Evaluation order: live ground truth first, ignored after, stable.
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&g| gt_ignored[g]);

    let mut out: Vec<MatchedDet> = dets
        .iter()
        .map(|d| MatchedDet {
            score: d.score,
            image_pos: d.image_pos,
            rank: d.rank,
            matched: [false; 10],
            ignored: [false; 10],
        })
        .collect();

    for (ti, &threshold) in IOU_THRESHOLDS.iter().enumerate() {
        let mut gt_taken = vec![false; gts.len()];
        for (di, det) in dets.iter().enumerate() {
            let mut best = threshold.min(1.0 - 1e-10);
            let mut best_gt: Option<usize> = None;
            for &g in &gt_order {
                if gt_taken[g] {
                    continue;
                }
                if let Some(m) = best_gt {
                    if !gt_ignored[m] && gt_ignored[g] {
                        break;
                    }
                }
                if ious[di][g] < best {
                    continue;
                }
                best = ious[di][g];
                best_gt = Some(g);
            }
            if let Some(g) = best_gt {
                gt_taken[g] = true;
                out[di].matched[ti] = true;
                out[di].ignored[ti] = gt_ignored[g];
            } else if !range.contains(det.bbox.area()) {
                out[di].ignored[ti] = true;
            }
        }
    }
    (out, npos)
}

/// 101-point interpolated AP from a ranked TP/FP sequence.
fn interpolated_ap(tp_flags: &[bool], npos: usize) -> f64 {
    if npos == 0 {
        return AP_UNDEFINED;
    }
    let (recall, mut precision) = pr_points(tp_flags, npos);
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for ri in 0..NUM_RECALL_POINTS {
        let r = ri as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / NUM_RECALL_POINTS as f64
}

fn pr_points(tp_flags: &[bool], npos: usize) -> (Vec<f64>, Vec<f64>) {
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        recall.push(tp as f64 / npos as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    (recall, precision)
}

fn interpolated_precision(tp_flags: &[bool], npos: usize) -> Vec<f64> {
    let mut out = vec![0.0; NUM_RECALL_POINTS];
    if npos == 0 {
        return out;
    }
    let (recall, mut precision) = pr_points(tp_flags, npos);
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    for (ri, slot) in out.iter_mut().enumerate() {
        let r = ri as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            *slot = precision[idx];
        }
    }
    out
}

struct ClassEvalResult {
    ap: ClassAp,
    curves: Vec<PrCurve>,
}

fn eval_class(
    class_id: u32,
    gt_by_image: &BTreeMap<u64, Vec<GtBox>>,
    dets_by_image: &BTreeMap<u64, Vec<DetBox>>,
    cfg: &EvalConfig,
) -> ClassEvalResult {
    // Per image and area range: matched detections and live GT counts.
    let image_ids: Vec<u64> =
        gt_by_image.keys().chain(dets_by_image.keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();

    let empty_gts: Vec<GtBox> = Vec::new();
    let empty_dets: Vec<DetBox> = Vec::new();
    let mut per_range: [(Vec<MatchedDet>, usize); 4] =
        [(Vec::new(), 0), (Vec::new(), 0), (Vec::new(), 0), (Vec::new(), 0)];

    for &image_id in &image_ids {
        let gts = gt_by_image.get(&image_id).unwrap_or(&empty_gts);
        let dets = dets_by_image.get(&image_id).unwrap_or(&empty_dets);
        let ious: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect())
            .collect();
        for (ri, range) in AreaRange::ALL.iter().enumerate() {
            let (matched, npos) = match_image(dets, gts, &ious, *range);
            per_range[ri].0.extend(matched);
            per_range[ri].1 += npos;
        }
    }

    let mut aps: [Vec<f64>; 4] = Default::default();
    let mut curves = Vec::new();
    for (ri, (dets, npos)) in per_range.iter_mut().enumerate() {
        dets.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.image_pos.cmp(&b.image_pos))
                .then(a.rank.cmp(&b.rank))
        });
        for ti in 0..IOU_THRESHOLDS.len() {
            let tp_flags: Vec<bool> = dets
                .iter()
                .filter(|d| !d.ignored[ti])
                .map(|d| d.matched[ti])
                .collect();
            aps[ri].push(interpolated_ap(&tp_flags, *npos));
            if ri == 0 && cfg.keep_pr_curves {
                curves.push(PrCurve {
                    class_id,
                    iou_threshold: IOU_THRESHOLDS[ti],
                    precision: interpolated_precision(&tp_flags, *npos),
                });
            }
        }
    }
    let [all, small, medium, large] = aps;
    ClassEvalResult {
        ap: ClassAp {
            class_id,
            by_threshold: all,
            small,
            medium,
            large,
            npos: per_range[0].1,
        },
        curves,
    }
}

/// Evaluates a detection stream against COCO ground truth for the classes of
/// tasks 1 through `current_task`.
///
/// Detections of classes outside the evaluated set are ignored; detections of
/// classes missing from the dataset's categories, or on unknown images, are
/// errors. Images without ground truth still contribute false positives.
pub fn evaluate(
    detections: &[DetRecord<f64>],
    gt: &CocoDataset,
    schedule: &TaskSchedule,
    current_task: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    gt.validate()?;
    schedule.check_categories(&gt.category_ids())?;
    let evaluated = schedule.seen_classes(current_task)?;
    let categories = gt.category_ids();

    let image_pos: BTreeMap<u64, usize> = {
        let mut ids: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        ids.into_iter().enumerate().map(|(pos, id)| (id, pos)).collect()
    };

    // class -> image -> boxes, in input order.
    let mut gt_map: BTreeMap<u32, BTreeMap<u64, Vec<GtBox>>> = BTreeMap::new();
    for ann in &gt.annotations {
        if !evaluated.contains(&ann.category_id) {
            continue;
        }
        let model = ann.to_model()?;
        let area = model.bbox.area();
        gt_map
            .entry(ann.category_id)
            .or_default()
            .entry(ann.image_id)
            .or_default()
            .push(GtBox { bbox: model.bbox, area });
    }

    let mut det_map: BTreeMap<u32, BTreeMap<u64, Vec<DetBox>>> = BTreeMap::new();
    for det in detections {
        if !categories.contains(&det.class_id) {
            return Err(Error::UnknownClass { class_id: det.class_id });
        }
        let Some(&pos) = image_pos.get(&det.image_id) else {
            return Err(Error::DetectionUnknownImage { image_id: det.image_id });
        };
        if !evaluated.contains(&det.class_id) {
            continue;
        }
        det_map.entry(det.class_id).or_default().entry(det.image_id).or_default().push(DetBox {
            bbox: det.bbox,
            score: det.score,
            image_pos: pos,
            rank: 0,
        });
    }
    // Rank per image: score-descending, input order on ties, then cap.
    for per_image in det_map.values_mut() {
        for dets in per_image.values_mut() {
            dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
            dets.truncate(cfg.max_dets_per_image);
            for (rank, det) in dets.iter_mut().enumerate() {
                det.rank = rank;
            }
        }
    }

    let empty_images: BTreeMap<u64, Vec<GtBox>> = BTreeMap::new();
    let empty_dets: BTreeMap<u64, Vec<DetBox>> = BTreeMap::new();
    let results: Vec<ClassEvalResult> = evaluated
        .iter()
        .copied()
        .collect::<Vec<u32>>()
        .into_par_iter()
        .map(|class_id| {
            eval_class(
                class_id,
                gt_map.get(&class_id).unwrap_or(&empty_images),
                det_map.get(&class_id).unwrap_or(&empty_dets),
                cfg,
            )
        })
        .collect();

    let previous: Vec<u32> = schedule.previous_classes(current_task)?.into_iter().collect();
    let current: Vec<u32> = schedule.stage_classes(current_task)?.iter().copied().collect();

    let classes: Vec<ClassAp> = results.iter().map(|r| r.ap.clone()).collect();
    let pr_curves: Vec<PrCurve> = results.into_iter().flat_map(|r| r.curves).collect();

    let class_mean = |ids: &[u32]| {
        mean_defined(classes.iter().filter(|c| ids.contains(&c.class_id)).map(ClassAp::mean))
    };
    let all_ids: Vec<u32> = classes.iter().map(|c| c.class_id).collect();
    let map = class_mean(&all_ids);
    let threshold_mean = |pick: fn(&ClassAp) -> f64| mean_defined(classes.iter().map(pick));

    Ok(EvalReport {
        map,
        map50: threshold_mean(ClassAp::ap50),
        map75: threshold_mean(ClassAp::ap75),
        map_small: mean_defined(classes.iter().map(|c| mean_defined(c.small.iter().copied()))),
        map_medium: mean_defined(classes.iter().map(|c| mean_defined(c.medium.iter().copied()))),
        map_large: mean_defined(classes.iter().map(|c| mean_defined(c.large.iter().copied()))),
        map_all: map,
        map_previous: if previous.is_empty() { None } else { Some(class_mean(&previous)) },
        map_current: class_mean(&current),
        previous_classes: previous,
        current_classes: current,
        classes,
        pr_curves,
    })
}

impl EvalReport {
    /// Aligned text table: one row per class plus the aggregates.
    pub fn text_table(&self) -> String {
        fn cell(v: f64) -> String {
            if v < 0.0 {
                "    --".into()
            } else {
                format!("{v:6.3}")
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{:>8}  {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}  {:>6}",
            "class", "AP", "AP50", "AP75", "APs", "APm", "APl", "npos");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:>8}  {} {} {} {} {} {}  {:>6}",
                c.class_id,
                cell(c.mean()),
                cell(c.ap50()),
                cell(c.ap75()),
                cell(mean_defined(c.small.iter().copied())),
                cell(mean_defined(c.medium.iter().copied())),
                cell(mean_defined(c.large.iter().copied())),
                c.npos
            );
        }
        let _ = writeln!(out, "{:>8}  {}", "mAP^A", cell(self.map_all));
        if let Some(p) = self.map_previous {
            let _ = writeln!(out, "{:>8}  {}", "mAP^P", cell(p));
        }
        let _ = writeln!(out, "{:>8}  {}", "mAP^C", cell(self.map_current));
        let _ = writeln!(
            out,
            "{:>8}  {}   (AP50 {}, AP75 {}, s {}, m {}, l {})",
            "mAP",
            cell(self.map),
            cell(self.map50),
            cell(self.map75),
            cell(self.map_small),
            cell(self.map_medium),
            cell(self.map_large)
        );
        out
    }

    fn class_ap(&self, class_id: u32) -> Option<&ClassAp> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }
}

/// One class's AP drop between two reports at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgettingEntry {
    pub class_id: u32,
    pub iou_threshold: f64,
    pub before: f64,
    pub after: f64,
    /// `before - after`; positive means forgetting.
    pub drop: f64,
}

/// Per-class AP drops between two evaluations, at the requested thresholds.
/// Every class must be present in both reports, and every threshold must be
/// one of the standard ten.
pub fn forgetting_delta(
    before: &EvalReport,
    after: &EvalReport,
    classes: &[u32],
    thresholds: &[f64],
) -> Result<Vec<ForgettingEntry>> {
    let mut out = Vec::new();
    for &class_id in classes {
        let b = before
            .class_ap(class_id)
            .ok_or(Error::UnknownClass { class_id })?;
        let a = after.class_ap(class_id).ok_or(Error::UnknownClass { class_id })?;
        for &threshold in thresholds {
            let ti = IOU_THRESHOLDS
                .iter()
                .position(|&t| (t - threshold).abs() < 1e-9)
                .ok_or_else(|| Error::Config {
                    message: format!("{threshold} is not a standard IoU threshold"),
                })?;
            out.push(ForgettingEntry {
                class_id,
                iou_threshold: IOU_THRESHOLDS[ti],
                before: b.by_threshold[ti],
                after: a.by_threshold[ti],
                drop: b.by_threshold[ti] - a.by_threshold[ti],
            });
        }
    }
    Ok(out)
}
