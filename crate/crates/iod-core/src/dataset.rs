//! Incremental benchmark construction: task schedules, stage datasets, and
//! old/new co-occurrence statistics.
//!
//! A schedule splits the category set into ordered, disjoint stages. Stage t
//! training data keeps only images containing at least one stage-t instance
//! and strips every annotation outside stage t, so old-class objects appear
//! unlabeled exactly as in the incremental protocol.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::coco::{resolve_category, CocoCategory, CocoDataset};
use crate::error::{Error, Result};

/// Ordered, pairwise-disjoint class-id sets, one per task. Stages are
/// addressed 1-based throughout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchedule {
    stages: Vec<BTreeSet<u32>>,
}

impl TaskSchedule {
    pub fn new(stages: Vec<BTreeSet<u32>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidSchedule { reason: "no stages".into() });
        }
        let mut seen: BTreeSet<u32> = BTreeSet::new();
        for (i, stage) in stages.iter().enumerate() {
            if stage.is_empty() {
                return Err(Error::InvalidSchedule { reason: format!("stage {} is empty", i + 1) });
            }
            for &class in stage {
                if !seen.insert(class) {
                    return Err(Error::InvalidSchedule {
                        reason: format!("class {class} appears in more than one stage"),
                    });
                }
            }
        }
        Ok(Self { stages })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[BTreeSet<u32>] {
        &self.stages
    }

    fn check_stage(&self, stage: usize) -> Result<()> {
        if stage == 0 || stage > self.stages.len() {
            return Err(Error::StageOutOfRange { stage, stages: self.stages.len() });
        }
        Ok(())
    }

    /// Classes introduced at the given stage.
    pub fn stage_classes(&self, stage: usize) -> Result<&BTreeSet<u32>> {
        self.check_stage(stage)?;
        Ok(&self.stages[stage - 1])
    }

    /// Classes of all stages before the given one; empty for stage 1.
    pub fn previous_classes(&self, stage: usize) -> Result<BTreeSet<u32>> {
        self.check_stage(stage)?;
        Ok(self.stages[..stage - 1].iter().flatten().copied().collect())
    }

    /// Classes of stages 1 through the given one inclusive.
    pub fn seen_classes(&self, stage: usize) -> Result<BTreeSet<u32>> {
        self.check_stage(stage)?;
        Ok(self.stages[..stage].iter().flatten().copied().collect())
    }

    pub fn all_classes(&self) -> BTreeSet<u32> {
        self.stages.iter().flatten().copied().collect()
    }

    /// Every scheduled class must exist in the dataset's categories.
    pub fn check_categories(&self, categories: &BTreeSet<u32>) -> Result<()> {
        for &class in self.all_classes().difference(categories) {
            return Err(Error::UnknownClass { class_id: class });
        }
        Ok(())
    }
}

/// Parses the plain-text schedule format: one stage per line, class names
/// comma-separated, resolved against the dataset categories. Blank lines and
/// `#` comments are skipped.
pub fn parse_schedule(text: &str, categories: &[CocoCategory]) -> Result<TaskSchedule> {
    let mut stages = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut stage = BTreeSet::new();
        for name in line.split(',') {
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::ParseRecord {
                    line: idx + 1,
                    message: "empty class name in stage".into(),
                });
            }
            stage.insert(resolve_category(name, categories)?);
        }
        stages.push(stage);
    }
    TaskSchedule::new(stages)
}

/// A named schedule with class names still unresolved.
#[derive(Debug, Clone, Copy)]
pub struct SchedulePreset {
    pub name: &'static str,
    pub stages: &'static [&'static [&'static str]],
}

/// Built-in benchmark schedules over the DIOR and DOTA category sets.
pub fn schedule_presets() -> &'static [SchedulePreset] {
    const DIOR_10_10: &[&[&str]] = &[
        &[
            "airplane",
            "airport",
            "bridge",
            "service-area",
            "toll-station",
            "harbor",
            "overpass",
            "ship",
            "train-station",
            "vehicle",
        ],
        &[
            "baseball-field",
            "basketball-court",
            "chimney",
            "dam",
            "golf-field",
            "ground-track-field",
            "stadium",
            "storage-tank",
            "tennis-court",
            "windmill",
        ],
    ];
    const DIOR_5X4: &[&[&str]] = &[
        &["airplane", "airport", "bridge", "service-area", "toll-station"],
        &["baseball-field", "basketball-court", "golf-field", "chimney", "dam"],
        &["ground-track-field", "stadium", "storage-tank", "tennis-court", "windmill"],
        &["harbor", "overpass", "ship", "train-station", "vehicle"],
    ];
    const DOTA_5X3: &[&[&str]] = &[
        &["small-vehicle", "large-vehicle", "plane", "baseball-diamond", "ground-track-field"],
        &["helicopter", "ship", "bridge", "soccer-ball-field", "tennis-court"],
        &["storage-tank", "harbor", "roundabout", "basketball-court", "swimming-pool"],
    ];
    &[
        SchedulePreset { name: "dior-10+10", stages: DIOR_10_10 },
        SchedulePreset { name: "dior-5+5+5+5", stages: DIOR_5X4 },
        SchedulePreset { name: "dota-5+5+5", stages: DOTA_5X3 },
    ]
}

pub fn find_preset(name: &str) -> Option<&'static SchedulePreset> {
    schedule_presets().iter().find(|p| p.name == name)
}

/// Resolves a preset's class names against actual dataset categories.
pub fn resolve_preset(
    preset: &SchedulePreset,
    categories: &[CocoCategory],
) -> Result<TaskSchedule> {
    let stages = preset
        .stages
        .iter()
        .map(|stage| stage.iter().map(|name| resolve_category(name, categories)).collect())
        .collect::<Result<Vec<BTreeSet<u32>>>>()?;
    TaskSchedule::new(stages)
}

/// Stage t training split: images containing at least one stage-t instance,
/// with annotations restricted to stage-t classes. The category list is
/// preserved in full so class ids stay stable across stages.
pub fn build_stage_dataset(
    gt: &CocoDataset,
    schedule: &TaskSchedule,
    stage: usize,
) -> Result<CocoDataset> {
    schedule.check_categories(&gt.category_ids())?;
    let current = schedule.stage_classes(stage)?;

    let kept_images: BTreeSet<u64> = gt
        .annotations
        .iter()
        .filter(|a| current.contains(&a.category_id))
        .map(|a| a.image_id)
        .collect();

    let mut out = CocoDataset {
        info: gt.info.clone(),
        images: gt.images.iter().filter(|img| kept_images.contains(&img.id)).cloned().collect(),
        annotations: gt
            .annotations
            .iter()
            .filter(|a| current.contains(&a.category_id) && kept_images.contains(&a.image_id))
            .cloned()
            .collect(),
        categories: gt.categories.clone(),
    };
    out.info.stage = Some(stage);
    Ok(out)
}

/// Image counts for one incremental stage, split by old/new class content.
///
/// `only_old` images carry no stage-t instance and are unavailable for
/// training; `cooccurrence_pct` is the share of co-occurrence images among
/// the available training images (`only_new + cooccurrence`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub stage: usize,
    pub only_old: usize,
    pub only_new: usize,
    pub cooccurrence: usize,
    pub cooccurrence_pct: f64,
}

/// Classifies every image containing a class from tasks 1..=stage as
/// only-old, only-new, or co-occurrence. Classes of later tasks are invisible
/// at this stage and do not affect the counts.
pub fn cooccurrence_stats(
    gt: &CocoDataset,
    schedule: &TaskSchedule,
    stage: usize,
) -> Result<SplitStats> {
    schedule.check_categories(&gt.category_ids())?;
    let old = schedule.previous_classes(stage)?;
    let new = schedule.stage_classes(stage)?;

    let mut only_old = 0usize;
    let mut only_new = 0usize;
    let mut cooccurrence = 0usize;
    for img in &gt.images {
        let mut has_old = false;
        let mut has_new = false;
        for ann in gt.annotations.iter().filter(|a| a.image_id == img.id) {
            has_old |= old.contains(&ann.category_id);
            has_new |= new.contains(&ann.category_id);
        }
        match (has_old, has_new) {
            (true, true) => cooccurrence += 1,
            (true, false) => only_old += 1,
            (false, true) => only_new += 1,
            (false, false) => {}
        }
    }
    let available = only_new + cooccurrence;
    let pct = if available == 0 {
        0.0
    } else {
        100.0 * cooccurrence as f64 / available as f64
    };
    Ok(SplitStats { stage, only_old, only_new, cooccurrence, cooccurrence_pct: pct })
}
