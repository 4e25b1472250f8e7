use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use iod_core::coco::{CocoAnnotation, CocoDataset};
use iod_core::config::RunConfig;
use iod_core::model::read_detections;
use iod_core::pseudo::{
    deduplicate, generate_pseudo_labels, threshold_table, ScoreBanks, ThresholdSource,
};
use iod_core::{Annotation, DetRecord, Detection};

use super::{echo_config, ScheduleOptArgs};

#[derive(Debug, clap::Args)]
pub struct PseudoArgs {
    /// Teacher detection stream: one `image_id x y w h score class_id` line
    /// per box.
    #[arg(long, value_name = "PATH")]
    pub dets: PathBuf,

    /// COCO ground truth of the current stage (new classes annotated).
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,

    /// Score-bank state from a previous run. Banks start cold when omitted.
    #[arg(long, value_name = "PATH")]
    pub banks: Option<PathBuf>,

    #[command(flatten)]
    pub schedule: ScheduleOptArgs,

    /// Current stage (1-based); old classes are those of stages before it.
    /// Without a schedule, old classes are the categories carrying no
    /// ground-truth annotation.
    #[arg(long, value_name = "N", requires = "schedule_opt")]
    pub stage: Option<usize>,

    /// Directory receiving augmented.json, thresholds.json, and banks.json.
    #[arg(long, value_name = "DIR", default_value = "pseudo")]
    pub out_dir: PathBuf,
}

pub fn run(args: &PseudoArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let dets: Vec<DetRecord> = {
        let file = fs::File::open(&args.dets)
            .with_context(|| format!("opening {}", args.dets.display()))?;
        read_detections(BufReader::new(file))
            .with_context(|| format!("parsing {}", args.dets.display()))?
    };
    let gt = CocoDataset::from_path(&args.gt)
        .with_context(|| format!("parsing {}", args.gt.display()))?;

    let old_classes = old_classes(args, &gt)?;
    if old_classes.is_empty() {
        eprintln!("no old classes at this stage; nothing to label");
    }

    let cpg = cfg.cpg_config();
    let mut banks = match &args.banks {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ScoreBanks::from_json(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => ScoreBanks::new(cpg.capacity),
    };
    for det in dets.iter().filter(|d| old_classes.contains(&d.class_id)) {
        banks.update(det.class_id, [det.score], cpg.delta_min);
    }
    let thresholds = threshold_table(&banks, &old_classes, &cpg);

    let gt_annotations: Vec<Annotation> = gt
        .annotations
        .iter()
        .map(|a| a.to_model())
        .collect::<iod_core::Result<_>>()?;

    let known_images: BTreeSet<u64> = gt.images.iter().map(|img| img.id).collect();
    let mut skipped = 0usize;
    let mut kept: Vec<Annotation> = Vec::new();
    for &image_id in &known_images {
        let mut preds: Vec<Detection> = Vec::new();
        for det in dets.iter().filter(|d| d.image_id == image_id) {
            preds.push(Detection::new(det.bbox, det.score, det.class_id, preds.len() as u32)?);
        }
        let labels = generate_pseudo_labels(image_id, &preds, &old_classes, &thresholds)?;
        kept.extend(deduplicate(labels, &gt_annotations, cpg.theta_nms));
    }
    for det in &dets {
        if !known_images.contains(&det.image_id) {
            skipped += 1;
        }
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} detections on images absent from the ground truth");
    }

    let mut augmented = gt.clone();
    let mut next_id = gt.annotations.iter().map(|a| a.id).max().unwrap_or(0) + 1;
    for label in &kept {
        augmented.annotations.push(CocoAnnotation {
            id: next_id,
            image_id: label.image_id,
            category_id: label.class_id,
            bbox: [label.bbox.x, label.bbox.y, label.bbox.w, label.bbox.h],
            iscrowd: 0,
            area: Some(label.bbox.w * label.bbox.h),
            is_pseudo: true,
        });
        next_id += 1;
    }

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    augmented.write_path(&args.out_dir.join("augmented.json"))?;
    fs::write(
        args.out_dir.join("thresholds.json"),
        serde_json::to_string_pretty(&thresholds)? + "\n",
    )?;
    fs::write(args.out_dir.join("banks.json"), banks.to_json()? + "\n")?;
    echo_config(cfg, &args.out_dir)?;

    let clustered =
        thresholds.iter().filter(|(_, e)| e.source == ThresholdSource::Clustered).count();
    eprintln!(
        "{} pseudo-labels across {} images; {} thresholds clustered, {} fallback -> {}",
        kept.len(),
        known_images.len(),
        clustered,
        thresholds.len() - clustered,
        args.out_dir.display()
    );
    Ok(())
}

/// Old classes come from the schedule when one is given; otherwise every
/// category without a single ground-truth annotation counts as old, which is
/// exactly the incremental setting (the current stage annotates only its own
/// classes).
fn old_classes(args: &PseudoArgs, gt: &CocoDataset) -> anyhow::Result<BTreeSet<u32>> {
    if let Some((schedule, _)) = args.schedule.resolve(&gt.categories)? {
        let stage = args.stage.expect("clap ties --schedule/--preset to --stage");
        return Ok(schedule.previous_classes(stage)?);
    }
    let annotated: BTreeSet<u32> = gt.annotations.iter().map(|a| a.category_id).collect();
    Ok(gt.category_ids().difference(&annotated).copied().collect())
}
