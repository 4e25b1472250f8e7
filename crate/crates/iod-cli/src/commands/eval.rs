use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use iod_core::coco::CocoDataset;
use iod_core::config::RunConfig;
use iod_core::metrics::{evaluate, EvalConfig, EvalReport};
use iod_core::model::read_detections;
use iod_core::DetRecord;

use super::{ap_cell, echo_config, render_table, ScheduleArgs};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Detection stream: one `image_id x y w h score class_id` line per box.
    #[arg(long, value_name = "PATH")]
    pub dets: PathBuf,

    /// COCO ground-truth JSON.
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,

    #[command(flatten)]
    pub schedule: ScheduleArgs,

    /// Evaluate the classes of tasks 1..=N (default: all tasks).
    #[arg(long, value_name = "N")]
    pub stage: Option<usize>,

    /// Write the full report as JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Write interpolated precision/recall points as CSV.
    #[arg(long, value_name = "PATH")]
    pub pr_csv: Option<PathBuf>,
}

pub fn run(args: &EvalArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let dets: Vec<DetRecord> = {
        let file = fs::File::open(&args.dets)
            .with_context(|| format!("opening {}", args.dets.display()))?;
        read_detections(BufReader::new(file))
            .with_context(|| format!("parsing {}", args.dets.display()))?
    };
    let gt = CocoDataset::from_path(&args.gt)
        .with_context(|| format!("parsing {}", args.gt.display()))?;
    let (schedule, _) = args.schedule.resolve(&gt.categories)?;
    let stage = args.stage.unwrap_or_else(|| schedule.num_stages());

    let eval_cfg = EvalConfig { keep_pr_curves: args.pr_csv.is_some(), ..EvalConfig::default() };
    let report = evaluate(&dets, &gt, &schedule, stage, &eval_cfg)?;

    print!("{}", format_report(&report, &gt));

    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.pr_csv {
        fs::write(path, pr_curves_csv(&report))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(target) = args.out.as_deref().or(args.pr_csv.as_deref()) {
        let dir = target.parent().filter(|p| !p.as_os_str().is_empty());
        echo_config(cfg, dir.unwrap_or(Path::new(".")))?;
    }
    Ok(())
}

fn format_report(report: &EvalReport, gt: &CocoDataset) -> String {
    let names: BTreeMap<u32, &str> =
        gt.categories.iter().map(|c| (c.id, c.name.as_str())).collect();

    let mut rows = vec![vec![
        "class".to_string(),
        "AP".to_string(),
        "AP50".to_string(),
        "AP75".to_string(),
        "boxes".to_string(),
    ]];
    for class in &report.classes {
        rows.push(vec![
            names.get(&class.class_id).map_or_else(
                || format!("class-{}", class.class_id),
                |n| n.to_string(),
            ),
            ap_cell(class.mean()),
            ap_cell(class.ap50()),
            ap_cell(class.ap75()),
            class.npos.to_string(),
        ]);
    }
    let mut out = render_table(&rows);

    let summary = vec![
        vec!["mAP".to_string(), ap_cell(report.map), "mAP50".to_string(), ap_cell(report.map50), "mAP75".to_string(), ap_cell(report.map75)],
        vec!["small".to_string(), ap_cell(report.map_small), "medium".to_string(), ap_cell(report.map_medium), "large".to_string(), ap_cell(report.map_large)],
        vec![
            "previous".to_string(),
            report.map_previous.map_or("-".to_string(), ap_cell),
            "current".to_string(),
            ap_cell(report.map_current),
            "all".to_string(),
            ap_cell(report.map_all),
        ],
    ];
    out.push('\n');
    out.push_str(&render_table(&summary));
    out
}

/// One row per (class, IoU threshold, recall point); recall points are the
/// standard 0.00..1.00 grid.
fn pr_curves_csv(report: &EvalReport) -> String {
    let mut out = String::from("class_id,iou_threshold,recall,precision\n");
    for curve in &report.pr_curves {
        for (i, precision) in curve.precision.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                curve.class_id,
                curve.iou_threshold,
                i as f64 / 100.0,
                precision
            ));
        }
    }
    out
}
