use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use iod_core::coco::{sha256_hex, CocoDataset};
use iod_core::config::RunConfig;
use iod_core::dataset::build_stage_dataset;

use super::{echo_config, ScheduleArgs};

#[derive(Debug, clap::Args)]
pub struct SplitArgs {
    /// Source COCO ground-truth JSON.
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,

    #[command(flatten)]
    pub schedule: ScheduleArgs,

    /// Emit a single stage (1-based). All stages when omitted.
    #[arg(long, value_name = "N")]
    pub stage: Option<usize>,

    /// Directory receiving stage-<t>.json files.
    #[arg(long, value_name = "DIR", default_value = "splits")]
    pub out_dir: PathBuf,
}

pub fn run(args: &SplitArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let raw = fs::read(&args.gt).with_context(|| format!("reading {}", args.gt.display()))?;
    let digest = sha256_hex(&raw);
    let gt = CocoDataset::from_reader(&raw[..])
        .with_context(|| format!("parsing {}", args.gt.display()))?;
    let (schedule, label) = args.schedule.resolve(&gt.categories)?;

    let stages: Vec<usize> = match args.stage {
        Some(t) => vec![t],
        None => (1..=schedule.num_stages()).collect(),
    };
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    for &t in &stages {
        let mut out = build_stage_dataset(&gt, &schedule, t)?;
        out.info.source_sha256 = Some(digest.clone());
        out.info.schedule = Some(label.clone());
        let path = args.out_dir.join(format!("stage-{t}.json"));
        out.write_path(&path).with_context(|| format!("writing {}", path.display()))?;
        eprintln!(
            "stage {t}: {} images, {} annotations -> {}",
            out.images.len(),
            out.annotations.len(),
            path.display()
        );
    }
    echo_config(cfg, &args.out_dir)?;
    Ok(())
}
