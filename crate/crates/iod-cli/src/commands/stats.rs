use std::path::PathBuf;

use anyhow::Context;
use iod_core::coco::CocoDataset;
use iod_core::dataset::{cooccurrence_stats, SplitStats};

use super::{render_table, ScheduleArgs};

#[derive(Debug, clap::Args)]
pub struct StatsArgs {
    /// COCO ground-truth JSON.
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,

    #[command(flatten)]
    pub schedule: ScheduleArgs,

    /// Report a single stage (1-based). All stages when omitted.
    #[arg(long, value_name = "N")]
    pub stage: Option<usize>,

    /// Emit the stats as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

pub fn run(args: &StatsArgs) -> anyhow::Result<()> {
    let gt = CocoDataset::from_path(&args.gt)
        .with_context(|| format!("parsing {}", args.gt.display()))?;
    let (schedule, _) = args.schedule.resolve(&gt.categories)?;

    let stages: Vec<usize> = match args.stage {
        Some(t) => vec![t],
        None => (1..=schedule.num_stages()).collect(),
    };
    let stats: Vec<SplitStats> = stages
        .iter()
        .map(|&t| cooccurrence_stats(&gt, &schedule, t))
        .collect::<iod_core::Result<_>>()?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
        return Ok(());
    }

    let mut rows = vec![vec![
        "stage".to_string(),
        "only-old".to_string(),
        "only-new".to_string(),
        "co-occur".to_string(),
        "co-occur%".to_string(),
    ]];
    for s in &stats {
        rows.push(vec![
            s.stage.to_string(),
            s.only_old.to_string(),
            s.only_new.to_string(),
            s.cooccurrence.to_string(),
            format!("{:.1}", s.cooccurrence_pct),
        ]);
    }
    print!("{}", render_table(&rows));
    Ok(())
}
