use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use iod_core::config::RunConfig;
use iod_core::sim::{run_experiment, Mode, RunLedger};

use super::{ap_cell, echo_config};

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Training mode: finetune, crd, cpg, crd+cpg, full, or `all` to run
    /// every mode on the same world. Defaults to train.mode from the config.
    #[arg(long, value_name = "MODE")]
    pub mode: Option<String>,

    /// Overrides world.seed from the config.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,

    /// Output directory (default: io.out_dir from the config).
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

pub fn run(args: &SimulateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let mut cfg = cfg.clone();
    if let Some(seed) = args.seed {
        cfg.world.seed = seed;
    }
    let modes: Vec<Mode> = match args.mode.as_deref() {
        None => vec![Mode::parse(&cfg.train.mode)?],
        Some("all") => Mode::ALL.to_vec(),
        Some(name) => vec![Mode::parse(name)?],
    };
    // A single-mode run folds the mode into the echoed config so that
    // re-running from effective-config.toml reproduces it exactly.
    if let [mode] = modes.as_slice() {
        cfg.train.mode = mode.name().to_string();
    }

    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.io.out_dir));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let ledgers = run_experiment(&cfg, &modes)?;
    for ledger in &ledgers {
        write_outputs(ledger, &out_dir)?;
    }
    echo_config(&cfg, &out_dir)?;
    Ok(())
}

fn write_outputs(ledger: &RunLedger, out_dir: &std::path::Path) -> anyhow::Result<()> {
    let mode = &ledger.mode;
    fs::write(out_dir.join(format!("ledger-{mode}.json")), ledger.to_json()? + "\n")?;
    if let Some(report) = ledger.final_report() {
        fs::write(
            out_dir.join(format!("report-{mode}.json")),
            serde_json::to_string_pretty(report)? + "\n",
        )?;
    }

    let mut curves = String::from("stage,epoch,detr,std,crd,total,pseudo_labels\n");
    for e in &ledger.epochs {
        curves.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.stage, e.epoch, e.loss.detr, e.loss.std, e.loss.crd, e.loss.total, e.pseudo_labels
        ));
    }
    fs::write(out_dir.join(format!("curves-{mode}.csv")), curves)?;

    let mut maps = String::from(
        "stage,map,map50,map75,map_small,map_medium,map_large,map_previous,map_current,map_all\n",
    );
    for s in &ledger.stages {
        let r = &s.report;
        let previous = r.map_previous.map_or(String::new(), |v| v.to_string());
        maps.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.stage,
            r.map,
            r.map50,
            r.map75,
            r.map_small,
            r.map_medium,
            r.map_large,
            previous,
            r.map_current,
            r.map_all
        ));
        eprintln!(
            "{mode} stage {}: mAP {} (previous {}, current {})",
            s.stage,
            ap_cell(r.map),
            r.map_previous.map_or("-".to_string(), ap_cell),
            ap_cell(r.map_current)
        );
    }
    fs::write(out_dir.join(format!("map-{mode}.csv")), maps)?;
    Ok(())
}
