//! Subcommand implementations and the plumbing they share.

pub mod eval;
pub mod gradcheck;
pub mod pseudo;
pub mod simulate;
pub mod split;
pub mod stats;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use iod_core::coco::CocoCategory;
use iod_core::config::RunConfig;
use iod_core::dataset::{find_preset, parse_schedule, resolve_preset, schedule_presets, TaskSchedule};

/// Schedule selection for commands that cannot work without one.
#[derive(Debug, clap::Args)]
#[group(id = "schedule_source", required = true, multiple = false)]
pub struct ScheduleArgs {
    /// Schedule file: one stage per line, comma-separated class names.
    #[arg(long, value_name = "PATH")]
    pub schedule: Option<PathBuf>,

    /// Built-in schedule preset; see `--preset help` for the list.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
}

/// Same selection, but optional (`pseudo` can infer old classes instead).
#[derive(Debug, clap::Args)]
#[group(id = "schedule_opt", required = false, multiple = false)]
pub struct ScheduleOptArgs {
    /// Schedule file: one stage per line, comma-separated class names.
    #[arg(long, value_name = "PATH", requires = "stage")]
    pub schedule: Option<PathBuf>,

    /// Built-in schedule preset; see `--preset help` for the list.
    #[arg(long, value_name = "NAME", requires = "stage")]
    pub preset: Option<String>,
}

impl ScheduleArgs {
    pub fn resolve(&self, categories: &[CocoCategory]) -> anyhow::Result<(TaskSchedule, String)> {
        resolve_schedule(self.schedule.as_deref(), self.preset.as_deref(), categories)
            .map(|r| r.expect("clap enforces exactly one schedule source"))
    }
}

impl ScheduleOptArgs {
    pub fn resolve(
        &self,
        categories: &[CocoCategory],
    ) -> anyhow::Result<Option<(TaskSchedule, String)>> {
        resolve_schedule(self.schedule.as_deref(), self.preset.as_deref(), categories)
    }
}

/// Loads a schedule from a file or resolves a preset by name against the
/// dataset's categories. The returned label goes into provenance headers.
fn resolve_schedule(
    schedule: Option<&Path>,
    preset: Option<&str>,
    categories: &[CocoCategory],
) -> anyhow::Result<Option<(TaskSchedule, String)>> {
    if let Some(path) = schedule {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading schedule {}", path.display()))?;
        let sched = parse_schedule(&text, categories)
            .with_context(|| format!("parsing schedule {}", path.display()))?;
        let label = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        return Ok(Some((sched, label)));
    }
    if let Some(name) = preset {
        let preset = find_preset(name).ok_or_else(|| {
            let known: Vec<&str> = schedule_presets().iter().map(|p| p.name).collect();
            anyhow::anyhow!("unknown preset '{name}'; available: {}", known.join(", "))
        })?;
        let sched = resolve_preset(&preset, categories)
            .with_context(|| format!("resolving preset '{name}' against the dataset"))?;
        return Ok(Some((sched, name.to_string())));
    }
    Ok(None)
}

/// Writes the fully resolved configuration next to a command's outputs so
/// the run can be re-created from the output directory alone.
pub fn echo_config(cfg: &RunConfig, dir: &Path) -> anyhow::Result<PathBuf> {
    let path = dir.join("effective-config.toml");
    fs::write(&path, cfg.to_toml()?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Renders rows as a space-aligned table: first column left-aligned, the
/// rest right-aligned. Empty cells stay empty.
pub fn render_table(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i == 0 {
                line.push_str(&format!("{cell:<width$}", width = widths[0]));
            } else {
                line.push_str(&format!("{cell:>width$}", width = widths[i]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// AP cells: three decimals, or "-" for the undefined sentinel.
pub fn ap_cell(value: f64) -> String {
    if value < 0.0 {
        "-".to_string()
    } else {
        format!("{value:.3}")
    }
}
