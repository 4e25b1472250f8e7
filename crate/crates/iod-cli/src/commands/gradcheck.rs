use anyhow::bail;
use iod_core::gradcheck::run_all;

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    /// Random instances per gradient suite.
    #[arg(long, value_name = "N", default_value_t = 100)]
    pub seeds: u64,
}

pub fn run(args: &GradcheckArgs) -> anyhow::Result<()> {
    let reports = run_all(args.seeds);
    let mut failed = 0usize;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAILED" };
        println!(
            "{:<10} {} partials over {} instances, max rel err {:.3e} (tolerance {:.0e}) ... {status}",
            r.suite, r.parameters, r.seeds, r.max_rel_error, r.tolerance
        );
        for f in &r.failures {
            eprintln!("  seed {}: rel err {:.3e}", f.seed, f.rel_error);
        }
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        bail!("{failed} of {} gradient suites failed", reports.len());
    }
    Ok(())
}
