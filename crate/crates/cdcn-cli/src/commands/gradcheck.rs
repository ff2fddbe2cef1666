//! `gradcheck` subcommand: runs the finite-difference gradient suite over
//! every differentiable operation and reports the worst relative error per op.

use cdcn::gradcheck::run_suite;
use cdcn::{Error, Result};

use crate::config::{ConfigSpec, RunConfig};
use crate::output::print_row;
use crate::CliArgs;

const SPEC: ConfigSpec = ConfigSpec {
    defaults: &[("trials", "20"), ("seed", "7")],
    presets: &[],
};

pub fn run(cli: &CliArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&SPEC, cli.config_path.as_deref(), &cli.flags)?;

    let reports = run_suite(cfg.usize_value("trials")?, cfg.u64_value("seed")?)?;
    let mut failed = 0usize;
    for report in &reports {
        if !report.pass() {
            failed += 1;
        }
        print_row(
            cli.json,
            &[
                ("op", serde_json::json!(report.name)),
                ("trials", serde_json::json!(report.trials)),
                ("max_rel_error", serde_json::json!(report.max_rel)),
                ("pass", serde_json::json!(report.pass())),
            ],
        );
    }
    if failed > 0 {
        return Err(Error::Numeric(format!(
            "{failed} of {} gradient checks exceeded the relative error bound",
            reports.len()
        )));
    }
    Ok(())
}
