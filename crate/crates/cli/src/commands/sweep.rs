//! sweep-rho: train-and-evaluate across a grid of mode probabilities.

use std::path::PathBuf;

use dynback_core::evaluate::{rho_sweep, RhoAxis};

use super::{load_config, CliError, GlobalArgs};
use crate::checkpoint::load_generator;
use crate::reports::{append_results_csv, write_json, MetricsDocument};
use crate::rundir::RunDir;

#[derive(Clone, Debug)]
pub struct SweepArgs {
    pub config: PathBuf,
    pub mask_checkpoint: PathBuf,
    /// "b" (backdoor probability) or "c" (cross-trigger probability).
    pub axis: String,
    pub values: Vec<f32>,
}

pub fn sweep_rho(args: &SweepArgs, global: &GlobalArgs) -> Result<(), CliError> {
    global.validate()?;
    let cfg = load_config(&args.config, global)?;
    let core = cfg.to_core()?;
    let hash = cfg.hash();
    let axis = match args.axis.as_str() {
        "b" => RhoAxis::Backdoor,
        "c" => RhoAxis::Cross,
        other => {
            return Err(CliError::Config(format!(
                "unknown sweep axis `{other}` (expected `b` or `c`)"
            )))
        }
    };
    if args.values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let root = global.data_root();
    let (train_data, test_data) = super::load_train_and_test(&core, &root)?;
    let (mut g_m, _) = load_generator(&args.mask_checkpoint)?;
    if !g_m.frozen {
        return Err(CliError::Config("mask checkpoint is not frozen".into()));
    }

    let mut run = RunDir::create(&global.out, "sweep-rho", &hash, core.seed)?;
    let results = rho_sweep(&core, axis, &args.values, &train_data, &test_data, &mut g_m)?;
    let mut docs = Vec::with_capacity(results.len());
    for (value, report) in &results {
        let label = format!("rho_{}={}", args.axis, value);
        let doc = MetricsDocument::new(report, &core.dataset.name, &hash, core.seed, &label);
        append_results_csv(&global.out.join("results.csv"), &doc)?;
        println!(
            "{label}: clean {:.2} attack {:.2} cross {:.2}",
            report.clean_acc, report.attack_acc, report.cross_acc
        );
        docs.push(doc);
    }
    write_json(&run.file("sweep.json"), &docs)?;
    run.finish()?;
    Ok(())
}
