//! evaluate: run the clean / attack / cross tests against a stored model.

use std::path::PathBuf;

use dynback_core::evaluate::{evaluate, EvalOptions};

use super::{load_config, CliError, GlobalArgs, TriggerAsset};
use crate::checkpoint::{load_classifier, load_generator};
use crate::loaders::{load_split, Split};
use crate::reports::{append_results_csv, write_json, MetricsDocument};
use crate::rundir::RunDir;

#[derive(Clone, Debug)]
pub struct EvaluateArgs {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub mask_checkpoint: Option<PathBuf>,
    pub pattern_checkpoint: Option<PathBuf>,
    pub trigger_asset: Option<PathBuf>,
    pub label: String,
}

pub fn evaluate_cmd(args: &EvaluateArgs, global: &GlobalArgs) -> Result<(), CliError> {
    global.validate()?;
    let cfg = load_config(&args.config, global)?;
    let core = cfg.to_core()?;
    let hash = cfg.hash();
    let root = global.data_root();
    let test_data = load_split(&core.dataset, Split::Test, &root)?;

    let (mut f, _) = load_classifier(&args.checkpoint)?;
    let opts = EvalOptions {
        exclude_target_class: core.attack_acc_excludes_target,
        pairing_seed: core.seed,
        batch_size: core.batch_size,
    };

    let report = match (&args.mask_checkpoint, &args.pattern_checkpoint, &args.trigger_asset) {
        (Some(mask), Some(pattern), None) => {
            let (mut g_m, _) = load_generator(mask)?;
            let (mut g_p, _) = load_generator(pattern)?;
            if !g_m.frozen {
                return Err(CliError::Config(
                    "mask checkpoint is not frozen; was it pretrained?".into(),
                ));
            }
            evaluate(&mut f, &mut g_m, &mut g_p, &test_data, core.target_rule, &opts)?
        }
        (None, None, Some(asset_path)) => {
            let asset = TriggerAsset::load(asset_path)?;
            let spec = asset.to_spec(&core.dataset)?;
            dynback_core::badnets::evaluate_static(
                &mut f,
                spec.trigger(),
                &test_data,
                core.target_rule,
                core.attack_acc_excludes_target,
                core.batch_size,
            )?
        }
        _ => {
            return Err(CliError::Config(
                "evaluate needs either --mask-checkpoint plus --pattern-checkpoint, or --trigger-asset"
                    .into(),
            ))
        }
    };

    let mut run = RunDir::create(&global.out, "evaluate", &hash, core.seed)?;
    let doc = MetricsDocument::new(&report, &core.dataset.name, &hash, core.seed, &args.label);
    write_json(&run.file("metrics.json"), &doc)?;
    append_results_csv(&global.out.join("results.csv"), &doc)?;
    println!(
        "{}: clean {:.2} attack {:.2} cross {:.2} ({} attack samples)",
        args.label, report.clean_acc, report.attack_acc, report.cross_acc, report.n_attack
    );
    run.finish()?;
    Ok(())
}
