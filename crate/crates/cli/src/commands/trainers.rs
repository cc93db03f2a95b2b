//! pretrain-mask, train, and train-baseline.

use std::path::{Path, PathBuf};

use dynback_core::evaluate::{evaluate, EvalOptions};
use dynback_core::models::{build_classifier, build_generator};
use dynback_core::rng::{streams, SeededRng};
use dynback_core::training::train;
use dynback_core::trigger::pretrain_mask_generator;

use super::{config_err, load_config, load_train_and_test, CliError, GlobalArgs, TriggerAsset};
use crate::checkpoint::{load_generator, save_classifier, save_generator, CheckpointMeta};
use crate::reports::{
    append_results_csv, write_history_csv, write_json, MetricsDocument,
};
use crate::rundir::RunDir;

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// Pretrained mask-generator checkpoint (train only).
    pub mask_checkpoint: Option<PathBuf>,
    /// Static trigger asset override (train-baseline only).
    pub trigger_asset: Option<PathBuf>,
}

/// Pretrain the mask generator and save its frozen checkpoint.
pub fn pretrain_mask(args: &TrainArgs, global: &GlobalArgs) -> Result<(), CliError> {
    global.validate()?;
    let cfg = load_config(&args.config, global)?;
    let core = cfg.to_core()?;
    let hash = cfg.hash();
    let root = global.data_root();
    let (train_data, _) = load_train_and_test(&core, &root)?;

    let mut run = RunDir::create(&global.out, "pretrain-mask", &hash, core.seed)?;
    let g_m = build_generator(
        &core.dataset,
        1,
        &mut SeededRng::new(core.seed, streams::MODEL_GM),
    )?;
    let (g_m, history) =
        pretrain_mask_generator(g_m, &train_data, &core.mask_pretrain, core.seed)?;

    let ckpt_path = run.file("mask_generator.ckpt");
    let meta = CheckpointMeta::new(&core.dataset, core.seed, core.mask_pretrain.epochs, &hash);
    save_generator(&ckpt_path, &g_m, &meta)?;

    let mut csv = String::from("epoch,loss,mean_mask,lr\n");
    for h in &history {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            h.epoch, h.loss, h.mean_mask, h.lr
        ));
    }
    std::fs::write(run.file("mask_pretrain_history.csv"), csv)?;

    let last = history.last();
    println!(
        "mask generator pretrained: {} epochs, final mean mask {:.4} -> {}",
        history.len(),
        last.map(|h| h.mean_mask).unwrap_or(f32::NAN),
        ckpt_path.display()
    );
    run.finish()?;
    Ok(())
}

/// Joint training of classifier and pattern generator.
pub fn train_dynamic(args: &TrainArgs, global: &GlobalArgs) -> Result<(), CliError> {
    global.validate()?;
    let cfg = load_config(&args.config, global)?;
    let core = cfg.to_core()?;
    let hash = cfg.hash();
    let root = global.data_root();
    let (train_data, test_data) = load_train_and_test(&core, &root)?;

    let mask_path = args
        .mask_checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Config("train requires --mask-checkpoint".into()))?;
    let (mut g_m, mask_meta) = load_generator(mask_path)?;
    if !g_m.frozen {
        return Err(CliError::Config(format!(
            "{} holds an unfrozen mask generator; run pretrain-mask first",
            mask_path.display()
        )));
    }
    if mask_meta.input_shape != core.dataset.input_shape {
        return Err(CliError::Config(
            "mask generator was pretrained for a different input shape".into(),
        ));
    }

    let mut run = RunDir::create(&global.out, "train", &hash, core.seed)?;
    let mut f = build_classifier(
        &core.dataset,
        &mut SeededRng::new(core.seed, streams::MODEL_F),
    )?;
    let mut g_p = build_generator(
        &core.dataset,
        core.dataset.input_shape.2,
        &mut SeededRng::new(core.seed, streams::MODEL_GP),
    )?;

    let ckpt_every = cfg.experiment.checkpoint_every;
    let run_path = run.path.clone();
    let hash_cb = hash.clone();
    let dataset_cb = core.dataset.clone();
    let history = {
        let mut on_epoch = |stats: &dynback_core::training::EpochStats,
                            f_now: &dynback_core::models::ClassifierModel,
                            g_now: &dynback_core::models::GeneratorModel| {
            println!(
                "epoch {:>4}: L_cla {:.4} L_div {:.4} L_total {:.4} clean {:.2} attack {:.2} cross {:.2}",
                stats.epoch,
                stats.l_cla,
                stats.l_div,
                stats.l_total,
                stats.clean_acc,
                stats.attack_acc,
                stats.cross_acc
            );
            if ckpt_every > 0 && (stats.epoch + 1) % ckpt_every == 0 {
                let meta =
                    CheckpointMeta::new(&dataset_cb, stats.epoch as u64, stats.epoch, &hash_cb);
                let _ = save_classifier(
                    &run_path.join(format!("classifier_epoch{:04}.ckpt", stats.epoch)),
                    f_now,
                    &meta,
                );
                let _ = save_generator(
                    &run_path.join(format!("pattern_generator_epoch{:04}.ckpt", stats.epoch)),
                    g_now,
                    &meta,
                );
            }
        };
        train(
            &mut f,
            &mut g_p,
            &mut g_m,
            &train_data,
            &test_data,
            &core,
            Some(&mut on_epoch),
        )?
    };

    write_history_csv(&run.file("history.csv"), &history)?;
    let meta = CheckpointMeta::new(&core.dataset, core.seed, core.epochs, &hash);
    save_classifier(&run.file("classifier.ckpt"), &f, &meta)?;
    save_generator(&run.file("pattern_generator.ckpt"), &g_p, &meta)?;

    // final full-test evaluation
    let report = evaluate(
        &mut f,
        &mut g_m,
        &mut g_p,
        &test_data,
        core.target_rule,
        &EvalOptions {
            exclude_target_class: core.attack_acc_excludes_target,
            pairing_seed: core.seed,
            batch_size: core.batch_size,
        },
    )?;
    let doc = MetricsDocument::new(&report, &core.dataset.name, &hash, core.seed, "dynamic");
    write_json(&run.file("metrics.json"), &doc)?;
    append_results_csv(&global.out.join("results.csv"), &doc)?;
    println!(
        "final: clean {:.2} attack {:.2} cross {:.2} -> {}",
        report.clean_acc,
        report.attack_acc,
        report.cross_acc,
        run.path.display()
    );
    run.finish()?;
    Ok(())
}

/// Static-trigger baseline training.
pub fn train_baseline(args: &TrainArgs, global: &GlobalArgs) -> Result<(), CliError> {
    global.validate()?;
    let cfg = load_config(&args.config, global)?;
    let core = cfg.to_core()?;
    let hash = cfg.hash();
    let root = global.data_root();
    let (train_data, test_data) = load_train_and_test(&core, &root)?;

    let asset_path = args
        .trigger_asset
        .clone()
        .unwrap_or_else(|| resolve_asset_path(&args.config, &cfg.baseline.trigger_asset));
    let asset = TriggerAsset::load(&asset_path)?;
    let trigger_spec = asset.to_spec(&core.dataset)?;
    let policy = dynback_core::badnets::PoisonPolicy {
        rho: cfg.baseline.poison_rate,
        trigger: trigger_spec,
        target_rule: core.target_rule,
    };
    policy.validate().map_err(config_err)?;

    let mut run = RunDir::create(&global.out, "train-baseline", &hash, core.seed)?;
    let mut f = build_classifier(
        &core.dataset,
        &mut SeededRng::new(core.seed, streams::MODEL_F),
    )?;
    let history = {
        let mut on_epoch = |stats: &dynback_core::training::EpochStats,
                            _f: &dynback_core::models::ClassifierModel| {
            println!(
                "epoch {:>4}: L {:.4} clean {:.2} attack {:.2} cross {:.2}",
                stats.epoch, stats.l_cla, stats.clean_acc, stats.attack_acc, stats.cross_acc
            );
        };
        dynback_core::badnets::train_badnets(
            &mut f,
            &train_data,
            &test_data,
            &core,
            &policy,
            Some(&mut on_epoch),
        )?
    };

    write_history_csv(&run.file("history.csv"), &history)?;
    let meta = CheckpointMeta::new(&core.dataset, core.seed, core.epochs, &hash);
    save_classifier(&run.file("classifier.ckpt"), &f, &meta)?;

    let report = dynback_core::badnets::evaluate_static(
        &mut f,
        policy.trigger.trigger(),
        &test_data,
        core.target_rule,
        core.attack_acc_excludes_target,
        core.batch_size,
    )?;
    let doc = MetricsDocument::new(&report, &core.dataset.name, &hash, core.seed, "baseline");
    write_json(&run.file("metrics.json"), &doc)?;
    append_results_csv(&global.out.join("results.csv"), &doc)?;
    println!(
        "final: clean {:.2} attack {:.2} cross {:.2} -> {}",
        report.clean_acc,
        report.attack_acc,
        report.cross_acc,
        run.path.display()
    );
    run.finish()?;
    Ok(())
}

/// Asset paths in configs resolve relative to the config file's directory.
pub(crate) fn resolve_asset_path(config_path: &Path, asset: &str) -> PathBuf {
    let p = Path::new(asset);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config_path
        .parent()
        .map(|d| d.join(p))
        .unwrap_or_else(|| p.to_path_buf())
}
