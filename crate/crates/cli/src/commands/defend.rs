//! defend: the inspection battery against a stored model.
//!
//! Attack inputs come either from the generator pair (dynamic models) or
//! from a static trigger asset (the baseline), so every defense runs
//! identically against both.

use std::path::PathBuf;

use dynback_core::dataset::LabeledImage;
use dynback_core::defense::{
    fine_prune, gradcam, heat_ratio_in_region, neural_cleanse, squeeze_batch, strip_distribution,
    NeuralCleanseConfig, SqueezeMethod, StripConfig, TriggerSource,
};
use dynback_core::evaluate::{count_correct, EvalOptions};
use dynback_core::models::{ClassifierModel, GeneratorModel};
use dynback_core::tensor::Tensor;
use dynback_core::training::target_label;
use dynback_core::trigger::{generate_trigger, inject, StaticTriggerSpec, Trigger};

use super::{load_config, CliError, GlobalArgs, TriggerAsset};
use crate::checkpoint::{load_classifier, load_generator};
use crate::config::ConfigFile;
use crate::loaders::{load_split, Split};
use crate::reports::{
    write_entropy_csv, write_json, write_prune_csv, AnomalyDocument, PruneDocument, StripDocument,
};
use crate::rundir::RunDir;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefendKind {
    NeuralCleanse,
    Strip,
    FinePrune,
    Squeeze,
    GradCam,
}

impl DefendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DefendKind::NeuralCleanse => "neural-cleanse",
            DefendKind::Strip => "strip",
            DefendKind::FinePrune => "fine-prune",
            DefendKind::Squeeze => "squeeze",
            DefendKind::GradCam => "gradcam",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DefendArgs {
    pub kind: DefendKind,
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub mask_checkpoint: Option<PathBuf>,
    pub pattern_checkpoint: Option<PathBuf>,
    pub trigger_asset: Option<PathBuf>,
    pub label: String,
    /// Heat-ratio region for gradcam, (top, left, height, width).
    pub region: Option<(usize, usize, usize, usize)>,
}

enum AttackSource {
    Generator(Box<GeneratorModel>, Box<GeneratorModel>),
    Static(StaticTriggerSpec),
}

impl AttackSource {
    /// Poisoned version of a batch of clean images.
    fn poison_batch(&mut self, x: &Tensor) -> Tensor {
        match self {
            AttackSource::Generator(g_m, g_p) => {
                let tb = generate_trigger(g_m, g_p, x);
                let src: Vec<u32> = (0..x.shape()[0] as u32).collect();
                dynback_core::trigger::inject_batch_indexed(x, &tb.masks, &tb.patterns, &src)
            }
            AttackSource::Static(spec) => {
                let (b, c, _, _) = x.dims4();
                let mut out = Tensor::zeros(x.shape());
                let t = spec.trigger();
                for i in 0..b {
                    let img = Tensor::from_vec(x.item(i).to_vec(), &x.shape()[1..]).unwrap();
                    let inj = inject(&img, t).expect("congruent shapes");
                    let _ = c;
                    out.item_mut(i).copy_from_slice(inj.data());
                }
                out
            }
        }
    }
}

fn load_attack_source(args: &DefendArgs, cfg: &ConfigFile) -> Result<AttackSource, CliError> {
    match (&args.mask_checkpoint, &args.pattern_checkpoint, &args.trigger_asset) {
        (Some(mask), Some(pattern), None) => {
            let (g_m, _) = load_generator(mask)?;
            let (g_p, _) = load_generator(pattern)?;
            if !g_m.frozen {
                return Err(CliError::Config("mask checkpoint is not frozen".into()));
            }
            Ok(AttackSource::Generator(Box::new(g_m), Box::new(g_p)))
        }
        (None, None, Some(path)) => {
            let asset = TriggerAsset::load(path)?;
            let spec = asset.to_spec(&cfg.to_core()?.dataset)?;
            Ok(AttackSource::Static(spec))
        }
        _ => Err(CliError::Config(
            "defend needs either the generator checkpoints or --trigger-asset".into(),
        )),
    }
}

pub fn defend(args: &DefendArgs, global: &GlobalArgs) -> Result<(), CliError> {
    global.validate()?;
    let cfg = load_config(&args.config, global)?;
    let core = cfg.to_core()?;
    let hash = cfg.hash();
    let root = global.data_root();
    let test_data = load_split(&core.dataset, Split::Test, &root)?;
    let (mut f, _) = load_classifier(&args.checkpoint)?;

    let mut run = RunDir::create(
        &global.out,
        &format!("defend-{}", args.kind.as_str()),
        &hash,
        core.seed,
    )?;

    match args.kind {
        DefendKind::NeuralCleanse => {
            let nc_cfg = NeuralCleanseConfig {
                steps: cfg.defense.nc_steps,
                batch_size: cfg.defense.nc_batch,
                lambda_mask: cfg.defense.nc_lambda_mask,
                lr: cfg.defense.nc_lr,
                seed: core.seed,
            };
            let clean: Vec<LabeledImage> =
                test_data.iter().take(cfg.defense.nc_clean_inputs).cloned().collect();
            let report = neural_cleanse(&mut f, &clean, &nc_cfg)?;
            for t in &report.triggers {
                super::save_png(
                    &run.file(&format!("nc_mask_label{}.png", t.label)),
                    &t.mask,
                )?;
            }
            let doc = AnomalyDocument::new(&report, &hash, &args.label);
            write_json(&run.file("neural_cleanse.json"), &doc)?;
            println!(
                "anomaly indices: {:?}\nflagged labels: {:?} (tau {})",
                report.anomaly_index, report.flagged, report.tau
            );
        }
        DefendKind::Strip => {
            let n = cfg.defense.strip_inputs.min(test_data.len());
            let strip_cfg = StripConfig {
                n_overlays: cfg.defense.strip_overlays,
                seed: core.seed,
            };
            // overlays drawn from the tail of the test split, probes from the head
            let overlays: Vec<LabeledImage> =
                test_data.iter().rev().take(512.min(test_data.len())).cloned().collect();
            let clean_inputs: Vec<Tensor> =
                test_data.iter().take(n).map(|d| d.pixels.clone()).collect();
            let mut source = load_attack_source(args, &cfg)?;
            let poisoned_inputs: Vec<Tensor> = {
                let mut out = Vec::with_capacity(n);
                for item in test_data.iter().take(n) {
                    let mut batch_shape = vec![1usize];
                    batch_shape.extend_from_slice(item.pixels.shape());
                    let x = Tensor::from_vec(item.pixels.data().to_vec(), &batch_shape).unwrap();
                    let poisoned = source.poison_batch(&x);
                    out.push(
                        Tensor::from_vec(poisoned.item(0).to_vec(), item.pixels.shape()).unwrap(),
                    );
                }
                out
            };
            let clean_report = strip_distribution(&mut f, &clean_inputs, &overlays, &strip_cfg)?;
            let poisoned_report =
                strip_distribution(&mut f, &poisoned_inputs, &overlays, &strip_cfg)?;
            write_entropy_csv(&run.file("entropies.csv"), &clean_report, &poisoned_report)?;
            let doc = StripDocument::new(
                &clean_report,
                &poisoned_report,
                strip_cfg.n_overlays,
                &hash,
                &args.label,
            );
            write_json(&run.file("strip.json"), &doc)?;
            println!(
                "entropy medians: clean {:.4}, poisoned {:.4}",
                clean_report.median, poisoned_report.median
            );
        }
        DefendKind::FinePrune => {
            let clean: Vec<LabeledImage> =
                test_data.iter().take(cfg.defense.fineprune_clean).cloned().collect();
            let eval: Vec<LabeledImage> =
                test_data.iter().take(cfg.defense.fineprune_eval).cloned().collect();
            let opts = EvalOptions {
                exclude_target_class: core.attack_acc_excludes_target,
                pairing_seed: core.seed,
                batch_size: core.batch_size,
            };
            let curve = match load_attack_source(args, &cfg)? {
                AttackSource::Generator(mut g_m, mut g_p) => {
                    let mut src = TriggerSource::Generator {
                        g_m: &mut g_m,
                        g_p: &mut g_p,
                    };
                    fine_prune(
                        &f,
                        &clean,
                        &eval,
                        &mut src,
                        core.target_rule,
                        cfg.defense.fineprune_step,
                        &opts,
                    )?
                }
                AttackSource::Static(spec) => {
                    let trigger: Trigger = spec.trigger().clone();
                    let mut src = TriggerSource::Static(&trigger);
                    fine_prune(
                        &f,
                        &clean,
                        &eval,
                        &mut src,
                        core.target_rule,
                        cfg.defense.fineprune_step,
                        &opts,
                    )?
                }
            };
            write_prune_csv(&run.file("fineprune.csv"), &curve)?;
            let doc = PruneDocument::new(&curve, &hash, &args.label);
            write_json(&run.file("fineprune.json"), &doc)?;
            let worst = curve
                .points
                .iter()
                .filter(|p| p.clean_acc >= 50.0)
                .map(|p| p.clean_acc - p.attack_acc)
                .fold(f32::NEG_INFINITY, f32::max);
            println!(
                "pruning curve: {} points, max clean-attack gap at usable accuracy {:.2}",
                curve.points.len(),
                worst
            );
        }
        DefendKind::Squeeze => {
            let doc = run_squeeze(&mut f, &core, &cfg, &test_data, args, &hash)?;
            write_json(&run.file("squeeze.json"), &doc)?;
            for row in &doc.rows {
                println!(
                    "{:<14} clean {:.2} attack {:.2}",
                    row.method, row.clean_acc, row.attack_acc
                );
            }
        }
        DefendKind::GradCam => {
            let n = cfg.defense.gradcam_inputs.min(test_data.len());
            let region = args
                .region
                .or_else(|| {
                    args.trigger_asset
                        .as_deref()
                        .and_then(|p| TriggerAsset::load(p).ok())
                        .and_then(|a| a.support_bbox())
                })
                .unwrap_or_else(|| {
                    let (h, w, _) = core.dataset.input_shape;
                    (h - 3, w - 3, 3, 3)
                });
            let mut source = load_attack_source(args, &cfg)?;
            let mut ratios = Vec::with_capacity(n);
            for (i, item) in test_data.iter().take(n).enumerate() {
                let mut batch_shape = vec![1usize];
                batch_shape.extend_from_slice(item.pixels.shape());
                let x1 = Tensor::from_vec(item.pixels.data().to_vec(), &batch_shape).unwrap();
                let poisoned_b = source.poison_batch(&x1);
                let poisoned =
                    Tensor::from_vec(poisoned_b.item(0).to_vec(), item.pixels.shape()).unwrap();
                // inspect the class the model actually reports for this input
                let logits = f.forward_eval(poisoned_b);
                let mut best = 0usize;
                for j in 1..core.dataset.class_count {
                    if logits.data()[j] > logits.data()[best] {
                        best = j;
                    }
                }
                let map = gradcam(&mut f, &poisoned, best as u32)?;
                ratios.push(heat_ratio_in_region(&map, region));
                if i < 4 {
                    super::save_png(&run.file(&format!("gradcam_{i}.png")), &map)?;
                    super::save_png(&run.file(&format!("poisoned_{i}.png")), &poisoned)?;
                }
            }
            let mean_ratio = ratios.iter().sum::<f32>() / ratios.len().max(1) as f32;
            let median_ratio = dynback_core::math::median(&ratios);
            let doc = GradCamDocument {
                schema_version: crate::SCHEMA_VERSION,
                region,
                n_inputs: ratios.len(),
                mean_heat_ratio: mean_ratio,
                median_heat_ratio: median_ratio,
                config_hash: hash.clone(),
                label: args.label.clone(),
            };
            write_json(&run.file("gradcam.json"), &doc)?;
            println!(
                "heat ratio in region {:?}: mean {:.3}, median {:.3} over {} inputs",
                region, mean_ratio, median_ratio, doc.n_inputs
            );
        }
    }
    run.finish()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCamDocument {
    pub schema_version: u32,
    pub region: (usize, usize, usize, usize),
    pub n_inputs: usize,
    pub mean_heat_ratio: f32,
    pub median_heat_ratio: f32,
    pub config_hash: String,
    pub label: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SqueezeRow {
    pub method: String,
    pub clean_acc: f32,
    pub attack_acc: f32,
}

#[derive(Clone, Debug, Serialize)]
pub struct SqueezeDocument {
    pub schema_version: u32,
    pub rows: Vec<SqueezeRow>,
    pub config_hash: String,
    pub label: String,
}

/// Clean/attack accuracy with each input-regularization method applied to
/// the (possibly poisoned) inputs before classification.
fn run_squeeze(
    f: &mut ClassifierModel,
    core: &dynback_core::training::ExperimentConfig,
    cfg: &ConfigFile,
    test_data: &[LabeledImage],
    args: &DefendArgs,
    hash: &str,
) -> Result<SqueezeDocument, CliError> {
    let mut source = load_attack_source(args, cfg)?;
    let methods: Vec<(String, Option<SqueezeMethod>)> = vec![
        ("original".into(), None),
        ("median_k3".into(), Some(SqueezeMethod::MedianSmooth { k: 3 })),
        ("median_k5".into(), Some(SqueezeMethod::MedianSmooth { k: 5 })),
        ("depth_3bit".into(), Some(SqueezeMethod::DepthShrink { bits: 3 })),
        ("depth_1bit".into(), Some(SqueezeMethod::DepthShrink { bits: 1 })),
    ];
    // bound the workload: squeezing is per-pixel sorting over the whole set
    let n = test_data.len().min(2000);
    let bs = core.batch_size.max(1);
    let mut rows = Vec::new();
    for (name, method) in methods {
        let mut clean_correct = 0usize;
        let mut attack_correct = 0usize;
        let mut attack_total = 0usize;
        let mut idx = 0usize;
        while idx < n {
            let hi = (idx + bs).min(n);
            let idxs: Vec<u32> = (idx as u32..hi as u32).collect();
            let (x, y) = dynback_core::dataset::assemble(test_data, &idxs);
            let x_clean = match method {
                Some(m) => squeeze_batch(&x, m)?,
                None => x.clone(),
            };
            let logits = f.forward_eval(x_clean);
            clean_correct += count_correct(&logits, &y);

            let poisoned = source.poison_batch(&x);
            let x_attack = match method {
                Some(m) => squeeze_batch(&poisoned, m)?,
                None => poisoned,
            };
            let logits = f.forward_eval(x_attack);
            let m_classes = core.dataset.class_count;
            for (row, &label) in y.iter().enumerate() {
                if let (dynback_core::training::TargetRule::Single(t), true) =
                    (core.target_rule, core.attack_acc_excludes_target)
                {
                    if label == t {
                        continue;
                    }
                }
                attack_total += 1;
                let mm = logits.shape()[1];
                let xs = &logits.data()[row * mm..(row + 1) * mm];
                let mut best = 0usize;
                for j in 1..mm {
                    if xs[j] > xs[best] {
                        best = j;
                    }
                }
                if best == target_label(label, core.target_rule, m_classes) as usize {
                    attack_correct += 1;
                }
            }
            idx = hi;
        }
        rows.push(SqueezeRow {
            method: name,
            clean_acc: 100.0 * clean_correct as f32 / n as f32,
            attack_acc: 100.0 * attack_correct as f32 / attack_total.max(1) as f32,
        });
    }
    Ok(SqueezeDocument {
        schema_version: crate::SCHEMA_VERSION,
        rows,
        config_hash: hash.to_string(),
        label: args.label.clone(),
    })
}
