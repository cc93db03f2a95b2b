//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with the measured values next to its gates.
//!
//! Training-backed criteria share artifacts through lazy statics: the desk
//! dataset (the real handwritten-digit archives when present under the data
//! root, otherwise the generated synthetic corpus with identical shapes and
//! counts), one pretrained mask generator, one jointly-trained dynamic
//! model, and one static-trigger baseline. Ablation criteria train their
//! own variants. Everything is seeded; reruns reproduce the same numbers.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use dynback_cli::commands::TriggerAsset;
use dynback_cli::config::ConfigFile;
use dynback_cli::loaders::{self, load_split, Split};
use dynback_core::dataset::{DatasetSpec, LabeledImage};
use dynback_core::defense::{
    fine_prune, gradcam, heat_ratio_in_region, neural_cleanse, squeeze, strip_distribution,
    NeuralCleanseConfig, SqueezeMethod, StripConfig, TriggerSource,
};
use dynback_core::evaluate::{evaluate, EvalOptions, MetricsReport};
use dynback_core::models::{
    build_classifier, build_generator, ClassifierModel, GeneratorModel,
};
use dynback_core::nn::{Ctx, Module, StepSchedule};
use dynback_core::rng::{streams, SeededRng};
use dynback_core::tensor::Tensor;
use dynback_core::training::{
    compose_batch, draw_mode, target_label, train, training_step, ModeDraw, TargetRule,
};
use dynback_core::trigger::{
    inject, pretrain_mask_generator, StaticTriggerSpec, Trigger,
};

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// Dataset root and dataset name. Prefers real archives under the data root
/// (flag via DYNBACK_DATA_ROOT); falls back to the deterministic synthetic
/// corpus generated once under target/acceptance-data.
fn dataset() -> &'static (PathBuf, String) {
    static DATA: OnceLock<(PathBuf, String)> = OnceLock::new();
    DATA.get_or_init(|| {
        let env_root = std::env::var("DYNBACK_DATA_ROOT").ok().map(PathBuf::from);
        if let Some(root) = env_root {
            if root.join("mnist/train-images-idx3-ubyte").exists()
                || root.join("mnist/train-images-idx3-ubyte.gz").exists()
            {
                println!("acceptance dataset: real archives at {}", root.display());
                return (root, "mnist".to_string());
            }
        }
        let root = workspace_root().join("target/acceptance-data");
        let marker = root.join("synth-digits/train-images-idx3-ubyte");
        if !marker.exists() {
            println!("acceptance dataset: generating synthetic corpus");
            loaders::synth::generate(&root, loaders::synth::DEFAULT_SEED).expect("synth corpus");
        } else {
            println!("acceptance dataset: reusing synthetic corpus");
        }
        (root, "synth-digits".to_string())
    })
}

/// The desk recipe with the resolved dataset substituted in.
fn desk_config_file(rule: &str) -> ConfigFile {
    let (_, name) = dataset();
    let path = workspace_root().join("configs/mnist_desk.toml");
    let mut cfg = ConfigFile::load(&path).expect("desk config parses");
    cfg.experiment.dataset = name.clone();
    cfg.experiment.target_rule = rule.into();
    cfg.to_core().expect("desk config valid");
    cfg
}

struct Desk {
    cfg: ConfigFile,
    train_data: Vec<LabeledImage>,
    test_data: Vec<LabeledImage>,
    g_m: GeneratorModel,
    mean_mask: f32,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let (root, _) = dataset();
        let cfg = desk_config_file("single");
        let core = cfg.to_core().unwrap();
        let train_full = load_split(&core.dataset, Split::Train, root).expect("train split");
        let test_data = load_split(&core.dataset, Split::Test, root).expect("test split");
        // desk subset: seeded shuffle, first 10k
        let mut train_data = train_full;
        let mut rng = SeededRng::new(core.seed, streams::SUBSET);
        rng.shuffle(&mut train_data);
        train_data.truncate(core.train_subset.unwrap_or(train_data.len()));

        let g_m = build_generator(
            &core.dataset,
            1,
            &mut SeededRng::new(core.seed, streams::MODEL_GM),
        )
        .unwrap();
        let t0 = std::time::Instant::now();
        let (mut g_m, _) =
            pretrain_mask_generator(g_m, &train_data, &core.mask_pretrain, core.seed).unwrap();
        // measured mean mask over a probe batch of test images
        let idxs: Vec<u32> = (0..256.min(test_data.len()) as u32).collect();
        let (probe, _) = dynback_core::dataset::assemble(&test_data, &idxs);
        let masks = g_m.forward_eval(probe);
        let mean_mask = dynback_core::math::mean_f64(masks.data()) as f32;
        println!(
            "mask generator pretrained in {:.1}s, mean mask {:.4}",
            t0.elapsed().as_secs_f64(),
            mean_mask
        );
        Desk {
            cfg,
            train_data,
            test_data,
            g_m,
            mean_mask,
        }
    })
}

struct TrainedDynamic {
    f: ClassifierModel,
    g_p: GeneratorModel,
    report: MetricsReport,
    train_secs: f64,
}

fn run_dynamic(cfg: &ConfigFile) -> TrainedDynamic {
    let desk = desk();
    let core = cfg.to_core().unwrap();
    let mut f = build_classifier(
        &core.dataset,
        &mut SeededRng::new(core.seed, streams::MODEL_F),
    )
    .unwrap();
    let mut g_p = build_generator(
        &core.dataset,
        core.dataset.input_shape.2,
        &mut SeededRng::new(core.seed, streams::MODEL_GP),
    )
    .unwrap();
    let mut g_m = desk.g_m.clone();
    let t0 = std::time::Instant::now();
    train(
        &mut f,
        &mut g_p,
        &mut g_m,
        &desk.train_data,
        &desk.test_data,
        &core,
        Some(&mut |s: &dynback_core::training::EpochStats, _: &ClassifierModel, _: &GeneratorModel| {
            println!(
                "  epoch {:>2}: L_total {:.4} clean {:.2} attack {:.2} cross {:.2}",
                s.epoch, s.l_total, s.clean_acc, s.attack_acc, s.cross_acc
            );
        }),
    )
    .expect("training succeeds");
    let train_secs = t0.elapsed().as_secs_f64();
    let report = evaluate(
        &mut f,
        &mut g_m,
        &mut g_p,
        &desk.test_data,
        core.target_rule,
        &eval_opts(&core),
    )
    .unwrap();
    TrainedDynamic {
        f,
        g_p,
        report,
        train_secs,
    }
}

fn eval_opts(core: &dynback_core::training::ExperimentConfig) -> EvalOptions {
    EvalOptions {
        exclude_target_class: core.attack_acc_excludes_target,
        pairing_seed: core.seed,
        batch_size: core.batch_size,
    }
}

/// The shared single-target dynamic model (criterion 2, reused by 6a-6d).
fn dynamic() -> &'static TrainedDynamic {
    static DYN: OnceLock<TrainedDynamic> = OnceLock::new();
    DYN.get_or_init(|| {
        println!("training the desk-scale dynamic model (criterion 2)");
        run_dynamic(&desk().cfg)
    })
}

struct TrainedBaseline {
    f: ClassifierModel,
    trigger: StaticTriggerSpec,
    report: MetricsReport,
}

/// The shared static-trigger baseline (criteria 6a-6d).
fn baseline() -> &'static TrainedBaseline {
    static BASE: OnceLock<TrainedBaseline> = OnceLock::new();
    BASE.get_or_init(|| {
        println!("training the static-trigger baseline");
        let desk = desk();
        let core = desk.cfg.to_core().unwrap();
        let asset = TriggerAsset::load(
            &workspace_root().join("assets/trigger_checkerboard3_28.json"),
        )
        .expect("trigger asset");
        let trigger = asset.to_spec(&core.dataset).expect("asset matches dataset");
        let policy = dynback_core::badnets::PoisonPolicy {
            rho: desk.cfg.baseline.poison_rate,
            trigger: trigger.clone(),
            target_rule: core.target_rule,
        };
        let mut f = build_classifier(
            &core.dataset,
            &mut SeededRng::new(core.seed, streams::MODEL_F),
        )
        .unwrap();
        dynback_core::badnets::train_badnets(
            &mut f,
            &desk.train_data,
            &desk.test_data,
            &core,
            &policy,
            None,
        )
        .expect("baseline training succeeds");
        let report = dynback_core::badnets::evaluate_static(
            &mut f,
            policy.trigger.trigger(),
            &desk.test_data,
            core.target_rule,
            core.attack_acc_excludes_target,
            core.batch_size,
        )
        .unwrap();
        println!(
            "baseline: clean {:.2} attack {:.2} cross {:.2}",
            report.clean_acc, report.attack_acc, report.cross_acc
        );
        TrainedBaseline { f, trigger, report }
    })
}

fn nc_config(cfg: &ConfigFile, seed: u64) -> NeuralCleanseConfig {
    NeuralCleanseConfig {
        steps: cfg.defense.nc_steps,
        batch_size: cfg.defense.nc_batch,
        lambda_mask: cfg.defense.nc_lambda_mask,
        lr: cfg.defense.nc_lr,
        seed,
    }
}

fn gate(name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {name} {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name} failed: {detail}");
}

// --- criterion 1 -----------------------------------------------------------

#[test]
fn c1_injection_matches_scalar_oracle_exactly() {
    let mut rng = SeededRng::new(0xACCE97, 0);
    let mut checked = 0usize;
    for _ in 0..100 {
        let c = 1 + rng.below(4);
        let h = 1 + rng.below(24);
        let w = 1 + rng.below(24);
        let mk = |rng: &mut SeededRng, shape: &[usize]| {
            let mut t = Tensor::zeros(shape);
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
            t
        };
        let x = mk(&mut rng, &[c, h, w]);
        let t = Trigger::new(mk(&mut rng, &[1, h, w]), mk(&mut rng, &[c, h, w])).unwrap();
        let got = inject(&x, &t).unwrap();
        // independent scalar triple loop
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let m = t.mask.data()[y * w + xx];
                    let want = x.data()[(ci * h + y) * w + xx] * (1.0 - m)
                        + t.pattern.data()[(ci * h + y) * w + xx] * m;
                    assert_eq!(got.data()[(ci * h + y) * w + xx], want, "exact equality");
                }
            }
        }
        checked += 1;
    }
    gate(
        "C1 injection-oracle",
        checked == 100,
        &format!("{checked}/100 random instances matched the scalar loop exactly"),
    );
}

// --- criterion 2 -----------------------------------------------------------

#[test]
fn c2_desk_scale_dynamic_attack() {
    let desk = desk();
    let model = dynamic();
    let r = &model.report;
    println!(
        "desk dynamic run: {:.1} min training, mean mask {:.4}",
        model.train_secs / 60.0,
        desk.mean_mask
    );
    let mask_ok = desk.mean_mask <= 0.1;
    gate(
        "C2-mask sparsity",
        mask_ok,
        &format!("mean mask {:.4} <= 0.1 after pretraining", desk.mean_mask),
    );
    let pass = r.clean_acc >= 97.0 && r.attack_acc >= 95.0 && r.cross_acc >= 85.0;
    gate(
        "C2 desk-dynamic",
        pass,
        &format!(
            "clean {:.2} (>=97) attack {:.2} (>=95) cross {:.2} (>=85)",
            r.clean_acc, r.attack_acc, r.cross_acc
        ),
    );
}

// --- criterion 3 -----------------------------------------------------------

#[test]
fn c3_all_to_all_desk_scale() {
    println!("training the all-to-all desk model (criterion 3)");
    let cfg = desk_config_file("all_to_all");
    let model = run_dynamic(&cfg);
    let r = &model.report;
    let pass = r.clean_acc >= 97.0 && r.attack_acc >= 90.0 && r.cross_acc >= 80.0;
    gate(
        "C3 all-to-all",
        pass,
        &format!(
            "clean {:.2} (>=97) attack {:.2} (>=90) cross {:.2} (>=80)",
            r.clean_acc, r.attack_acc, r.cross_acc
        ),
    );
}

// --- criterion 4 -----------------------------------------------------------

#[test]
fn c4_ablation_without_diversity_loss() {
    println!("training the lambda_div = 0 ablation (criterion 4)");
    let mut cfg = desk_config_file("single");
    cfg.experiment.lambda_div = 0.0;
    let desk = desk();
    let model = run_dynamic(&cfg);
    let mut g_p = model.g_p.clone();

    // mean pairwise pattern distance over 100 random test pairs
    let mut rng = SeededRng::new(41, 0);
    let mut sum = 0.0f64;
    for _ in 0..100 {
        let i = rng.below(desk.test_data.len());
        let j = rng.below(desk.test_data.len());
        let to_batch = |img: &LabeledImage| {
            let mut shape = vec![1usize];
            shape.extend_from_slice(img.pixels.shape());
            Tensor::from_vec(img.pixels.data().to_vec(), &shape).unwrap()
        };
        let p_i = g_p.forward_eval(to_batch(&desk.test_data[i]));
        let p_j = g_p.forward_eval(to_batch(&desk.test_data[j]));
        sum += dynback_core::math::mean_abs_diff(p_i.data(), p_j.data());
    }
    let mean_dist = (sum / 100.0) as f32;
    let collapsed = mean_dist < 1e-3;
    gate(
        "C4 pattern-collapse",
        collapsed,
        &format!("mean pairwise pattern L1 {mean_dist:.2e} < 1e-3"),
    );

    let r = &model.report;
    let no_joint_success = r.attack_acc < 50.0 || r.cross_acc < 50.0;
    gate(
        "C4 no-joint-success",
        no_joint_success,
        &format!(
            "attack {:.2} or cross {:.2} below 50 with cross mode active",
            r.attack_acc, r.cross_acc
        ),
    );
}

// --- criterion 5 -----------------------------------------------------------

#[test]
fn c5_ablation_without_cross_mode() {
    println!("training the rho_c = 0 ablation (criterion 5)");
    let mut cfg = desk_config_file("single");
    cfg.experiment.rho_c = 0.0;
    let desk = desk();
    let model = run_dynamic(&cfg);
    let r = &model.report;
    gate(
        "C5 cross-collapse",
        r.cross_acc <= 30.0,
        &format!("cross accuracy {:.2} <= 30 without the cross mode", r.cross_acc),
    );

    let mut f = model.f.clone();
    let clean: Vec<LabeledImage> = desk
        .test_data
        .iter()
        .take(cfg.defense.nc_clean_inputs)
        .cloned()
        .collect();
    let core = cfg.to_core().unwrap();
    let report = neural_cleanse(&mut f, &clean, &nc_config(&cfg, core.seed)).unwrap();
    let max_index = report.max_index();
    gate(
        "C5 reverse-engineering-catches",
        max_index > 2.0,
        &format!(
            "max anomaly index {max_index:.2} > 2 (flagged {:?})",
            report.flagged
        ),
    );
}

// --- criterion 6 -----------------------------------------------------------

#[test]
fn c6a_trigger_reverse_engineering() {
    let desk = desk();
    let core = desk.cfg.to_core().unwrap();
    let clean: Vec<LabeledImage> = desk
        .test_data
        .iter()
        .take(desk.cfg.defense.nc_clean_inputs)
        .cloned()
        .collect();

    let base = baseline();
    // the control model must itself be a competent backdoor
    assert!(
        base.report.clean_acc >= 97.0 && base.report.attack_acc >= 95.0,
        "baseline under-trained: clean {:.2} attack {:.2}",
        base.report.clean_acc,
        base.report.attack_acc
    );
    let mut f_base = base.f.clone();
    let base_report = neural_cleanse(&mut f_base, &clean, &nc_config(&desk.cfg, core.seed)).unwrap();
    let target_flagged = base_report.flagged.contains(&0);
    let base_max = base_report.max_index();

    let mut f_dyn = dynamic().f.clone();
    let dyn_report = neural_cleanse(&mut f_dyn, &clean, &nc_config(&desk.cfg, core.seed)).unwrap();
    let dyn_max = dyn_report.max_index();

    gate(
        "C6a neural-cleanse",
        base_max > 2.0 && target_flagged && dyn_max < 2.0,
        &format!(
            "baseline max index {base_max:.2} (>2, target flagged: {target_flagged}, flagged {:?}); dynamic max index {dyn_max:.2} (<2)",
            base_report.flagged
        ),
    );
}

#[test]
fn c6b_perturbation_entropy() {
    let desk = desk();
    let core = desk.cfg.to_core().unwrap();
    let n = desk.cfg.defense.strip_inputs.min(desk.test_data.len());
    let strip_cfg = StripConfig {
        n_overlays: desk.cfg.defense.strip_overlays,
        seed: core.seed,
    };
    let overlays: Vec<LabeledImage> = desk.test_data.iter().rev().take(512).cloned().collect();
    let clean_inputs: Vec<Tensor> = desk
        .test_data
        .iter()
        .take(n)
        .map(|d| d.pixels.clone())
        .collect();

    // baseline: static-trigger poisoned probes
    let base = baseline();
    let mut f_base = base.f.clone();
    let poisoned_static: Vec<Tensor> = desk
        .test_data
        .iter()
        .take(n)
        .map(|d| inject(&d.pixels, base.trigger.trigger()).unwrap())
        .collect();
    let base_clean = strip_distribution(&mut f_base, &clean_inputs, &overlays, &strip_cfg).unwrap();
    let base_poisoned =
        strip_distribution(&mut f_base, &poisoned_static, &overlays, &strip_cfg).unwrap();

    // dynamic: generator-poisoned probes
    let dyn_model = dynamic();
    let mut f_dyn = dyn_model.f.clone();
    let mut g_m = desk.g_m.clone();
    let mut g_p = dyn_model.g_p.clone();
    let poisoned_dynamic: Vec<Tensor> = desk
        .test_data
        .iter()
        .take(n)
        .map(|d| {
            let mut shape = vec![1usize];
            shape.extend_from_slice(d.pixels.shape());
            let x = Tensor::from_vec(d.pixels.data().to_vec(), &shape).unwrap();
            let tb = dynback_core::trigger::generate_trigger(&mut g_m, &mut g_p, &x);
            let inj = dynback_core::trigger::inject_batch_indexed(&x, &tb.masks, &tb.patterns, &[0]);
            Tensor::from_vec(inj.item(0).to_vec(), d.pixels.shape()).unwrap()
        })
        .collect();
    let dyn_clean = strip_distribution(&mut f_dyn, &clean_inputs, &overlays, &strip_cfg).unwrap();
    let dyn_poisoned =
        strip_distribution(&mut f_dyn, &poisoned_dynamic, &overlays, &strip_cfg).unwrap();

    let base_ratio = base_poisoned.median / base_clean.median.max(1e-9);
    let dyn_ratio = dyn_poisoned.median / dyn_clean.median.max(1e-9);
    gate(
        "C6b perturbation-entropy",
        base_ratio < 0.25 && dyn_ratio >= 0.5,
        &format!(
            "baseline poisoned/clean median {:.4}/{:.4} = {base_ratio:.3} (<0.25); dynamic {:.4}/{:.4} = {dyn_ratio:.3} (>=0.5)",
            base_poisoned.median, base_clean.median, dyn_poisoned.median, dyn_clean.median
        ),
    );
}

#[test]
fn c6c_channel_pruning() {
    let desk = desk();
    let core = desk.cfg.to_core().unwrap();
    let dyn_model = dynamic();
    let mut g_m = desk.g_m.clone();
    let mut g_p = dyn_model.g_p.clone();
    let clean: Vec<LabeledImage> = desk
        .test_data
        .iter()
        .take(desk.cfg.defense.fineprune_clean)
        .cloned()
        .collect();
    let eval_set: Vec<LabeledImage> = desk
        .test_data
        .iter()
        .take(desk.cfg.defense.fineprune_eval)
        .cloned()
        .collect();
    let mut src = TriggerSource::Generator {
        g_m: &mut g_m,
        g_p: &mut g_p,
    };
    let curve = fine_prune(
        &dyn_model.f,
        &clean,
        &eval_set,
        &mut src,
        core.target_rule,
        desk.cfg.defense.fineprune_step,
        &eval_opts(&core),
    )
    .unwrap();
    // largest clean-minus-attack gap while the model is still usable
    let mut worst_gap = f32::NEG_INFINITY;
    let mut at = 0usize;
    for p in &curve.points {
        if p.clean_acc >= 50.0 && p.clean_acc - p.attack_acc > worst_gap {
            worst_gap = p.clean_acc - p.attack_acc;
            at = p.neurons_pruned;
        }
    }
    gate(
        "C6c channel-pruning",
        worst_gap <= 20.0,
        &format!(
            "max clean-attack gap {worst_gap:.2} (at {at} pruned, gate <=20) over {} points",
            curve.points.len()
        ),
    );
}

#[test]
fn c6d_activation_heatmaps() {
    let desk = desk();
    let n = desk.cfg.defense.gradcam_inputs.min(desk.test_data.len());
    let (h, w, _) = desk.cfg.to_core().unwrap().dataset.input_shape;
    let region = (h - 3, w - 3, 3usize, 3usize);

    let base = baseline();
    let mut f_base = base.f.clone();
    let mut base_ratios = Vec::with_capacity(n);
    for item in desk.test_data.iter().take(n) {
        let poisoned = inject(&item.pixels, base.trigger.trigger()).unwrap();
        let class = predicted_class(&mut f_base, &poisoned);
        let map = gradcam(&mut f_base, &poisoned, class).unwrap();
        base_ratios.push(heat_ratio_in_region(&map, region));
    }
    let base_mean = base_ratios.iter().sum::<f32>() / base_ratios.len() as f32;

    let dyn_model = dynamic();
    let mut f_dyn = dyn_model.f.clone();
    let mut g_m = desk.g_m.clone();
    let mut g_p = dyn_model.g_p.clone();
    let mut dyn_ratios = Vec::with_capacity(n);
    for item in desk.test_data.iter().take(n) {
        let mut shape = vec![1usize];
        shape.extend_from_slice(item.pixels.shape());
        let x = Tensor::from_vec(item.pixels.data().to_vec(), &shape).unwrap();
        let tb = dynback_core::trigger::generate_trigger(&mut g_m, &mut g_p, &x);
        let inj_b = dynback_core::trigger::inject_batch_indexed(&x, &tb.masks, &tb.patterns, &[0]);
        let poisoned = Tensor::from_vec(inj_b.item(0).to_vec(), item.pixels.shape()).unwrap();
        let class = predicted_class(&mut f_dyn, &poisoned);
        let map = gradcam(&mut f_dyn, &poisoned, class).unwrap();
        dyn_ratios.push(heat_ratio_in_region(&map, region));
    }
    let dyn_mean = dyn_ratios.iter().sum::<f32>() / dyn_ratios.len() as f32;

    gate(
        "C6d activation-heatmaps",
        base_mean >= 3.0 && dyn_mean < 2.0,
        &format!(
            "baseline patch heat ratio {base_mean:.2} (>=3); dynamic {dyn_mean:.2} (<2) over {n} inputs"
        ),
    );
}

fn predicted_class(f: &mut ClassifierModel, image: &Tensor) -> u32 {
    let mut shape = vec![1usize];
    shape.extend_from_slice(image.shape());
    let x = Tensor::from_vec(image.data().to_vec(), &shape).unwrap();
    let logits = f.forward_eval(x);
    let mut best = 0usize;
    for j in 1..logits.len() {
        if logits.data()[j] > logits.data()[best] {
            best = j;
        }
    }
    best as u32
}

// Report-only: clean/attack accuracy of the dynamic model under input
// squeezing. No gate (desk-scale analog of the full-scale table); asserts
// only that the table is well-formed.
#[test]
fn squeeze_regularization_report() {
    let desk = desk();
    let dyn_model = dynamic();
    let mut f = dyn_model.f.clone();
    let mut g_m = desk.g_m.clone();
    let mut g_p = dyn_model.g_p.clone();
    let core = desk.cfg.to_core().unwrap();
    let n = 1000.min(desk.test_data.len());
    let idxs: Vec<u32> = (0..n as u32).collect();
    let (x, y) = dynback_core::dataset::assemble(&desk.test_data, &idxs);
    let tb = dynback_core::trigger::generate_trigger(&mut g_m, &mut g_p, &x);
    let src: Vec<u32> = (0..n as u32).collect();
    let poisoned = dynback_core::trigger::inject_batch_indexed(&x, &tb.masks, &tb.patterns, &src);

    println!("input-squeezing table (dynamic model, {n} test images):");
    for (name, method) in [
        ("original", None),
        ("median k=3", Some(SqueezeMethod::MedianSmooth { k: 3 })),
        ("median k=5", Some(SqueezeMethod::MedianSmooth { k: 5 })),
        ("3 bits", Some(SqueezeMethod::DepthShrink { bits: 3 })),
        ("1 bit", Some(SqueezeMethod::DepthShrink { bits: 1 })),
    ] {
        let xc = match method {
            Some(m) => dynback_core::defense::squeeze_batch(&x, m).unwrap(),
            None => x.clone(),
        };
        let xa = match method {
            Some(m) => dynback_core::defense::squeeze_batch(&poisoned, m).unwrap(),
            None => poisoned.clone(),
        };
        let clean_logits = f.forward_eval(xc);
        let clean_acc =
            100.0 * dynback_core::evaluate::count_correct(&clean_logits, &y) as f32 / n as f32;
        let attack_logits = f.forward_eval(xa);
        let expected: Vec<u32> = y
            .iter()
            .map(|&label| target_label(label, core.target_rule, core.dataset.class_count))
            .collect();
        let attack_acc = 100.0
            * dynback_core::evaluate::count_correct(&attack_logits, &expected) as f32
            / n as f32;
        println!("  {name:<12} clean {clean_acc:6.2}  attack {attack_acc:6.2}");
        assert!((0.0..=100.0).contains(&clean_acc));
        assert!((0.0..=100.0).contains(&attack_acc));
    }
}

// --- criterion 7 -----------------------------------------------------------

#[test]
fn c7_property_suite() {
    let spec = DatasetSpec::mnist();
    let mut failures: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // generator output range (0,1) under extreme inputs
    {
        let mut g = build_generator(&spec, 1, &mut SeededRng::new(1, streams::MODEL_GM)).unwrap();
        let mut rng = SeededRng::new(2, 0);
        let mut x = Tensor::zeros(&[2, 1, 28, 28]);
        x.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform_in(-500.0, 500.0));
        let y = g.forward_eval(x);
        check("generator-range", y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    // three-branch construction correctness with explicit blend checks
    {
        let mut rng = SeededRng::new(3, 0);
        let mk = |rng: &mut SeededRng, shape: &[usize]| {
            let mut t = Tensor::zeros(shape);
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
            t
        };
        let x = mk(&mut rng, &[3, 1, 2, 2]);
        let masks = mk(&mut rng, &[3, 1, 2, 2]);
        let patterns = mk(&mut rng, &[3, 1, 2, 2]);
        let modes = [ModeDraw::Attack, ModeDraw::Cross, ModeDraw::Clean];
        let cb = compose_batch(&x, &[1, 2, 3], &masks, &patterns, &modes, TargetRule::Single(7), 10);
        let mut ok = cb.labels == vec![7, 2, 3];
        for e in 0..4 {
            let m0 = masks.item(0)[e];
            ok &= cb.inputs.item(0)[e] == x.item(0)[e] * (1.0 - m0) + patterns.item(0)[e] * m0;
            let m2 = masks.item(2)[e];
            ok &= cb.inputs.item(1)[e] == x.item(1)[e] * (1.0 - m2) + patterns.item(2)[e] * m2;
            ok &= cb.inputs.item(2)[e] == x.item(2)[e];
        }
        check("three-branch-construction", ok);
    }

    // mode-sampling frequencies within 3 sigma
    {
        let mut rng = SeededRng::new(4, streams::MODES);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            match draw_mode(&mut rng, 0.1, 0.1) {
                ModeDraw::Attack => counts[0] += 1,
                ModeDraw::Cross => counts[1] += 1,
                ModeDraw::Clean => counts[2] += 1,
            }
        }
        let ok = counts
            .iter()
            .zip([0.1f64, 0.1, 0.8])
            .all(|(&count, p)| {
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                (count as f64 / n as f64 - p).abs() <= 3.0 * sigma
            });
        check("mode-frequencies-3sigma", ok);
    }

    // exact loss additivity on a real training step
    {
        let mut rng = SeededRng::new(5, 0);
        let data: Vec<LabeledImage> = (0..8)
            .map(|_| {
                let mut t = Tensor::zeros(&[1, 28, 28]);
                t.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
                LabeledImage::new(t, rng.below(10) as u32, 10).unwrap()
            })
            .collect();
        let mut cfg = dynback_core::training::ExperimentConfig::full_scale(
            {
                let mut s = spec.clone();
                s.name = "tiny".into();
                s.augmentation_policy.clear();
                s
            },
            TargetRule::Single(0),
        );
        cfg.lambda_div = 0.7;
        cfg.batch_size = 8;
        let mut f = build_classifier(&cfg.dataset, &mut SeededRng::new(5, streams::MODEL_F)).unwrap();
        let mut g_p =
            build_generator(&cfg.dataset, 1, &mut SeededRng::new(5, streams::MODEL_GP)).unwrap();
        let g_m0 =
            build_generator(&cfg.dataset, 1, &mut SeededRng::new(5, streams::MODEL_GM)).unwrap();
        let (mut g_m, _) = pretrain_mask_generator(
            g_m0,
            &data,
            &dynback_core::trigger::MaskPretrainConfig {
                epochs: 1,
                batch_size: 8,
                schedule: StepSchedule::constant(0.01),
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let (x, y) = dynback_core::dataset::assemble(&data, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let mut opt_f = dynback_core::nn::Sgd::new(0.01, 0.9, 5e-4);
        let mut opt_g = dynback_core::nn::Adam::new(0.01);
        let lb = training_step(
            &mut f,
            &mut g_p,
            &mut g_m,
            &mut opt_f,
            &mut opt_g,
            &x,
            &y,
            &cfg,
            &mut SeededRng::new(5, streams::MODES),
            &mut SeededRng::new(5, streams::DROPOUT),
        )
        .unwrap();
        check(
            "loss-additivity-exact",
            lb.l_total == lb.l_cla + cfg.lambda_div * lb.l_div,
        );
    }

    // all-to-all bijectivity
    {
        let mut ok = true;
        for m in [2usize, 10, 43] {
            let mut seen = vec![false; m];
            for y in 0..m as u32 {
                let t = target_label(y, TargetRule::AllToAll, m) as usize;
                ok &= !seen[t];
                seen[t] = true;
            }
            ok &= seen.iter().all(|&s| s);
        }
        check("all-to-all-bijection", ok);
    }

    // entropy bounds [0, ln M]
    {
        let mut f = build_classifier(&spec, &mut SeededRng::new(6, streams::MODEL_F)).unwrap();
        let mut rng = SeededRng::new(7, 0);
        let overlays: Vec<LabeledImage> = (0..16)
            .map(|_| {
                let mut t = Tensor::zeros(&[1, 28, 28]);
                t.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
                LabeledImage::new(t, 0, 10).unwrap()
            })
            .collect();
        let inputs: Vec<Tensor> = overlays.iter().take(4).map(|o| o.pixels.clone()).collect();
        let rep = strip_distribution(
            &mut f,
            &inputs,
            &overlays,
            &StripConfig {
                n_overlays: 8,
                seed: 0,
            },
        )
        .unwrap();
        let ln_m = dynback_core::math::ln(10.0);
        check(
            "entropy-bounds",
            rep.entropies.iter().all(|&e| (0.0..=ln_m + 1e-6).contains(&e)),
        );
    }

    // depth-shrink idempotence, exact
    {
        let mut rng = SeededRng::new(8, 0);
        let mut x = Tensor::zeros(&[1, 6, 6]);
        x.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
        let mut ok = true;
        for bits in 1..=7u32 {
            let once = squeeze(&x, SqueezeMethod::DepthShrink { bits }).unwrap();
            let twice = squeeze(&once, SqueezeMethod::DepthShrink { bits }).unwrap();
            ok &= once.data() == twice.data();
        }
        check("depth-shrink-idempotent", ok);
    }

    // median filter output drawn from the neighborhood
    {
        let mut rng = SeededRng::new(9, 0);
        let mut x = Tensor::zeros(&[1, 7, 7]);
        x.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
        let out = squeeze(&x, SqueezeMethod::MedianSmooth { k: 3 }).unwrap();
        let mut ok = true;
        for y in 0..7usize {
            for xx in 0..7usize {
                let v = out.data()[y * 7 + xx];
                let mut found = false;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let sy = (y as isize + dy).clamp(0, 6) as usize;
                        let sx = (xx as isize + dx).clamp(0, 6) as usize;
                        found |= x.data()[sy * 7 + sx] == v;
                    }
                }
                ok &= found;
            }
        }
        check("median-neighborhood-membership", ok);
    }

    // checkpoint round-trip bit-exactness
    {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.ckpt");
        let mut model = build_classifier(&spec, &mut SeededRng::new(10, streams::MODEL_F)).unwrap();
        let mut rng = SeededRng::new(11, 0);
        let mut x = Tensor::zeros(&[2, 1, 28, 28]);
        x.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
        let before: Vec<u32> = model
            .forward_eval(x.clone())
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let meta = dynback_cli::checkpoint::CheckpointMeta::new(&spec, 10, 0, "acceptance");
        dynback_cli::checkpoint::save_classifier(&path, &model, &meta).unwrap();
        let (mut loaded, _) = dynback_cli::checkpoint::load_classifier(&path).unwrap();
        let after: Vec<u32> = loaded
            .forward_eval(x)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        check("checkpoint-round-trip-bit-exact", before == after);
    }

    // finite-difference gradient within 1e-2 relative (composition through
    // injection into the classifier)
    {
        check("finite-difference-gradient", fd_gradient_ok());
    }

    let pass = failures.is_empty();
    gate(
        "C7 property-suite",
        pass,
        &if pass {
            "all 10 property checks passed".to_string()
        } else {
            format!("failing checks: {failures:?}")
        },
    );
}

fn fd_gradient_ok() -> bool {
    let spec = DatasetSpec::mnist();
    let mut f = build_classifier(&spec, &mut SeededRng::new(12, streams::MODEL_F)).unwrap();
    let mut g_p = build_generator(&spec, 1, &mut SeededRng::new(12, streams::MODEL_GP)).unwrap();
    let mut g_m = build_generator(&spec, 1, &mut SeededRng::new(12, streams::MODEL_GM)).unwrap();
    g_m.freeze();
    let mut rng = SeededRng::new(5, 0);
    let mut x = Tensor::zeros(&[2, 1, 28, 28]);
    x.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
    let masks = g_m.forward_eval(x.clone());

    let mean_score = |f: &mut ClassifierModel, g_p: &mut GeneratorModel, x: &Tensor| -> f64 {
        let mut dummy = SeededRng::new(0, 99);
        let patterns = g_p.forward(x.clone(), &mut Ctx::train(&mut dummy));
        let src: Vec<u32> = (0..x.shape()[0] as u32).collect();
        let inj = dynback_core::trigger::inject_batch_indexed(x, &masks, &patterns, &src);
        let logits = f.forward(inj, &mut Ctx::eval());
        logits.data().iter().map(|&v| v as f64).sum::<f64>() / logits.len() as f64
    };

    // analytic gradient into the first conv's weights
    dynback_core::nn::zero_grads(&mut g_p);
    let mut dummy = SeededRng::new(0, 99);
    let patterns = g_p.forward(x.clone(), &mut Ctx::train(&mut dummy));
    let src: Vec<u32> = (0..2u32).collect();
    let inj = dynback_core::trigger::inject_batch_indexed(&x, &masks, &patterns, &src);
    let logits = f.forward(inj, &mut Ctx::eval());
    let dlogits = Tensor::filled(logits.shape(), 1.0 / logits.len() as f32);
    let dinj = f.backward(dlogits);
    let mut dpat = Tensor::zeros(patterns.shape());
    let hw = masks.item_len();
    for i in 0..2 {
        let mi = masks.item(i);
        let di = dinj.item(i);
        let dp = dpat.item_mut(i);
        for e in 0..hw {
            dp[e] = di[e] * mi[e];
        }
    }
    g_p.backward(dpat);

    let mut probe: Option<(usize, f32)> = None;
    let mut idx = 0usize;
    use dynback_core::nn::Parameterized;
    g_p.visit_params(&mut |pm| {
        if idx == 0 {
            let (mut be, mut bv) = (0usize, 0.0f32);
            for (e, &g) in pm.grad.data().iter().enumerate() {
                if g.abs() > bv.abs() {
                    be = e;
                    bv = g;
                }
            }
            probe = Some((be, bv));
        }
        idx += 1;
    });
    let (elem, analytic) = probe.unwrap();
    if analytic == 0.0 {
        return false;
    }
    let h = 1e-3f32;
    let set = |g_p: &mut GeneratorModel, delta: f32| {
        let mut i = 0usize;
        g_p.visit_params(&mut |pm| {
            if i == 0 {
                pm.value.data_mut()[elem] += delta;
            }
            i += 1;
        });
    };
    set(&mut g_p, h);
    let lp = mean_score(&mut f, &mut g_p, &x);
    set(&mut g_p, -2.0 * h);
    let lm = mean_score(&mut f, &mut g_p, &x);
    set(&mut g_p, h);
    let fd = ((lp - lm) / (2.0 * h as f64)) as f32;
    (fd - analytic).abs() <= 1e-2 * analytic.abs()
}

// --- criterion 8 -----------------------------------------------------------

#[test]
fn c8_full_scale_recipes_declared_not_gated() {
    let root = workspace_root();
    let mut parsed = Vec::new();
    for name in ["mnist_full", "cifar10_full", "gtsrb_full"] {
        let path = root.join(format!("configs/{name}.toml"));
        let cfg = ConfigFile::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
        let core = cfg.to_core().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(core.epochs, 600);
        assert_eq!(core.opt_f.schedule.lr_at(99), 0.01);
        assert!((core.opt_f.schedule.lr_at(100) - 0.001).abs() < 1e-9);
        assert_eq!(core.opt_g.schedule.lr_at(199), 0.01);
        assert!((core.opt_g.schedule.lr_at(200) - 0.001).abs() < 1e-9);
        parsed.push(name);
    }
    gate(
        "C8 declared-not-reproduced",
        parsed.len() == 3,
        "full-scale recipes ship as configs ({mnist, cifar10, gtsrb}; 600-epoch schedules verified); their published accuracies, the loss-landscape-path defense, and absolute full-scale anomaly indices are declared out of desk-scale scope",
    );
}
