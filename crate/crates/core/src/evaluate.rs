//! The three evaluation passes: clean, attack, and cross-trigger.
//!
//! Attack and cross triggers are generated from the test images themselves,
//! never from training data. Cross pairing walks a seeded permutation of the
//! test order and blends each image with the trigger generated for its
//! successor, so results are reproducible for a fixed seed.

use alloc::vec::Vec;

use crate::dataset::{assemble, LabeledImage};
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, GeneratorModel};
use crate::rng::{streams, SeededRng};
use crate::tensor::Tensor;
use crate::training::{target_label, ExperimentConfig, TargetRule};
use crate::trigger::{blend_into, generate_trigger};

/// Accuracy triple in percent, plus the sample counts behind each number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub clean_acc: f32,
    pub attack_acc: f32,
    pub cross_acc: f32,
    pub n_clean: usize,
    pub n_attack: usize,
    pub n_cross: usize,
    pub target_rule: TargetRule,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// For single-target rules, drop samples whose true label equals the
    /// target from the attack accuracy so trivially-correct predictions do
    /// not count as attack success.
    pub exclude_target_class: bool,
    pub pairing_seed: u64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exclude_target_class: true,
            pairing_seed: 0,
            batch_size: 256,
        }
    }
}

/// Rows of `logits` whose argmax equals the expected label.
pub fn count_correct(logits: &Tensor, expected: &[u32]) -> usize {
    assert_eq!(logits.shape()[0], expected.len());
    let m = logits.shape()[1];
    let mut correct = 0;
    for (row, &want) in expected.iter().enumerate() {
        let xs = &logits.data()[row * m..(row + 1) * m];
        let mut best = 0usize;
        for j in 1..m {
            if xs[j] > xs[best] {
                best = j;
            }
        }
        if best == want as usize {
            correct += 1;
        }
    }
    correct
}

/// Run the clean, attack, and cross-trigger tests over a test set.
pub fn evaluate(
    f: &mut ClassifierModel,
    g_m: &mut GeneratorModel,
    g_p: &mut GeneratorModel,
    test: &[LabeledImage],
    rule: TargetRule,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let n = test.len();
    let bs = opts.batch_size.max(1);
    let class_count = f.class_count;
    let chw = test[0].pixels.shape().to_vec();
    let (c, hw) = (chw[0], chw[1] * chw[2]);

    // pass 1: clean accuracy + per-image triggers
    let mut all_masks = Tensor::zeros(&[n, 1, chw[1], chw[2]]);
    let mut all_patterns = Tensor::zeros(&[n, c, chw[1], chw[2]]);
    let mut clean_correct = 0usize;
    let idx_all: Vec<u32> = (0..n as u32).collect();
    for chunk in idx_all.chunks(bs) {
        let (x, y) = assemble(test, chunk);
        let logits = f.forward_eval(x.clone());
        clean_correct += count_correct(&logits, &y);
        let tb = generate_trigger(g_m, g_p, &x);
        for (local, &g) in chunk.iter().enumerate() {
            all_masks
                .item_mut(g as usize)
                .copy_from_slice(tb.masks.item(local));
            all_patterns
                .item_mut(g as usize)
                .copy_from_slice(tb.patterns.item(local));
        }
    }

    // pass 2: attack accuracy on triggers generated from the same images
    let attack_idx: Vec<u32> = (0..n as u32)
        .filter(|&i| {
            if let (TargetRule::Single(target), true) = (rule, opts.exclude_target_class) {
                test[i as usize].label != target
            } else {
                true
            }
        })
        .collect();
    let mut attack_correct = 0usize;
    for chunk in attack_idx.chunks(bs) {
        let (x, y) = assemble(test, chunk);
        let mut inj = Tensor::zeros(x.shape());
        for (local, &g) in chunk.iter().enumerate() {
            blend_into(
                inj.item_mut(local),
                &x.item(local)[..c * hw],
                all_masks.item(g as usize),
                all_patterns.item(g as usize),
                c,
            );
        }
        let logits = f.forward_eval(inj);
        let expected: Vec<u32> = y
            .iter()
            .map(|&label| target_label(label, rule, class_count))
            .collect();
        attack_correct += count_correct(&logits, &expected);
    }

    // pass 3: cross accuracy via a seeded cyclic shift of the test order
    let mut pair_rng = SeededRng::new(opts.pairing_seed, streams::EVAL_PAIRING);
    let order = pair_rng.permutation(n);
    let mut cross_correct = 0usize;
    for chunk_start in (0..n).step_by(bs) {
        let hi = (chunk_start + bs).min(n);
        let idxs: Vec<u32> = (chunk_start..hi).map(|k| order[k]).collect();
        let (x, y) = assemble(test, &idxs);
        let mut inj = Tensor::zeros(x.shape());
        for (local, k) in (chunk_start..hi).enumerate() {
            let donor = order[(k + 1) % n] as usize;
            blend_into(
                inj.item_mut(local),
                &x.item(local)[..c * hw],
                all_masks.item(donor),
                all_patterns.item(donor),
                c,
            );
        }
        let logits = f.forward_eval(inj);
        cross_correct += count_correct(&logits, &y);
    }

    Ok(MetricsReport {
        clean_acc: 100.0 * clean_correct as f32 / n as f32,
        attack_acc: if attack_idx.is_empty() {
            f32::NAN
        } else {
            100.0 * attack_correct as f32 / attack_idx.len() as f32
        },
        cross_acc: 100.0 * cross_correct as f32 / n as f32,
        n_clean: n,
        n_attack: attack_idx.len(),
        n_cross: n,
        target_rule: rule,
    })
}

/// Which probability the sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhoAxis {
    Backdoor,
    Cross,
}

/// Train-and-evaluate once per rho value, each run from a fresh derived seed.
/// The pretrained mask generator is shared across runs (it does not depend
/// on the mode probabilities).
pub fn rho_sweep(
    base: &ExperimentConfig,
    axis: RhoAxis,
    values: &[f32],
    train_data: &[LabeledImage],
    test_data: &[LabeledImage],
    g_m: &mut GeneratorModel,
) -> Result<Vec<(f32, MetricsReport)>> {
    let mut out = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let mut cfg = base.clone();
        match axis {
            RhoAxis::Backdoor => cfg.rho_b = v,
            RhoAxis::Cross => cfg.rho_c = v,
        }
        cfg.seed = crate::rng::derive_seed(base.seed, 1 + i as u64);
        cfg.validate()?;
        let mut f = crate::models::build_classifier(
            &cfg.dataset,
            &mut SeededRng::new(cfg.seed, streams::MODEL_F),
        )?;
        let mut g_p = crate::models::build_generator(
            &cfg.dataset,
            cfg.dataset.input_shape.2,
            &mut SeededRng::new(cfg.seed, streams::MODEL_GP),
        )?;
        crate::training::train(&mut f, &mut g_p, g_m, train_data, test_data, &cfg, None)?;
        let report = evaluate(
            &mut f,
            g_m,
            &mut g_p,
            test_data,
            cfg.target_rule,
            &EvalOptions {
                exclude_target_class: cfg.attack_acc_excludes_target,
                pairing_seed: cfg.seed,
                batch_size: cfg.batch_size,
            },
        )?;
        out.push((v, report));
    }
    Ok(out)
}
