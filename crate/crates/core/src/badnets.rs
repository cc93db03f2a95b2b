//! Static-trigger poisoning baseline.
//!
//! Training samples are replaced by poisoned ones with probability rho: the
//! fixed trigger is blended in and the label swapped to the target rule's
//! class. This is the control model the defense gates compare against; at
//! evaluation time the constant trigger stands in for the generator, so the
//! cross-trigger test degenerates to the attack test with the true labels.

use alloc::vec::Vec;

use crate::dataset::{assemble, assemble_augmented, Batcher, LabeledImage};
use crate::error::{Error, Result};
use crate::evaluate::{count_correct, MetricsReport};
use crate::models::ClassifierModel;
use crate::nn::{cross_entropy_mean, zero_grads, Module, Sgd};
use crate::rng::{streams, SeededRng};
use crate::tensor::Tensor;
use crate::training::{target_label, EpochStats, ExperimentConfig, TargetRule};
use crate::trigger::{blend_into, StaticTriggerSpec, Trigger};

/// Poisoning policy for the baseline.
#[derive(Clone, Debug)]
pub struct PoisonPolicy {
    /// Per-sample replacement probability.
    pub rho: f32,
    pub trigger: StaticTriggerSpec,
    pub target_rule: TargetRule,
}

impl PoisonPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config("poison rate must be in [0,1)"));
        }
        Ok(())
    }
}

/// Train a classifier under static-trigger poisoning. Reuses the experiment
/// config for the optimizer, schedule, batching, and seeding; the generator
/// settings are ignored.
pub fn train_badnets(
    f: &mut ClassifierModel,
    train_data: &[LabeledImage],
    probe: &[LabeledImage],
    cfg: &ExperimentConfig,
    policy: &PoisonPolicy,
    mut on_epoch: Option<&mut dyn FnMut(&EpochStats, &ClassifierModel)>,
) -> Result<Vec<EpochStats>> {
    cfg.dataset.validate()?;
    policy.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    let trigger = policy.trigger.trigger();
    let class_count = cfg.dataset.class_count;
    let mut opt_f = Sgd::new(
        cfg.opt_f.schedule.base_lr,
        cfg.opt_f.momentum,
        cfg.opt_f.weight_decay,
    );
    let mut batch_rng = SeededRng::new(cfg.seed, streams::BATCHES);
    let mut poison_rng = SeededRng::new(cfg.seed, streams::POISON);
    let mut dropout_rng = SeededRng::new(cfg.seed, streams::DROPOUT);
    let mut augment_rng = SeededRng::new(cfg.seed, streams::AUGMENT);

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt_f.lr = cfg.opt_f.schedule.lr_at(epoch);
        let batcher = Batcher::new(train_data.len(), cfg.batch_size, &mut batch_rng)?;
        let mut loss_sum = 0.0f64;
        let mut steps = 0usize;
        let mut poisoned = 0usize;
        let mut total = 0usize;
        for idxs in batcher.iter() {
            let (mut x, mut y) = assemble_augmented(
                train_data,
                idxs,
                &cfg.dataset.augmentation_policy,
                &mut augment_rng,
            );
            let (b, c, _, _) = x.dims4();
            for i in 0..b {
                total += 1;
                if poison_rng.bernoulli(policy.rho) {
                    poisoned += 1;
                    let clean = x.item(i).to_vec();
                    blend_into(
                        x.item_mut(i),
                        &clean,
                        trigger.mask.data(),
                        trigger.pattern.data(),
                        c,
                    );
                    y[i] = target_label(y[i], policy.target_rule, class_count);
                }
            }
            zero_grads(f);
            let logits = f.forward_train(x, &mut dropout_rng);
            let (loss, dlogits) = cross_entropy_mean(&logits, &y);
            if !loss.is_finite() || !logits.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: steps,
                    loss,
                    lr_f: opt_f.lr,
                    lr_g: 0.0,
                    modes: [poisoned, 0, total - poisoned],
                });
            }
            f.backward(dlogits);
            opt_f.step(f);
            loss_sum += loss as f64;
            steps += 1;
        }

        let (clean_acc, attack_acc, cross_acc) = if cfg.probe_size > 0 && !probe.is_empty() {
            let probe_slice = &probe[..cfg.probe_size.min(probe.len())];
            let r = evaluate_static(
                f,
                trigger,
                probe_slice,
                policy.target_rule,
                cfg.attack_acc_excludes_target,
                cfg.batch_size,
            )?;
            (r.clean_acc, r.attack_acc, r.cross_acc)
        } else {
            (f32::NAN, f32::NAN, f32::NAN)
        };

        let stats = EpochStats {
            epoch,
            l_cla: (loss_sum / steps.max(1) as f64) as f32,
            l_div: 0.0,
            l_total: (loss_sum / steps.max(1) as f64) as f32,
            clean_acc,
            attack_acc,
            cross_acc,
            lr_f: opt_f.lr,
            lr_g: 0.0,
            mode_counts: [poisoned, 0, total - poisoned],
        };
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&stats, f);
        }
        history.push(stats);
    }
    Ok(history)
}

/// Evaluate a classifier against a constant trigger. The cross test blends
/// the same trigger (a static trigger is its own cross trigger) but scores
/// against the true labels, mirroring the dynamic evaluation contract.
pub fn evaluate_static(
    f: &mut ClassifierModel,
    trigger: &Trigger,
    test: &[LabeledImage],
    rule: TargetRule,
    exclude_target_class: bool,
    batch_size: usize,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let n = test.len();
    let bs = batch_size.max(1);
    let class_count = f.class_count;
    let mut clean_correct = 0usize;
    let mut cross_correct = 0usize;
    let mut attack_correct = 0usize;
    let mut attack_total = 0usize;
    let idx_all: Vec<u32> = (0..n as u32).collect();
    for chunk in idx_all.chunks(bs) {
        let (x, y) = assemble(test, chunk);
        let logits = f.forward_eval(x.clone());
        clean_correct += count_correct(&logits, &y);

        let (b, c, _, _) = x.dims4();
        let mut inj = Tensor::zeros(x.shape());
        for i in 0..b {
            blend_into(
                inj.item_mut(i),
                x.item(i),
                trigger.mask.data(),
                trigger.pattern.data(),
                c,
            );
        }
        let logits_inj = f.forward_eval(inj);
        // cross: same injected input, scored against true labels
        cross_correct += count_correct(&logits_inj, &y);
        // attack: scored against the target rule, optionally excluding y == c
        for (row, &label) in y.iter().enumerate() {
            if let (TargetRule::Single(t), true) = (rule, exclude_target_class) {
                if label == t {
                    continue;
                }
            }
            attack_total += 1;
            let m = logits_inj.shape()[1];
            let xs = &logits_inj.data()[row * m..(row + 1) * m];
            let mut best = 0usize;
            for j in 1..m {
                if xs[j] > xs[best] {
                    best = j;
                }
            }
            if best == target_label(label, rule, class_count) as usize {
                attack_correct += 1;
            }
        }
    }
    Ok(MetricsReport {
        clean_acc: 100.0 * clean_correct as f32 / n as f32,
        attack_acc: if attack_total == 0 {
            f32::NAN
        } else {
            100.0 * attack_correct as f32 / attack_total as f32
        },
        cross_acc: 100.0 * cross_correct as f32 / n as f32,
        n_clean: n,
        n_attack: attack_total,
        n_cross: n,
        target_rule: rule,
    })
}
