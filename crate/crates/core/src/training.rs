//! Joint training of the classifier and the pattern generator.
//!
//! Each sample in a batch draws one of three modes: attack (inject the
//! sample's own trigger, relabel to the target), cross (inject the trigger
//! generated for a different sample, keep the true label), or clean. The
//! classification loss is mean cross-entropy over the composed batch; the
//! diversity regularizer pushes pattern distances to scale with input
//! distances. Both models update from the same total loss.

use alloc::vec::Vec;

use crate::dataset::{assemble_augmented, Batcher, LabeledImage};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalOptions};
use crate::models::{ClassifierModel, GeneratorModel};
use crate::nn::{cross_entropy_mean, zero_grads, Adam, Module, Sgd, StepSchedule};
use crate::rng::{streams, SeededRng};
use crate::tensor::Tensor;
use crate::trigger::MaskPretrainConfig;

/// Denominator clamp for the diversity ratio.
pub const DIV_EPS: f32 = 1e-5;

/// How attack-mode labels are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetRule {
    /// Every attack sample maps to one fixed class.
    Single(u32),
    /// Class y maps to (y + 1) mod M.
    AllToAll,
}

/// The attack label for a sample of true class `y`.
pub fn target_label(y: u32, rule: TargetRule, class_count: usize) -> u32 {
    match rule {
        TargetRule::Single(c) => c,
        TargetRule::AllToAll => (y + 1) % class_count as u32,
    }
}

/// Which branch a training sample takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeDraw {
    Attack,
    Cross,
    Clean,
}

/// Draw a mode with probabilities (rho_b, rho_c, 1 - rho_b - rho_c).
pub fn draw_mode(rng: &mut SeededRng, rho_b: f32, rho_c: f32) -> ModeDraw {
    let d = rng.uniform();
    if d < rho_b {
        ModeDraw::Attack
    } else if d < rho_b + rho_c {
        ModeDraw::Cross
    } else {
        ModeDraw::Clean
    }
}

/// SGD settings for the classifier.
#[derive(Clone, Copy, Debug)]
pub struct SgdConfig {
    pub momentum: f32,
    pub weight_decay: f32,
    pub schedule: StepSchedule,
}

/// Adam settings for the pattern generator.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub schedule: StepSchedule,
}

/// Everything a training run needs.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: crate::dataset::DatasetSpec,
    /// Backdoor (attack-mode) probability.
    pub rho_b: f32,
    /// Cross-trigger probability. Zero disables the cross mode (ablation).
    pub rho_c: f32,
    pub lambda_div: f32,
    pub target_rule: TargetRule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train on the first `train_subset` images of the (shuffled) train split;
    /// `None` uses everything.
    pub train_subset: Option<usize>,
    /// Held-out probe size for per-epoch accuracy tracking (0 skips probes).
    pub probe_size: usize,
    pub opt_f: SgdConfig,
    pub opt_g: AdamConfig,
    pub mask_pretrain: MaskPretrainConfig,
    /// Exclude samples whose true label already equals the target from the
    /// attack accuracy (single-target only).
    pub attack_acc_excludes_target: bool,
}

impl ExperimentConfig {
    /// The nominal joint-training recipe for a dataset: rho_b = rho_c = 0.1,
    /// lambda_div = 1, SGD(0.01) for the classifier with 10x drops every 100
    /// epochs, Adam(0.01) for the generator dropping every 100 epochs from
    /// epoch 200.
    pub fn full_scale(dataset: crate::dataset::DatasetSpec, target_rule: TargetRule) -> Self {
        ExperimentConfig {
            dataset,
            rho_b: 0.1,
            rho_c: 0.1,
            lambda_div: 1.0,
            target_rule,
            epochs: 600,
            batch_size: 128,
            seed: 0,
            train_subset: None,
            probe_size: 1000,
            opt_f: SgdConfig {
                momentum: 0.9,
                weight_decay: 5e-4,
                schedule: StepSchedule::every(0.01, 100),
            },
            opt_g: AdamConfig {
                schedule: StepSchedule {
                    base_lr: 0.01,
                    gamma: 0.1,
                    step_every: 100,
                    start_epoch: 200,
                },
            },
            mask_pretrain: MaskPretrainConfig::default(),
            attack_acc_excludes_target: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if !(self.rho_b > 0.0 && self.rho_b < 1.0) {
            return Err(Error::config("rho_b must be in (0,1)"));
        }
        if !(0.0..1.0).contains(&self.rho_c) {
            return Err(Error::config("rho_c must be in [0,1)"));
        }
        if self.rho_b + self.rho_c >= 1.0 {
            return Err(Error::config("rho_b + rho_c must be < 1"));
        }
        if self.lambda_div < 0.0 {
            return Err(Error::config("lambda_div must be >= 0"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if let TargetRule::Single(c) = self.target_rule {
            if c as usize >= self.dataset.class_count {
                return Err(Error::config("target class out of range"));
            }
        }
        Ok(())
    }
}

/// Loss components of one step. `l_total = l_cla + lambda_div * l_div`
/// exactly, in f32.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub l_cla: f32,
    pub l_div: f32,
    pub l_total: f32,
    /// Samples per mode in this batch: [attack, cross, clean].
    pub mode_counts: [usize; 3],
}

/// Diversity loss over cyclic pairs, optionally accumulating its gradient
/// w.r.t. `outs` (scaled by `weight`) into the provided tensor.
///
/// For each i with partner j = (i+1) mod B:
///   num_i = mean |ref_i - ref_j|, den_i = clamp(mean |out_i - out_j|, eps, cap)
/// and the loss is the mean of num_i / den_i. The lower clamp stops the
/// ratio from blowing up when the generator saturates; the upper cap (used
/// by mask pretraining) makes the objective indifferent to spread beyond it.
/// No gradient flows through a clamped denominator.
pub fn diversity_batch(
    refs: &Tensor,
    outs: &Tensor,
    mut grad: Option<(&mut Tensor, f32)>,
    eps: f32,
    cap: f32,
) -> f32 {
    let b = refs.shape()[0];
    assert_eq!(outs.shape()[0], b);
    assert!(b >= 2, "diversity needs at least two samples");
    assert!(cap > eps, "cap must exceed eps");
    let k_out = outs.item_len();
    let mut total = 0.0f64;
    for i in 0..b {
        let j = (i + 1) % b;
        let num = crate::math::mean_abs_diff(refs.item(i), refs.item(j)) as f32;
        let den_raw = crate::math::mean_abs_diff(outs.item(i), outs.item(j)) as f32;
        let den = den_raw.clamp(eps, cap);
        total += (num / den) as f64;
        if let Some((g, weight)) = grad.as_mut() {
            if den_raw > eps && den_raw < cap {
                // d(num/den)/d out_i = -(num/den^2) * sign(out_i - out_j) / k
                let coef = -*weight * num / (den * den) / (b as f32 * k_out as f32);
                let (oi, oj) = (outs.item(i), outs.item(j));
                // two disjoint item views; indexes can't overlap unless b == 1
                for e in 0..k_out {
                    let s = (oi[e] - oj[e]).signum();
                    if oi[e] == oj[e] {
                        continue;
                    }
                    g.item_mut(i)[e] += coef * s;
                    g.item_mut(j)[e] -= coef * s;
                }
            }
        }
    }
    (total / b as f64) as f32
}

/// The per-pair diversity ratio: mean-L1 input distance over mean-L1
/// generator-output distance, denominator clamped at [`DIV_EPS`].
pub fn diversity_loss(x: &Tensor, x2: &Tensor, g_out: &Tensor, g_out2: &Tensor) -> f32 {
    let num = crate::math::mean_abs_diff(x.data(), x2.data()) as f32;
    let den = (crate::math::mean_abs_diff(g_out.data(), g_out2.data()) as f32).max(DIV_EPS);
    num / den
}

/// A composed batch: per-sample mode applied to inputs and labels.
#[derive(Clone, Debug)]
pub struct ComposedBatch {
    pub inputs: Tensor,
    pub labels: Vec<u32>,
    pub modes: Vec<ModeDraw>,
    /// Index of the sample whose trigger each row used (== own index for
    /// attack, cyclic partner for cross, own index for clean rows, unused).
    pub trigger_src: Vec<u32>,
}

/// Build the three-branch batch: attack rows blend their own trigger and take
/// the target label; cross rows blend the cyclic partner's trigger and keep
/// the true label; clean rows pass through.
pub fn compose_batch(
    x: &Tensor,
    y: &[u32],
    masks: &Tensor,
    patterns: &Tensor,
    modes: &[ModeDraw],
    rule: TargetRule,
    class_count: usize,
) -> ComposedBatch {
    let (b, c, _, _) = x.dims4();
    assert_eq!(y.len(), b);
    assert_eq!(modes.len(), b);
    let mut inputs = x.clone();
    let mut labels = Vec::with_capacity(b);
    let mut trigger_src = Vec::with_capacity(b);
    for i in 0..b {
        let (src, label) = match modes[i] {
            ModeDraw::Attack => (i, target_label(y[i], rule, class_count)),
            ModeDraw::Cross => ((i + 1) % b, y[i]),
            ModeDraw::Clean => {
                labels.push(y[i]);
                trigger_src.push(i as u32);
                continue;
            }
        };
        crate::trigger::blend_into(
            inputs.item_mut(i),
            x.item(i),
            masks.item(src),
            patterns.item(src),
            c,
        );
        labels.push(label);
        trigger_src.push(src as u32);
    }
    ComposedBatch {
        inputs,
        labels,
        modes: modes.to_vec(),
        trigger_src,
    }
}

/// One optimization step over a batch. Draws modes, composes the batch, and
/// updates both the classifier and the pattern generator from the total loss.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    f: &mut ClassifierModel,
    g_p: &mut GeneratorModel,
    g_m: &mut GeneratorModel,
    opt_f: &mut Sgd,
    opt_g: &mut Adam,
    x: &Tensor,
    y: &[u32],
    cfg: &ExperimentConfig,
    mode_rng: &mut SeededRng,
    dropout_rng: &mut SeededRng,
) -> Result<LossBreakdown> {
    let (b, c, _, _) = x.dims4();
    assert!(b >= 2, "training batch must have at least two samples");
    assert!(g_m.frozen, "mask generator must be frozen during joint training");

    let modes: Vec<ModeDraw> = (0..b)
        .map(|_| draw_mode(mode_rng, cfg.rho_b, cfg.rho_c))
        .collect();
    let mut mode_counts = [0usize; 3];
    for m in &modes {
        match m {
            ModeDraw::Attack => mode_counts[0] += 1,
            ModeDraw::Cross => mode_counts[1] += 1,
            ModeDraw::Clean => mode_counts[2] += 1,
        }
    }

    let masks = g_m.forward_eval(x.clone());
    let patterns = g_p.forward_train(x.clone(), dropout_rng);

    let composed = compose_batch(
        x,
        y,
        &masks,
        &patterns,
        &modes,
        cfg.target_rule,
        cfg.dataset.class_count,
    );

    zero_grads(f);
    let logits = f.forward_train(composed.inputs, dropout_rng);
    let (l_cla, dlogits) = cross_entropy_mean(&logits, &composed.labels);

    let mut dpatterns = Tensor::zeros(patterns.shape());
    let l_div = diversity_batch(
        x,
        &patterns,
        Some((&mut dpatterns, cfg.lambda_div)),
        DIV_EPS,
        f32::INFINITY,
    );
    let l_total = l_cla + cfg.lambda_div * l_div;
    if !l_total.is_finite() || !logits.all_finite() || !patterns.all_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            step: 0,
            loss: l_total,
            lr_f: opt_f.lr,
            lr_g: opt_g.lr,
            modes: mode_counts,
        });
    }

    let dx_inj = f.backward(dlogits);
    // classification gradient reaches the patterns only through injected rows
    let hw = masks.item_len();
    for i in 0..b {
        let src = composed.trigger_src[i] as usize;
        match composed.modes[i] {
            ModeDraw::Clean => {}
            ModeDraw::Attack | ModeDraw::Cross => {
                let dinj = dx_inj.item(i);
                let mask = masks.item(src);
                let dp = dpatterns.item_mut(src);
                for ch in 0..c {
                    let d = &mut dp[ch * hw..(ch + 1) * hw];
                    let s = &dinj[ch * hw..(ch + 1) * hw];
                    for e in 0..hw {
                        d[e] += s[e] * mask[e];
                    }
                }
            }
        }
    }

    zero_grads(g_p);
    g_p.backward(dpatterns);

    opt_f.step(f);
    opt_g.step(g_p);

    Ok(LossBreakdown {
        l_cla,
        l_div,
        l_total,
        mode_counts,
    })
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_cla: f32,
    pub l_div: f32,
    pub l_total: f32,
    pub clean_acc: f32,
    pub attack_acc: f32,
    pub cross_acc: f32,
    pub lr_f: f32,
    pub lr_g: f32,
    pub mode_counts: [usize; 3],
}

/// Train the classifier and pattern generator jointly.
///
/// `g_m` must already be pretrained and frozen. Probe accuracies are computed
/// on `probe` (typically a slice of the test split) after each epoch. The
/// callback runs after every epoch so callers can checkpoint or log.
pub fn train(
    f: &mut ClassifierModel,
    g_p: &mut GeneratorModel,
    g_m: &mut GeneratorModel,
    train_data: &[LabeledImage],
    probe: &[LabeledImage],
    cfg: &ExperimentConfig,
    mut on_epoch: Option<&mut dyn FnMut(&EpochStats, &ClassifierModel, &GeneratorModel)>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    let mut opt_f = Sgd::new(
        cfg.opt_f.schedule.base_lr,
        cfg.opt_f.momentum,
        cfg.opt_f.weight_decay,
    );
    let mut opt_g = Adam::new(cfg.opt_g.schedule.base_lr);

    let mut batch_rng = SeededRng::new(cfg.seed, streams::BATCHES);
    let mut mode_rng = SeededRng::new(cfg.seed, streams::MODES);
    let mut dropout_rng = SeededRng::new(cfg.seed, streams::DROPOUT);
    let mut augment_rng = SeededRng::new(cfg.seed, streams::AUGMENT);

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt_f.lr = cfg.opt_f.schedule.lr_at(epoch);
        opt_g.lr = cfg.opt_g.schedule.lr_at(epoch);
        let batcher = Batcher::new(train_data.len(), cfg.batch_size, &mut batch_rng)?;
        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut counts = [0usize; 3];
        let mut steps = 0usize;
        for idxs in batcher.iter() {
            let (x, y) = assemble_augmented(
                train_data,
                idxs,
                &cfg.dataset.augmentation_policy,
                &mut augment_rng,
            );
            let stats = training_step(
                f,
                g_p,
                g_m,
                &mut opt_f,
                &mut opt_g,
                &x,
                &y,
                cfg,
                &mut mode_rng,
                &mut dropout_rng,
            )
            .map_err(|e| match e {
                Error::Diverged {
                    loss,
                    lr_f,
                    lr_g,
                    modes,
                    ..
                } => Error::Diverged {
                    epoch,
                    step: steps,
                    loss,
                    lr_f,
                    lr_g,
                    modes,
                },
                other => other,
            })?;
            sums.0 += stats.l_cla as f64;
            sums.1 += stats.l_div as f64;
            sums.2 += stats.l_total as f64;
            for k in 0..3 {
                counts[k] += stats.mode_counts[k];
            }
            steps += 1;
        }

        let (clean_acc, attack_acc, cross_acc) = if cfg.probe_size > 0 && !probe.is_empty() {
            let probe_slice = &probe[..cfg.probe_size.min(probe.len())];
            let report = evaluate(
                f,
                g_m,
                g_p,
                probe_slice,
                cfg.target_rule,
                &EvalOptions {
                    exclude_target_class: cfg.attack_acc_excludes_target,
                    pairing_seed: cfg.seed,
                    batch_size: cfg.batch_size,
                },
            )?;
            (report.clean_acc, report.attack_acc, report.cross_acc)
        } else {
            (f32::NAN, f32::NAN, f32::NAN)
        };

        let stats = EpochStats {
            epoch,
            l_cla: (sums.0 / steps.max(1) as f64) as f32,
            l_div: (sums.1 / steps.max(1) as f64) as f32,
            l_total: (sums.2 / steps.max(1) as f64) as f32,
            clean_acc,
            attack_acc,
            cross_acc,
            lr_f: opt_f.lr,
            lr_g: opt_g.lr,
            mode_counts: counts,
        };
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&stats, f, g_p);
        }
        history.push(stats);
    }
    Ok(history)
}
