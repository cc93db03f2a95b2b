//! Dormant-channel pruning.
//!
//! Channels of the classifier's last conv layer are ranked by mean absolute
//! activation over a clean set, ascending, then silenced cumulatively. The
//! curve records clean and attack accuracy at each pruning level; the input
//! model is never modified (pruning operates on clones).

use alloc::vec::Vec;

use crate::dataset::{assemble, LabeledImage};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalOptions, MetricsReport};
use crate::models::{ClassifierModel, GeneratorModel};
use crate::nn::Ctx;
use crate::training::TargetRule;
use crate::trigger::Trigger;

/// Where attack inputs come from during curve evaluation.
pub enum TriggerSource<'a> {
    /// Per-input triggers from the generator pair (mask gen frozen).
    Generator {
        g_m: &'a mut GeneratorModel,
        g_p: &'a mut GeneratorModel,
    },
    /// A constant trigger.
    Static(&'a Trigger),
}

#[derive(Clone, Copy, Debug)]
pub struct PruningPoint {
    pub neurons_pruned: usize,
    pub clean_acc: f32,
    pub attack_acc: f32,
}

#[derive(Clone, Debug)]
pub struct PruningCurve {
    pub points: Vec<PruningPoint>,
    /// Channel indices in pruning order (most dormant first).
    pub order: Vec<usize>,
}

/// Rank channels by mean |activation| over the clean set and prune in
/// `step`-sized increments, recording accuracies at every level.
pub fn fine_prune(
    f: &ClassifierModel,
    clean_set: &[LabeledImage],
    eval_set: &[LabeledImage],
    trigger_source: &mut TriggerSource<'_>,
    rule: TargetRule,
    step: usize,
    opts: &EvalOptions,
) -> Result<PruningCurve> {
    if clean_set.is_empty() || eval_set.is_empty() {
        return Err(Error::Empty("pruning needs clean and eval sets".into()));
    }
    if step == 0 {
        return Err(Error::config("pruning step must be >= 1"));
    }
    let channels = f.feature_channels();

    // mean |activation| per channel over the clean set
    let mut ranker = f.clone();
    let mut sums = alloc::vec![0.0f64; channels];
    let mut count = 0usize;
    let idxs: Vec<u32> = (0..clean_set.len() as u32).collect();
    for chunk in idxs.chunks(opts.batch_size.max(1)) {
        let (x, _) = assemble(clean_set, chunk);
        let (_, feats) = ranker.forward_capture_features(x, &mut Ctx::eval());
        let (b, c, h, w) = feats.dims4();
        debug_assert_eq!(c, channels);
        let spatial = h * w;
        for img in 0..b {
            let row = feats.item(img);
            for ch in 0..c {
                let s: f64 = row[ch * spatial..(ch + 1) * spatial]
                    .iter()
                    .map(|&v| v.abs() as f64)
                    .sum();
                sums[ch] += s / spatial as f64;
            }
        }
        count += b;
    }
    let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    let mut order: Vec<usize> = (0..channels).collect();
    order.sort_by(|&a, &b| means[a].partial_cmp(&means[b]).expect("finite activations"));

    let mut points = Vec::new();
    let mut pruned_so_far = 0usize;
    loop {
        let mut pruned_model = f.clone();
        pruned_model
            .last_conv_mut()
            .silence_channels(&order[..pruned_so_far]);
        let (clean_acc, attack_acc) = match trigger_source {
            TriggerSource::Generator { g_m, g_p } => {
                let r = evaluate(&mut pruned_model, g_m, g_p, eval_set, rule, opts)?;
                (r.clean_acc, r.attack_acc)
            }
            TriggerSource::Static(trigger) => {
                let r: MetricsReport = crate::badnets::evaluate_static(
                    &mut pruned_model,
                    trigger,
                    eval_set,
                    rule,
                    opts.exclude_target_class,
                    opts.batch_size,
                )?;
                (r.clean_acc, r.attack_acc)
            }
        };
        points.push(PruningPoint {
            neurons_pruned: pruned_so_far,
            clean_acc,
            attack_acc,
        });
        if pruned_so_far >= channels {
            break;
        }
        pruned_so_far = (pruned_so_far + step).min(channels);
    }
    Ok(PruningCurve { points, order })
}
