//! Triggers: blend-mask injection, per-input trigger generation, the static
//! baseline trigger, and mask-generator pretraining.
//!
//! A trigger is a pair (mask, pattern); injection blends them into an image
//! as `x * (1 - m) + p * m`, the mask broadcast across channels. Both the
//! per-input generated triggers and the static baseline go through the same
//! injection path.

use alloc::vec::Vec;

use crate::dataset::{assemble, Batcher, DatasetSpec, LabeledImage};
use crate::error::{Error, Result};
use crate::models::GeneratorModel;
use crate::nn::{zero_grads, Adam, Module, StepSchedule};
use crate::rng::{streams, SeededRng};
use crate::tensor::Tensor;
use crate::training::{diversity_batch, DIV_EPS};

/// A single trigger: mask [1, H, W] and pattern [C, H, W], values in [0, 1].
#[derive(Clone, Debug)]
pub struct Trigger {
    pub mask: Tensor,
    pub pattern: Tensor,
}

impl Trigger {
    pub fn new(mask: Tensor, pattern: Tensor) -> Result<Trigger> {
        if mask.shape().len() != 3 || pattern.shape().len() != 3 {
            return Err(Error::shape("trigger tensors must be [C,H,W]"));
        }
        if mask.shape()[0] != 1 {
            return Err(Error::shape("trigger mask must have one channel"));
        }
        if mask.shape()[1..] != pattern.shape()[1..] {
            return Err(Error::shape(format_args!(
                "mask {:?} and pattern {:?} are not spatially congruent",
                mask.shape(),
                pattern.shape()
            )));
        }
        let in_range = |t: &Tensor| t.data().iter().all(|&v| (0.0..=1.0).contains(&v));
        if !in_range(&mask) || !in_range(&pattern) {
            return Err(Error::shape("trigger values outside [0,1]"));
        }
        Ok(Trigger { mask, pattern })
    }
}

/// Per-input triggers for a whole batch.
#[derive(Clone, Debug)]
pub struct TriggerBatch {
    /// [B, 1, H, W]
    pub masks: Tensor,
    /// [B, C, H, W]
    pub patterns: Tensor,
}

impl TriggerBatch {
    pub fn len(&self) -> usize {
        self.masks.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Trigger {
        let ms = &self.masks.shape()[1..];
        let ps = &self.patterns.shape()[1..];
        Trigger {
            mask: Tensor::from_vec(self.masks.item(i).to_vec(), ms).expect("mask slice"),
            pattern: Tensor::from_vec(self.patterns.item(i).to_vec(), ps).expect("pattern slice"),
        }
    }
}

/// Blend a single flattened image with a trigger. `x`, `dst` are [C*H*W],
/// `mask` is [H*W] (broadcast over channels), `pattern` is [C*H*W].
#[inline]
pub(crate) fn blend_into(dst: &mut [f32], x: &[f32], mask: &[f32], pattern: &[f32], channels: usize) {
    let hw = mask.len();
    debug_assert_eq!(x.len(), channels * hw);
    debug_assert_eq!(pattern.len(), channels * hw);
    for c in 0..channels {
        let xo = &x[c * hw..(c + 1) * hw];
        let po = &pattern[c * hw..(c + 1) * hw];
        let d = &mut dst[c * hw..(c + 1) * hw];
        for i in 0..hw {
            let m = mask[i];
            d[i] = xo[i] * (1.0 - m) + po[i] * m;
        }
    }
}

/// Inject a trigger into one image: `x * (1-m) + p * m` elementwise, the
/// mask broadcast across channels.
pub fn inject(x: &Tensor, t: &Trigger) -> Result<Tensor> {
    if x.shape().len() != 3 {
        return Err(Error::shape("inject expects an image [C,H,W]"));
    }
    if x.shape()[1..] != t.mask.shape()[1..] || x.shape() != t.pattern.shape() {
        return Err(Error::shape(format_args!(
            "image {:?} vs mask {:?} / pattern {:?}",
            x.shape(),
            t.mask.shape(),
            t.pattern.shape()
        )));
    }
    let c = x.shape()[0];
    let mut out = Tensor::zeros(x.shape());
    blend_into(out.data_mut(), x.data(), t.mask.data(), t.pattern.data(), c);
    Ok(out)
}

/// Inject per-image triggers into a batch: row i of `x` blends with
/// `masks[src[i]]` / `patterns[src[i]]`.
pub fn inject_batch_indexed(
    x: &Tensor,
    masks: &Tensor,
    patterns: &Tensor,
    src: &[u32],
) -> Tensor {
    let (b, c, _, _) = x.dims4();
    assert_eq!(src.len(), b);
    assert_eq!(x.shape()[2..], masks.shape()[2..]);
    assert_eq!(x.shape(), patterns.shape());
    let mut out = Tensor::zeros(x.shape());
    for i in 0..b {
        let s = src[i] as usize;
        blend_into(
            out.item_mut(i),
            x.item(i),
            masks.item(s),
            patterns.item(s),
            c,
        );
    }
    out
}

/// Run both generators on a batch of clean images (inference path; the mask
/// generator must already be frozen).
pub fn generate_trigger(
    g_m: &mut GeneratorModel,
    g_p: &mut GeneratorModel,
    x: &Tensor,
) -> TriggerBatch {
    assert!(g_m.frozen, "mask generator must be pretrained and frozen");
    TriggerBatch {
        masks: g_m.forward_eval(x.clone()),
        patterns: g_p.forward_eval(x.clone()),
    }
}

/// A literal (data-driven) trigger for the static baseline. The mask mean
/// must stay small.
#[derive(Clone, Debug)]
pub struct StaticTriggerSpec {
    trigger: Trigger,
}

pub const STATIC_MASK_MEAN_LIMIT: f32 = 0.1;

impl StaticTriggerSpec {
    pub fn new(mask: Tensor, pattern: Tensor) -> Result<StaticTriggerSpec> {
        let trigger = Trigger::new(mask, pattern)?;
        let mean = crate::math::mean_f64(trigger.mask.data()) as f32;
        if mean > STATIC_MASK_MEAN_LIMIT {
            return Err(Error::config(format_args!(
                "static trigger mask mean {mean:.4} exceeds {STATIC_MASK_MEAN_LIMIT}"
            )));
        }
        Ok(StaticTriggerSpec { trigger })
    }

    pub fn trigger(&self) -> &Trigger {
        &self.trigger
    }

    /// The default baseline: a `size x size` checkerboard of ones at the
    /// bottom-right corner, pattern value 1.0 on the active cells.
    pub fn checkerboard_patch(spec: &DatasetSpec, size: usize) -> Result<StaticTriggerSpec> {
        let (h, w, c) = spec.input_shape;
        if size > h || size > w {
            return Err(Error::config("patch larger than image"));
        }
        let mut mask = Tensor::zeros(&[1, h, w]);
        let mut pattern = Tensor::zeros(&[c, h, w]);
        for dy in 0..size {
            for dx in 0..size {
                let y = h - size + dy;
                let x = w - size + dx;
                mask.data_mut()[y * w + x] = 1.0;
                if (dy + dx) % 2 == 0 {
                    for ch in 0..c {
                        pattern.data_mut()[(ch * h + y) * w + x] = 1.0;
                    }
                }
            }
        }
        StaticTriggerSpec::new(mask, pattern)
    }

    /// Image coordinates covered by the mask support (row, col).
    pub fn support(&self) -> Vec<(usize, usize)> {
        let s = self.trigger.mask.shape();
        let (h, w) = (s[1], s[2]);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if self.trigger.mask.data()[y * w + x] > 0.0 {
                    out.push((y, x));
                }
            }
        }
        out
    }
}

/// Settings for mask-generator pretraining.
///
/// The objective keeps generated masks small and input-varying:
/// `lambda_s * relu(mean(m) - s)` per image plus the diversity ratio
/// applied to masks. The hinge is linear so its pull stays constant until
/// the mean actually reaches the target (a squared hinge stalls above it).
#[derive(Clone, Debug)]
pub struct MaskPretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub sparsity_target: f32,
    pub lambda_sparsity: f32,
    pub lambda_diversity: f32,
    /// Mask distances beyond this floor stop attracting diversity gradient,
    /// so the sparsity objective can settle near its target.
    pub div_floor: f32,
}

impl Default for MaskPretrainConfig {
    fn default() -> Self {
        // full-scale recipe: 25 epochs, lr 0.01 dropping 10x every 10 epochs
        MaskPretrainConfig {
            epochs: 25,
            batch_size: 128,
            schedule: StepSchedule::every(0.01, 10),
            sparsity_target: 0.1,
            lambda_sparsity: 10.0,
            lambda_diversity: 1.0,
            div_floor: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaskPretrainStats {
    pub epoch: usize,
    pub loss: f32,
    pub mean_mask: f32,
    pub lr: f32,
}

/// Pretrain a fresh mask generator on clean images, then freeze it.
pub fn pretrain_mask_generator(
    mut g_m: GeneratorModel,
    data: &[LabeledImage],
    cfg: &MaskPretrainConfig,
    seed: u64,
) -> Result<(GeneratorModel, Vec<MaskPretrainStats>)> {
    assert!(!g_m.frozen, "mask generator already frozen");
    if data.is_empty() {
        return Err(Error::Empty("mask pretraining data".into()));
    }
    let mut opt = Adam::new(cfg.schedule.base_lr);
    let mut batch_rng = SeededRng::new(seed, streams::BATCHES);
    let mut dropout_rng = SeededRng::new(seed, streams::DROPOUT);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.schedule.lr_at(epoch);
        let batcher = Batcher::new(data.len(), cfg.batch_size, &mut batch_rng)?;
        let mut loss_sum = 0.0f64;
        let mut mask_sum = 0.0f64;
        let mut steps = 0usize;
        for idxs in batcher.iter() {
            let (x, _) = assemble(data, idxs);
            let b = idxs.len();
            zero_grads(&mut g_m);
            let masks = g_m.forward_train(x.clone(), &mut dropout_rng);
            let k = masks.item_len();

            let mut dmasks = Tensor::zeros(masks.shape());
            // per-image linear sparsity hinge
            let mut l_sparse = 0.0f64;
            for i in 0..b {
                let mu = crate::math::mean_f64(masks.item(i)) as f32;
                let hinge = (mu - cfg.sparsity_target).max(0.0);
                l_sparse += hinge as f64;
                if hinge > 0.0 {
                    let g = cfg.lambda_sparsity / (b as f32 * k as f32);
                    for d in dmasks.item_mut(i) {
                        *d += g;
                    }
                }
            }
            let l_sparse = cfg.lambda_sparsity * (l_sparse / b as f64) as f32;
            // diversity on masks, cyclic pairing
            let l_div = diversity_batch(
                &x,
                &masks,
                Some((&mut dmasks, cfg.lambda_diversity)),
                DIV_EPS,
                cfg.div_floor.max(2.0 * DIV_EPS),
            );
            let loss = l_sparse + cfg.lambda_diversity * l_div;
            if !loss.is_finite() || !masks.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: steps,
                    loss,
                    lr_f: 0.0,
                    lr_g: opt.lr,
                    modes: [0, 0, 0],
                });
            }
            g_m.backward(dmasks);
            opt.step(&mut g_m);

            loss_sum += loss as f64;
            mask_sum += crate::math::mean_f64(masks.data());
            steps += 1;
        }
        history.push(MaskPretrainStats {
            epoch,
            loss: (loss_sum / steps.max(1) as f64) as f32,
            mean_mask: (mask_sum / steps.max(1) as f64) as f32,
            lr: opt.lr,
        });
    }
    g_m.freeze();
    Ok((g_m, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
        t
    }

    // The spec-level oracle: an explicit scalar triple loop over (c, y, x).
    fn inject_oracle(x: &Tensor, t: &Trigger) -> Tensor {
        let s = x.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut out = Tensor::zeros(s);
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let m = t.mask.data()[y * w + xx];
                    let xv = x.data()[(ci * h + y) * w + xx];
                    let pv = t.pattern.data()[(ci * h + y) * w + xx];
                    out.data_mut()[(ci * h + y) * w + xx] = xv * (1.0 - m) + pv * m;
                }
            }
        }
        out
    }

    #[test]
    fn zero_mask_returns_input_exactly() {
        let mut rng = SeededRng::new(1, 0);
        let x = rand_tensor(&mut rng, &[3, 6, 5]);
        let t = Trigger::new(Tensor::zeros(&[1, 6, 5]), rand_tensor(&mut rng, &[3, 6, 5])).unwrap();
        assert_eq!(inject(&x, &t).unwrap().data(), x.data());
    }

    #[test]
    fn full_mask_returns_pattern_exactly() {
        let mut rng = SeededRng::new(2, 0);
        let x = rand_tensor(&mut rng, &[3, 4, 4]);
        let p = rand_tensor(&mut rng, &[3, 4, 4]);
        let t = Trigger::new(Tensor::filled(&[1, 4, 4], 1.0), p.clone()).unwrap();
        assert_eq!(inject(&x, &t).unwrap().data(), p.data());
    }

    #[test]
    fn single_pixel_arithmetic() {
        // 0.4 * (1 - 0.5) + 0.8 * 0.5 = 0.6
        let x = Tensor::filled(&[1, 1, 1], 0.4);
        let t = Trigger::new(Tensor::filled(&[1, 1, 1], 0.5), Tensor::filled(&[1, 1, 1], 0.8))
            .unwrap();
        let out = inject(&x, &t).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn inject_equals_scalar_loop_oracle() {
        let mut rng = SeededRng::new(3, 0);
        for _ in 0..25 {
            let c = 1 + rng.below(3);
            let h = 1 + rng.below(12);
            let w = 1 + rng.below(12);
            let x = rand_tensor(&mut rng, &[c, h, w]);
            let t = Trigger::new(rand_tensor(&mut rng, &[1, h, w]), rand_tensor(&mut rng, &[c, h, w]))
                .unwrap();
            let got = inject(&x, &t).unwrap();
            let want = inject_oracle(&x, &t);
            assert_eq!(got.data(), want.data(), "exact equality required");
        }
    }

    #[test]
    fn binary_mask_injection_idempotent() {
        let mut rng = SeededRng::new(4, 0);
        let x = rand_tensor(&mut rng, &[2, 5, 5]);
        let mut mask = Tensor::zeros(&[1, 5, 5]);
        mask.data_mut()
            .iter_mut()
            .for_each(|v| *v = if rng.bernoulli(0.3) { 1.0 } else { 0.0 });
        let t = Trigger::new(mask, rand_tensor(&mut rng, &[2, 5, 5])).unwrap();
        let once = inject(&x, &t).unwrap();
        let twice = inject(&once, &t).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn range_preserved_by_blending() {
        let mut rng = SeededRng::new(5, 0);
        for _ in 0..10 {
            let x = rand_tensor(&mut rng, &[3, 7, 7]);
            let t = Trigger::new(rand_tensor(&mut rng, &[1, 7, 7]), rand_tensor(&mut rng, &[3, 7, 7]))
                .unwrap();
            let out = inject(&x, &t).unwrap();
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn mask_broadcast_matches_per_channel_computation() {
        let mut rng = SeededRng::new(6, 0);
        let x = rand_tensor(&mut rng, &[3, 4, 4]);
        let mask = rand_tensor(&mut rng, &[1, 4, 4]);
        let pat = rand_tensor(&mut rng, &[3, 4, 4]);
        let t = Trigger::new(mask.clone(), pat.clone()).unwrap();
        let out = inject(&x, &t).unwrap();
        let at = |t: &Tensor, c: usize, y: usize, xx: usize| t.data()[(c * 4 + y) * 4 + xx];
        for ch in 0..3 {
            for y in 0..4 {
                for xx in 0..4 {
                    let m = mask.data()[y * 4 + xx];
                    let want = at(&x, ch, y, xx) * (1.0 - m) + at(&pat, ch, y, xx) * m;
                    assert_eq!(at(&out, ch, y, xx), want);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let x = Tensor::zeros(&[3, 5, 5]);
        let t = Trigger::new(Tensor::zeros(&[1, 4, 4]), Tensor::zeros(&[3, 4, 4])).unwrap();
        assert!(matches!(inject(&x, &t), Err(Error::Shape(_))));
    }

    #[test]
    fn static_trigger_mask_mean_enforced() {
        // a full-ones mask has mean 1.0 >> 0.1
        assert!(StaticTriggerSpec::new(
            Tensor::filled(&[1, 8, 8], 1.0),
            Tensor::zeros(&[3, 8, 8])
        )
        .is_err());
        let patch = StaticTriggerSpec::checkerboard_patch(&DatasetSpec::mnist(), 3).unwrap();
        let mean = crate::math::mean_f64(patch.trigger().mask.data());
        assert!((mean - 9.0 / 784.0).abs() < 1e-6);
        assert_eq!(patch.support().len(), 9);
        // checkerboard alternation inside the patch
        let p = &patch.trigger().pattern;
        assert_eq!(p.data()[(25 * 28) + 25], 1.0);
        assert_eq!(p.data()[(25 * 28) + 26], 0.0);
    }

    #[test]
    fn generate_trigger_deterministic_for_duplicates() {
        let mut rng = SeededRng::new(7, streams::MODEL_GM);
        let spec = DatasetSpec::mnist();
        let mut g_m = crate::models::build_generator(&spec, 1, &mut rng).unwrap();
        g_m.freeze();
        let mut g_p = crate::models::build_generator(&spec, 1, &mut rng).unwrap();
        // batch of two identical images
        let one = rand_tensor(&mut rng, &[1, 28, 28]);
        let mut x = Tensor::zeros(&[2, 1, 28, 28]);
        x.item_mut(0).copy_from_slice(one.data());
        x.item_mut(1).copy_from_slice(one.data());
        let tb = generate_trigger(&mut g_m, &mut g_p, &x);
        assert_eq!(tb.masks.item(0), tb.masks.item(1));
        assert_eq!(tb.patterns.item(0), tb.patterns.item(1));
        // ranges: sigmoid output in (0,1) plus clamping
        assert!(tb.masks.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(tb.patterns.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
