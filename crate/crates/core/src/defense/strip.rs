//! Perturbation-entropy testing.
//!
//! Each probed input is blended with a set of clean overlay images; the mean
//! prediction entropy across overlays is its score. Static backdoors keep
//! predicting the target under perturbation (low entropy); benign inputs and
//! input-conditioned triggers fall apart into high-entropy predictions.

use alloc::vec::Vec;

use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::math::median;
use crate::models::ClassifierModel;
use crate::nn::{entropy, softmax_rows, Ctx, Module};
use crate::rng::{streams, SeededRng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct StripConfig {
    pub n_overlays: usize,
    pub seed: u64,
}

impl Default for StripConfig {
    fn default() -> Self {
        StripConfig {
            n_overlays: 64,
            seed: 0,
        }
    }
}

/// Entropy samples for a population of inputs, with summary quantiles.
#[derive(Clone, Debug)]
pub struct EntropyReport {
    pub entropies: Vec<f32>,
    pub min: f32,
    pub median: f32,
    pub max: f32,
}

impl EntropyReport {
    pub fn from_samples(entropies: Vec<f32>) -> EntropyReport {
        assert!(!entropies.is_empty());
        let min = entropies.iter().copied().fold(f32::INFINITY, f32::min);
        let max = entropies.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let med = median(&entropies);
        EntropyReport {
            entropies,
            min,
            median: med,
            max,
        }
    }
}

/// Mean prediction entropy of one input under `n_overlays` equal-weight
/// blends with clean images.
pub fn strip(
    f: &mut ClassifierModel,
    input: &Tensor,
    overlay_set: &[LabeledImage],
    cfg: &StripConfig,
) -> Result<f32> {
    if cfg.n_overlays == 0 {
        return Err(Error::config("n_overlays must be >= 1"));
    }
    if overlay_set.is_empty() {
        return Err(Error::Empty("overlay set".into()));
    }
    let mut rng = SeededRng::new(cfg.seed, streams::DEFENSE);
    Ok(strip_one(f, input, overlay_set, cfg.n_overlays, &mut rng))
}

fn strip_one(
    f: &mut ClassifierModel,
    input: &Tensor,
    overlay_set: &[LabeledImage],
    n_overlays: usize,
    rng: &mut SeededRng,
) -> f32 {
    let chw = input.shape().to_vec();
    let mut batch_shape = alloc::vec![n_overlays];
    batch_shape.extend_from_slice(&chw);
    let mut blended = Tensor::zeros(&batch_shape);
    for k in 0..n_overlays {
        let z = &overlay_set[rng.below(overlay_set.len())].pixels;
        debug_assert_eq!(z.shape(), input.shape());
        let dst = blended.item_mut(k);
        for ((d, &a), &b) in dst.iter_mut().zip(input.data()).zip(z.data()) {
            *d = 0.5 * (a + b);
        }
    }
    let mut probs = f.forward(blended, &mut Ctx::eval());
    softmax_rows(&mut probs);
    let m = probs.shape()[1];
    let mut sum = 0.0f64;
    for k in 0..n_overlays {
        sum += entropy(&probs.data()[k * m..(k + 1) * m]) as f64;
    }
    (sum / n_overlays as f64) as f32
}

/// Entropy distribution over a set of probe inputs (clean or poisoned).
pub fn strip_distribution(
    f: &mut ClassifierModel,
    inputs: &[Tensor],
    overlay_set: &[LabeledImage],
    cfg: &StripConfig,
) -> Result<EntropyReport> {
    if inputs.is_empty() {
        return Err(Error::Empty("probe inputs".into()));
    }
    if overlay_set.is_empty() {
        return Err(Error::Empty("overlay set".into()));
    }
    if cfg.n_overlays == 0 {
        return Err(Error::config("n_overlays must be >= 1"));
    }
    let mut rng = SeededRng::new(cfg.seed, streams::DEFENSE);
    let entropies: Vec<f32> = inputs
        .iter()
        .map(|x| strip_one(f, x, overlay_set, cfg.n_overlays, &mut rng))
        .collect();
    Ok(EntropyReport::from_samples(entropies))
}
