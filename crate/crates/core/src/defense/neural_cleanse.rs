//! Per-label minimal-trigger reverse engineering with anomaly scoring.
//!
//! For each label l the optimizer searches for a trigger (m_l, p_l), both
//! sigmoid-parameterized, that converts clean images to l while keeping the
//! mask L1 norm small. Labels whose optimized mask is abnormally small stand
//! out: the anomaly index is the absolute deviation of the mask norm from
//! the across-label median, scaled by 1.4826 * MAD, and an index above
//! tau = 2 flags the label.

use alloc::vec::Vec;

use crate::dataset::{assemble, LabeledImage};
use crate::error::{Error, Result};
use crate::math::{median, sigmoid};
use crate::models::ClassifierModel;
use crate::nn::{cross_entropy_mean, Adam, Ctx, Module, ParamMut, Parameterized};
use crate::rng::{streams, SeededRng};
use crate::tensor::Tensor;

/// Decision threshold on the anomaly index.
pub const ANOMALY_TAU: f32 = 2.0;
/// Median-absolute-deviation consistency constant for normal data.
pub const MAD_CONSISTENCY: f32 = 1.4826;

#[derive(Clone, Debug)]
pub struct NeuralCleanseConfig {
    /// Optimization steps per label.
    pub steps: usize,
    /// Images per optimization step.
    pub batch_size: usize,
    /// Weight of the mask L1 penalty (static, no dynamic adjustment).
    pub lambda_mask: f32,
    pub lr: f32,
    pub seed: u64,
}

impl Default for NeuralCleanseConfig {
    fn default() -> Self {
        NeuralCleanseConfig {
            steps: 500,
            batch_size: 32,
            lambda_mask: 0.01,
            lr: 0.1,
            seed: 0,
        }
    }
}

/// The optimized trigger for one label.
#[derive(Clone, Debug)]
pub struct LabelTrigger {
    pub label: u32,
    /// Optimized mask [1, H, W] in [0, 1].
    pub mask: Tensor,
    /// Optimized pattern [C, H, W] in [0, 1].
    pub pattern: Tensor,
    /// Sum of mask values (its L1 norm; the mask is nonnegative).
    pub mask_l1: f32,
    /// Fraction of probe images converted to the label by the trigger.
    pub conversion_rate: f32,
    /// Optimization ran to completion with finite losses.
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct AnomalyReport {
    pub triggers: Vec<LabelTrigger>,
    /// Anomaly index per label, aligned with `triggers`.
    pub anomaly_index: Vec<f32>,
    /// Labels flagged as backdoored: index above tau on the small-norm side.
    pub flagged: Vec<u32>,
    pub tau: f32,
}

impl AnomalyReport {
    /// The model-level anomaly index: the largest index among labels whose
    /// mask norm sits at or below the median (abnormally large masks do not
    /// indicate a backdoor).
    pub fn max_index(&self) -> f32 {
        let norms: Vec<f32> = self.triggers.iter().map(|t| t.mask_l1).collect();
        let med = crate::math::median(&norms);
        self.anomaly_index
            .iter()
            .zip(&norms)
            .filter(|(_, &n)| n <= med)
            .fold(0.0f32, |a, (&i, _)| a.max(i))
    }
}

/// Raw trigger parameters being optimized (pre-sigmoid).
struct TriggerParams {
    theta_m: Tensor,
    theta_p: Tensor,
    g_m: Tensor,
    g_p: Tensor,
}

impl Parameterized for TriggerParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut {
            value: &mut self.theta_m,
            grad: &mut self.g_m,
        });
        f(ParamMut {
            value: &mut self.theta_p,
            grad: &mut self.g_p,
        });
    }
}

fn sigmoid_tensor(theta: &Tensor) -> Tensor {
    let mut out = theta.clone();
    out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    out
}

/// Anomaly indices from per-label mask norms. With a degenerate MAD of zero,
/// equal norms score 0 and any deviating norm scores infinite.
pub(crate) fn anomaly_indices(norms: &[f32]) -> Vec<f32> {
    let med = median(norms);
    let deviations: Vec<f32> = norms.iter().map(|&v| (v - med).abs()).collect();
    let mad = median(&deviations);
    norms
        .iter()
        .map(|&v| {
            let dev = (v - med).abs();
            if mad > 0.0 {
                dev / (MAD_CONSISTENCY * mad)
            } else if dev == 0.0 {
                0.0
            } else {
                f32::INFINITY
            }
        })
        .collect()
}

/// Reverse-engineer a minimal trigger for every label and score the outliers.
pub fn neural_cleanse(
    f: &mut ClassifierModel,
    clean_set: &[LabeledImage],
    cfg: &NeuralCleanseConfig,
) -> Result<AnomalyReport> {
    if clean_set.is_empty() {
        return Err(Error::Empty("clean set".into()));
    }
    let class_count = f.class_count;
    let chw = clean_set[0].pixels.shape().to_vec();
    let (c, h, w) = (chw[0], chw[1], chw[2]);
    let hw = h * w;
    let mut triggers = Vec::with_capacity(class_count);

    for label in 0..class_count as u32 {
        let mut rng = SeededRng::new(
            crate::rng::derive_seed(cfg.seed, label as u64),
            streams::DEFENSE,
        );
        // independent random starts per label: centered near m ~ 0.12,
        // p ~ 0.5, jittered so the across-label norm statistics are not
        // artificially correlated
        let mut theta_m = Tensor::filled(&[1, h, w], -2.0);
        theta_m
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.5 * rng.normal());
        let mut theta_p = Tensor::zeros(&[c, h, w]);
        theta_p
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.5 * rng.normal());
        let mut params = TriggerParams {
            theta_m,
            theta_p,
            g_m: Tensor::zeros(&[1, h, w]),
            g_p: Tensor::zeros(&[c, h, w]),
        };
        let mut opt = Adam::new(cfg.lr);
        let mut converged = true;

        for _step in 0..cfg.steps {
            // sample a batch of clean images
            let idxs: Vec<u32> = (0..cfg.batch_size)
                .map(|_| rng.below(clean_set.len()) as u32)
                .collect();
            let (x, _) = assemble(clean_set, &idxs);
            let b = idxs.len();
            let mask = sigmoid_tensor(&params.theta_m);
            let pattern = sigmoid_tensor(&params.theta_p);

            // inject the shared trigger into the whole batch
            let mut inj = Tensor::zeros(x.shape());
            for i in 0..b {
                crate::trigger::blend_into(
                    inj.item_mut(i),
                    x.item(i),
                    mask.data(),
                    pattern.data(),
                    c,
                );
            }
            let logits = f.forward(inj, &mut Ctx::eval());
            let labels: Vec<u32> = core::iter::repeat(label).take(b).collect();
            let (l_ce, dlogits) = cross_entropy_mean(&logits, &labels);
            let mask_l1: f32 = crate::math::sum_f64(mask.data()) as f32;
            let loss = l_ce + cfg.lambda_mask * mask_l1;
            if !loss.is_finite() {
                converged = false;
                break;
            }

            let dx_inj = f.backward(dlogits);
            // d loss / d mask and d loss / d pattern, summed over the batch
            let mut dmask = Tensor::zeros(&[1, h, w]);
            let mut dpattern = Tensor::zeros(&[c, h, w]);
            for i in 0..b {
                let dinj = dx_inj.item(i);
                let xs = x.item(i);
                for ch in 0..c {
                    for e in 0..hw {
                        let d = dinj[ch * hw + e];
                        // x*(1-m) + p*m: d/dm = p - x, d/dp = m
                        dmask.data_mut()[e] += d * (pattern.data()[ch * hw + e] - xs[ch * hw + e]);
                        dpattern.data_mut()[ch * hw + e] += d * mask.data()[e];
                    }
                }
            }
            // add the L1 penalty gradient (mask is nonnegative)
            for e in 0..hw {
                dmask.data_mut()[e] += cfg.lambda_mask;
            }
            // chain through the sigmoid parameterization
            for e in 0..hw {
                let m = mask.data()[e];
                params.g_m.data_mut()[e] = dmask.data()[e] * m * (1.0 - m);
            }
            for e in 0..c * hw {
                let p = pattern.data()[e];
                params.g_p.data_mut()[e] = dpattern.data()[e] * p * (1.0 - p);
            }
            opt.step(&mut params);
        }

        let mask = sigmoid_tensor(&params.theta_m);
        let pattern = sigmoid_tensor(&params.theta_p);
        let mask_l1 = crate::math::sum_f64(mask.data()) as f32;

        // conversion probe: does the optimized trigger actually flip inputs?
        let probe_n = clean_set.len().min(256);
        let idxs: Vec<u32> = (0..probe_n as u32).collect();
        let (x, _) = assemble(clean_set, &idxs);
        let mut inj = Tensor::zeros(x.shape());
        for i in 0..probe_n {
            crate::trigger::blend_into(inj.item_mut(i), x.item(i), mask.data(), pattern.data(), c);
        }
        let logits = f.forward(inj, &mut Ctx::eval());
        let expected: Vec<u32> = core::iter::repeat(label).take(probe_n).collect();
        let converted = crate::evaluate::count_correct(&logits, &expected);

        triggers.push(LabelTrigger {
            label,
            mask,
            pattern,
            mask_l1,
            conversion_rate: converted as f32 / probe_n as f32,
            converged,
        });
    }

    let norms: Vec<f32> = triggers.iter().map(|t| t.mask_l1).collect();
    let anomaly_index = anomaly_indices(&norms);
    let med = median(&norms);
    let flagged: Vec<u32> = anomaly_index
        .iter()
        .zip(&norms)
        .enumerate()
        .filter(|(_, (&v, &n))| v > ANOMALY_TAU && n <= med)
        .map(|(i, _)| i as u32)
        .collect();
    Ok(AnomalyReport {
        triggers,
        anomaly_index,
        flagged,
        tau: ANOMALY_TAU,
    })
}
