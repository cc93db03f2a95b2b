//! SGD and Adam, plus the step learning-rate schedule.
//!
//! Optimizer state is keyed by parameter visitation order, which is stable
//! for a given model structure.

use alloc::vec::Vec;

use crate::math::{powf, sqrt};
use crate::nn::Parameterized;
use crate::tensor::Tensor;

/// lr(epoch) = base_lr * gamma^k where k counts drops up to `epoch`. The
/// first drop happens at `start_epoch`, then every `step_every` epochs.
/// `step_every == 0` disables drops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub base_lr: f32,
    pub gamma: f32,
    pub step_every: usize,
    pub start_epoch: usize,
}

impl StepSchedule {
    pub fn constant(base_lr: f32) -> StepSchedule {
        StepSchedule {
            base_lr,
            gamma: 0.1,
            step_every: 0,
            start_epoch: 0,
        }
    }

    /// Drops every `every` epochs starting at epoch `every` (so epoch 0..every
    /// runs at base_lr).
    pub fn every(base_lr: f32, every: usize) -> StepSchedule {
        StepSchedule {
            base_lr,
            gamma: 0.1,
            step_every: every,
            start_epoch: every,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        if self.step_every == 0 || epoch < self.start_epoch {
            return self.base_lr;
        }
        let k = 1 + (epoch - self.start_epoch) / self.step_every;
        self.base_lr * powf(self.gamma, k as f32)
    }
}

/// SGD with optional momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Sgd {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Parameterized) {
        let mut idx = 0;
        let lr = self.lr;
        let momentum = self.momentum;
        let wd = self.weight_decay;
        let velocity = &mut self.velocity;
        model.visit_params(&mut |pm| {
            if velocity.len() == idx {
                velocity.push(Tensor::zeros(pm.value.shape()));
            }
            let v = &mut velocity[idx];
            idx += 1;
            if momentum == 0.0 {
                for (w, &g) in pm.value.data_mut().iter_mut().zip(pm.grad.data().iter()) {
                    *w -= lr * (g + wd * *w);
                }
            } else {
                for ((w, &g), vel) in pm
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(pm.grad.data().iter())
                    .zip(v.data_mut().iter_mut())
                {
                    *vel = momentum * *vel + g + wd * *w;
                    *w -= lr * *vel;
                }
            }
        });
    }
}

/// Adam with bias correction and optional L2 weight decay folded into the
/// gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f32) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Parameterized) {
        self.t += 1;
        let bc1 = 1.0 - powf(self.beta1, self.t as f32);
        let bc2 = 1.0 - powf(self.beta2, self.t as f32);
        let lr = self.lr;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let mut idx = 0;
        let ms = &mut self.m;
        let vs = &mut self.v;
        model.visit_params(&mut |pm| {
            if ms.len() == idx {
                ms.push(Tensor::zeros(pm.value.shape()));
                vs.push(Tensor::zeros(pm.value.shape()));
            }
            let m = &mut ms[idx];
            let v = &mut vs[idx];
            idx += 1;
            for (((w, &g0), mi), vi) in pm
                .value
                .data_mut()
                .iter_mut()
                .zip(pm.grad.data().iter())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let g = g0 + wd * *w;
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (sqrt(vhat) + eps);
            }
        });
    }
}
