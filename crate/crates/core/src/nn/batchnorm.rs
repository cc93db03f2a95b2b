//! Batch normalization over NCHW feature maps.
//!
//! Training mode normalizes with biased batch statistics and updates running
//! estimates with the unbiased variance; eval mode applies the running affine.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::nn::{Ctx, Module, ParamMut, Parameterized, Phase};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub eps: f32,
    pub momentum: f32,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub g_gamma: Tensor,
    pub g_beta: Tensor,
    cached_x: Option<Tensor>,
    cached_mean: Vec<f32>,
    cached_invstd: Vec<f32>,
    cached_phase: Phase,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            g_gamma: Tensor::zeros(&[channels]),
            g_beta: Tensor::zeros(&[channels]),
            cached_x: None,
            cached_mean: Vec::new(),
            cached_invstd: Vec::new(),
            cached_phase: Phase::Eval,
        }
    }
}

impl Parameterized for BatchNorm2d {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut {
            value: &mut self.gamma,
            grad: &mut self.g_gamma,
        });
        f(ParamMut {
            value: &mut self.beta,
            grad: &mut self.g_beta,
        });
    }
}

impl Module for BatchNorm2d {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels, "batchnorm channels");
        let spatial = h * w;
        let count = n * spatial;
        let mut y = Tensor::zeros(x.shape());
        self.cached_phase = ctx.phase;
        match ctx.phase {
            Phase::Train => {
                self.cached_mean = vec![0.0; c];
                self.cached_invstd = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    let mut sum2 = 0.0f64;
                    for img in 0..n {
                        let base = (img * c + ch) * spatial;
                        for &v in &x.data()[base..base + spatial] {
                            sum += v as f64;
                            sum2 += (v as f64) * (v as f64);
                        }
                    }
                    let mean = sum / count as f64;
                    let var = (sum2 / count as f64 - mean * mean).max(0.0);
                    let invstd = 1.0 / sqrt(var as f32 + self.eps);
                    self.cached_mean[ch] = mean as f32;
                    self.cached_invstd[ch] = invstd;
                    // unbiased variance for the running estimate
                    let unbiased = if count > 1 {
                        var * count as f64 / (count - 1) as f64
                    } else {
                        var
                    };
                    let rm = self.running_mean.data_mut();
                    rm[ch] = (1.0 - self.momentum) * rm[ch] + self.momentum * mean as f32;
                    let rv = self.running_var.data_mut();
                    rv[ch] = (1.0 - self.momentum) * rv[ch] + self.momentum * unbiased as f32;

                    let g = self.gamma.data()[ch];
                    let b = self.beta.data()[ch];
                    let m = mean as f32;
                    for img in 0..n {
                        let base = (img * c + ch) * spatial;
                        let xs = &x.data()[base..base + spatial];
                        let ys = &mut y.data_mut()[base..base + spatial];
                        for (yo, &xi) in ys.iter_mut().zip(xs.iter()) {
                            *yo = (xi - m) * invstd * g + b;
                        }
                    }
                }
            }
            Phase::Eval => {
                for ch in 0..c {
                    let m = self.running_mean.data()[ch];
                    let invstd = 1.0 / sqrt(self.running_var.data()[ch] + self.eps);
                    let g = self.gamma.data()[ch];
                    let b = self.beta.data()[ch];
                    for img in 0..n {
                        let base = (img * c + ch) * spatial;
                        let xs = &x.data()[base..base + spatial];
                        let ys = &mut y.data_mut()[base..base + spatial];
                        for (yo, &xi) in ys.iter_mut().zip(xs.iter()) {
                            *yo = (xi - m) * invstd * g + b;
                        }
                    }
                }
            }
        }
        self.cached_x = Some(x);
        y
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        let x = self.cached_x.take().expect("batchnorm backward before forward");
        let (n, c, h, w) = x.dims4();
        let spatial = h * w;
        let count = (n * spatial) as f64;
        let mut dx = Tensor::zeros(x.shape());
        match self.cached_phase {
            Phase::Train => {
                for ch in 0..c {
                    let mean = self.cached_mean[ch];
                    let invstd = self.cached_invstd[ch];
                    let g = self.gamma.data()[ch];
                    let mut sum_dy = 0.0f64;
                    let mut sum_dy_xhat = 0.0f64;
                    for img in 0..n {
                        let base = (img * c + ch) * spatial;
                        let xs = &x.data()[base..base + spatial];
                        let dys = &grad_out.data()[base..base + spatial];
                        for (&xi, &dyi) in xs.iter().zip(dys.iter()) {
                            let xhat = (xi - mean) * invstd;
                            sum_dy += dyi as f64;
                            sum_dy_xhat += (dyi * xhat) as f64;
                        }
                    }
                    self.g_gamma.data_mut()[ch] += sum_dy_xhat as f32;
                    self.g_beta.data_mut()[ch] += sum_dy as f32;
                    let k1 = (g * invstd) as f64 / count;
                    for img in 0..n {
                        let base = (img * c + ch) * spatial;
                        let xs = &x.data()[base..base + spatial];
                        let dys = &grad_out.data()[base..base + spatial];
                        let dxs = &mut dx.data_mut()[base..base + spatial];
                        for ((dxo, &xi), &dyi) in dxs.iter_mut().zip(xs.iter()).zip(dys.iter()) {
                            let xhat = ((xi - mean) * invstd) as f64;
                            *dxo =
                                (k1 * (count * dyi as f64 - sum_dy - xhat * sum_dy_xhat)) as f32;
                        }
                    }
                }
            }
            Phase::Eval => {
                // running affine only: dx = dy * gamma * invstd; no param grads
                // are accumulated in eval (frozen-model optimization paths).
                for ch in 0..c {
                    let invstd = 1.0 / sqrt(self.running_var.data()[ch] + self.eps);
                    let scale = self.gamma.data()[ch] * invstd;
                    for img in 0..n {
                        let base = (img * c + ch) * spatial;
                        let dys = &grad_out.data()[base..base + spatial];
                        let dxs = &mut dx.data_mut()[base..base + spatial];
                        for (dxo, &dyi) in dxs.iter_mut().zip(dys.iter()) {
                            *dxo = dyi * scale;
                        }
                    }
                }
            }
        }
        dx
    }

    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&alloc::format!("{prefix}gamma"), &self.gamma);
        f(&alloc::format!("{prefix}beta"), &self.beta);
        f(&alloc::format!("{prefix}running_mean"), &self.running_mean);
        f(&alloc::format!("{prefix}running_var"), &self.running_var);
    }

    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&alloc::format!("{prefix}gamma"), &mut self.gamma);
        f(&alloc::format!("{prefix}beta"), &mut self.beta);
        f(&alloc::format!("{prefix}running_mean"), &mut self.running_mean);
        f(&alloc::format!("{prefix}running_var"), &mut self.running_var);
    }
}
