//! Inverted dropout: kept units are scaled by 1/(1-p) at train time so eval
//! is the identity.

use crate::nn::{Ctx, Module, ParamMut, Parameterized, Phase};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Dropout {
    pub p: f32,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(p: f32) -> Dropout {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1)");
        Dropout { p, mask: None }
    }
}

impl Parameterized for Dropout {
    fn visit_params(&mut self, _f: &mut dyn FnMut(ParamMut<'_>)) {}
}

impl Module for Dropout {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Tensor {
        match ctx.phase {
            Phase::Eval => {
                self.mask = None;
                x
            }
            Phase::Train => {
                if self.p == 0.0 {
                    self.mask = None;
                    return x;
                }
                let rng = ctx
                    .rng
                    .as_deref_mut()
                    .expect("dropout in train phase needs an rng");
                let scale = 1.0 / (1.0 - self.p);
                let mut mask = Tensor::zeros(x.shape());
                for (m, v) in mask.data_mut().iter_mut().zip(x.data_mut().iter_mut()) {
                    if rng.uniform() < self.p {
                        *m = 0.0;
                        *v = 0.0;
                    } else {
                        *m = scale;
                        *v *= scale;
                    }
                }
                self.mask = Some(mask);
                x
            }
        }
    }

    fn backward(&mut self, mut grad_out: Tensor) -> Tensor {
        if let Some(mask) = self.mask.take() {
            for (g, &m) in grad_out.data_mut().iter_mut().zip(mask.data().iter()) {
                *g *= m;
            }
        }
        grad_out
    }

    fn visit_state(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_state_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}
