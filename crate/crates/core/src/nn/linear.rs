use alloc::vec::Vec;

use crate::nn::{Ctx, Module, ParamMut, Parameterized};
use crate::rng::SeededRng;
use crate::tensor::{gemm, gemm_at, gemm_bt, Tensor};

/// Fully-connected layer. Weights stored [out_features, in_features].
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub w: Tensor,
    pub b: Tensor,
    pub gw: Tensor,
    pub gb: Tensor,
    cached_x: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Linear {
        let mut w = Tensor::zeros(&[out_features, in_features]);
        super::init::fan_in_uniform(rng, &mut w, in_features);
        let mut b = Tensor::zeros(&[out_features]);
        super::init::fan_in_uniform(rng, &mut b, in_features);
        Linear {
            in_features,
            out_features,
            gw: Tensor::zeros(w.shape()),
            gb: Tensor::zeros(b.shape()),
            w,
            b,
            cached_x: None,
        }
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut {
            value: &mut self.w,
            grad: &mut self.gw,
        });
        f(ParamMut {
            value: &mut self.b,
            grad: &mut self.gb,
        });
    }
}

impl Module for Linear {
    fn forward(&mut self, x: Tensor, _ctx: &mut Ctx) -> Tensor {
        assert_eq!(x.shape().len(), 2, "linear expects [batch, features]");
        let batch = x.shape()[0];
        assert_eq!(x.shape()[1], self.in_features, "linear input width");
        let mut y = Tensor::zeros(&[batch, self.out_features]);
        // y = x . w^T
        gemm_bt(
            batch,
            self.in_features,
            self.out_features,
            1.0,
            x.data(),
            self.w.data(),
            0.0,
            y.data_mut(),
        );
        for row in 0..batch {
            let ys = y.item_mut(row);
            for (yo, &bv) in ys.iter_mut().zip(self.b.data().iter()) {
                *yo += bv;
            }
        }
        self.cached_x = Some(x);
        y
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        let x = self.cached_x.take().expect("linear backward before forward");
        let batch = x.shape()[0];
        // gw += dy^T . x
        gemm_at(
            self.out_features,
            batch,
            self.in_features,
            1.0,
            grad_out.data(),
            x.data(),
            1.0,
            self.gw.data_mut(),
        );
        for row in 0..batch {
            let dys = grad_out.item(row);
            for (gb, &dy) in self.gb.data_mut().iter_mut().zip(dys.iter()) {
                *gb += dy;
            }
        }
        // dx = dy . w
        let mut dx = Tensor::zeros(&[batch, self.in_features]);
        gemm(
            batch,
            self.out_features,
            self.in_features,
            1.0,
            grad_out.data(),
            self.w.data(),
            0.0,
            dx.data_mut(),
        );
        dx
    }

    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&alloc::format!("{prefix}w"), &self.w);
        f(&alloc::format!("{prefix}b"), &self.b);
    }

    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&alloc::format!("{prefix}w"), &mut self.w);
        f(&alloc::format!("{prefix}b"), &mut self.b);
    }
}

/// [N, ...] -> [N, prod(...)]; pure reshape.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    in_shape: Vec<usize>,
}

impl Flatten {
    pub fn new() -> Flatten {
        Flatten::default()
    }
}

impl Parameterized for Flatten {
    fn visit_params(&mut self, _f: &mut dyn FnMut(ParamMut<'_>)) {}
}

impl Module for Flatten {
    fn forward(&mut self, x: Tensor, _ctx: &mut Ctx) -> Tensor {
        self.in_shape = x.shape().to_vec();
        let n = self.in_shape[0];
        let rest: usize = self.in_shape[1..].iter().product();
        x.reshape(&[n, rest]).expect("flatten reshape")
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        grad_out
            .reshape(&self.in_shape.clone())
            .expect("flatten backward reshape")
    }

    fn visit_state(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_state_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}
