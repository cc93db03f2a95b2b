use crate::math::sigmoid;
use crate::nn::{Ctx, Module, ParamMut, Parameterized};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct Relu {
    cached_x: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Relu {
        Relu::default()
    }
}

impl Parameterized for Relu {
    fn visit_params(&mut self, _f: &mut dyn FnMut(ParamMut<'_>)) {}
}

impl Module for Relu {
    fn forward(&mut self, x: Tensor, _ctx: &mut Ctx) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.cached_x = Some(x);
        y
    }

    fn backward(&mut self, mut grad_out: Tensor) -> Tensor {
        let x = self.cached_x.take().expect("relu backward before forward");
        for (g, &v) in grad_out.data_mut().iter_mut().zip(x.data().iter()) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        grad_out
    }

    fn visit_state(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_state_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

#[derive(Clone, Debug, Default)]
pub struct Sigmoid {
    cached_y: Option<Tensor>,
}

impl Sigmoid {
    pub fn new() -> Sigmoid {
        Sigmoid::default()
    }
}

impl Parameterized for Sigmoid {
    fn visit_params(&mut self, _f: &mut dyn FnMut(ParamMut<'_>)) {}
}

impl Module for Sigmoid {
    fn forward(&mut self, mut x: Tensor, _ctx: &mut Ctx) -> Tensor {
        // clamp away from the f32 saturation points so outputs stay strictly
        // inside (0, 1) even for extreme pre-activations
        const LO: f32 = f32::MIN_POSITIVE;
        const HI: f32 = 1.0 - f32::EPSILON / 2.0;
        x.data_mut()
            .iter_mut()
            .for_each(|v| *v = sigmoid(*v).clamp(LO, HI));
        self.cached_y = Some(x.clone());
        x
    }

    fn backward(&mut self, mut grad_out: Tensor) -> Tensor {
        let y = self.cached_y.take().expect("sigmoid backward before forward");
        for (g, &v) in grad_out.data_mut().iter_mut().zip(y.data().iter()) {
            *g *= v * (1.0 - v);
        }
        grad_out
    }

    fn visit_state(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_state_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_backward() {
        let x = Tensor::from_vec(alloc::vec![-1.0, 0.0, 2.0, -0.5], &[1, 4]).unwrap();
        let mut relu = Relu::new();
        let y = relu.forward(x, &mut Ctx::eval());
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let dy = Tensor::filled(&[1, 4], 1.0);
        let dx = relu.backward(dy);
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_range_and_gradient() {
        let x = Tensor::from_vec(alloc::vec![-30.0, -1.0, 0.0, 1.0, 30.0], &[1, 5]).unwrap();
        let mut sig = Sigmoid::new();
        let y = sig.forward(x, &mut Ctx::eval());
        for &v in y.data() {
            assert!(v > 0.0 && v < 1.0);
        }
        assert!((y.data()[2] - 0.5).abs() < 1e-6);
        let dx = sig.backward(Tensor::filled(&[1, 5], 1.0));
        // peak derivative 0.25 at x=0
        assert!((dx.data()[2] - 0.25).abs() < 1e-6);
        assert!(dx.data()[0] < 1e-9);
    }
}
