//! Neural-network building blocks with explicit forward/backward passes.
//!
//! Layers cache whatever their backward pass needs during forward; a step is
//! always `zero_grads` -> forward -> backward -> `optimizer.step`. Everything
//! runs single-threaded in deterministic order.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dropout;
pub mod init;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod pool;

pub use activation::{Relu, Sigmoid};
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, Conv2dCfg};
pub use dropout::Dropout;
pub use linear::{Flatten, Linear};
pub use loss::{cross_entropy_mean, entropy, softmax_rows};
pub use optim::{Adam, Sgd, StepSchedule};
pub use pool::{GlobalAvgPool, MaxPool2, Upsample2};

use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Per-call context: phase plus the RNG dropout draws from when training.
pub struct Ctx<'r> {
    pub phase: Phase,
    pub rng: Option<&'r mut SeededRng>,
}

impl<'r> Ctx<'r> {
    pub fn train(rng: &'r mut SeededRng) -> Ctx<'r> {
        Ctx {
            phase: Phase::Train,
            rng: Some(rng),
        }
    }

    pub fn eval() -> Ctx<'static> {
        Ctx {
            phase: Phase::Eval,
            rng: None,
        }
    }
}

/// A mutable view of one parameter tensor and its gradient accumulator.
pub struct ParamMut<'a> {
    pub value: &'a mut Tensor,
    pub grad: &'a mut Tensor,
}

/// Anything exposing trainable parameters, in a stable visitation order.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>));
}

/// A differentiable module. `backward` must be called at most once per
/// `forward` and accumulates into parameter gradients.
pub trait Module: Parameterized {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor;
    fn backward(&mut self, grad_out: Tensor) -> Tensor;

    /// Serializable state (parameters and buffers), visited as
    /// `"{prefix}name"` pairs.
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

/// Reset all gradient accumulators to zero.
pub fn zero_grads(p: &mut dyn Parameterized) {
    p.visit_params(&mut |pm| pm.grad.fill(0.0));
}

/// Total number of parameter elements.
pub fn param_count(p: &mut dyn Parameterized) -> usize {
    let mut n = 0;
    p.visit_params(&mut |pm| n += pm.value.len());
    n
}

/// A layer of one of the supported kinds. Enum dispatch keeps models
/// cloneable and serializable without trait objects.
#[derive(Clone, Debug)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    Relu(Relu),
    Sigmoid(Sigmoid),
    MaxPool2(MaxPool2),
    Upsample2(Upsample2),
    GlobalAvgPool(GlobalAvgPool),
    Dropout(Dropout),
    Flatten(Flatten),
    Linear(Linear),
}

macro_rules! delegate {
    ($self:ident, $inner:ident => $body:expr) => {
        match $self {
            Layer::Conv2d($inner) => $body,
            Layer::BatchNorm2d($inner) => $body,
            Layer::Relu($inner) => $body,
            Layer::Sigmoid($inner) => $body,
            Layer::MaxPool2($inner) => $body,
            Layer::Upsample2($inner) => $body,
            Layer::GlobalAvgPool($inner) => $body,
            Layer::Dropout($inner) => $body,
            Layer::Flatten($inner) => $body,
            Layer::Linear($inner) => $body,
        }
    };
}

impl Parameterized for Layer {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        delegate!(self, l => l.visit_params(f))
    }
}

impl Module for Layer {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        delegate!(self, l => l.forward(x, ctx))
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        delegate!(self, l => l.backward(grad_out))
    }

    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        delegate!(self, l => l.visit_state(prefix, f))
    }

    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        delegate!(self, l => l.visit_state_mut(prefix, f))
    }
}

impl Layer {
    /// Short kind tag used in layer listings.
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm2d(_) => "batchnorm2d",
            Layer::Relu(_) => "relu",
            Layer::Sigmoid(_) => "sigmoid",
            Layer::MaxPool2(_) => "maxpool2",
            Layer::Upsample2(_) => "upsample2",
            Layer::GlobalAvgPool(_) => "global_avg_pool",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::Linear(_) => "linear",
        }
    }
}

/// An ordered stack of layers.
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Sequential {
        Sequential { layers }
    }

    /// Layer kind tags in order, e.g. for architecture assertions.
    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(Layer::kind).collect()
    }

    /// Forward pass that also clones the output of layer `tap`.
    pub fn forward_capture(&mut self, x: Tensor, ctx: &mut Ctx, tap: usize) -> (Tensor, Tensor) {
        assert!(tap < self.layers.len());
        let mut cur = x;
        let mut captured = None;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            cur = layer.forward(cur, ctx);
            if i == tap {
                captured = Some(cur.clone());
            }
        }
        (cur, captured.expect("tap within range"))
    }

    /// Backward pass that also clones the gradient arriving at the output of
    /// layer `tap` (before that layer consumes it).
    pub fn backward_capture(&mut self, grad_out: Tensor, tap: usize) -> (Tensor, Tensor) {
        assert!(tap < self.layers.len());
        let mut cur = grad_out;
        let mut captured = None;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            if i == tap {
                captured = Some(cur.clone());
            }
            cur = layer.backward(cur);
        }
        (cur, captured.expect("tap within range"))
    }
}

impl Parameterized for Sequential {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }
}

impl Module for Sequential {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let mut cur = x;
        for layer in &mut self.layers {
            cur = layer.forward(cur, ctx);
        }
        cur
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        let mut cur = grad_out;
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(cur);
        }
        cur
    }

    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p: String = alloc::format!("{prefix}l{i}.");
            layer.visit_state(&p, f);
        }
    }

    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p: String = alloc::format!("{prefix}l{i}.");
            layer.visit_state_mut(&p, f);
        }
    }
}
