//! Encoder-decoder trigger generators.
//!
//! Down path: (ConvBlock x 2, maxpool) per stage; up path: (ConvBlock,
//! upsample, ConvBlock) per stage; final ConvBlock without ReLU feeding a
//! sigmoid, so outputs live strictly in (0, 1) at the input resolution.
//! Stage widths are 16/32 for 28x28 inputs and 32/64/128 otherwise. A
//! ConvBlock is conv3x3 + batchnorm (+ ReLU).

use alloc::vec::Vec;

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::models::ArchId;
use crate::nn::{
    BatchNorm2d, Conv2d, Conv2dCfg, Ctx, Layer, MaxPool2, Module, ParamMut, Parameterized, Relu,
    Sequential, Sigmoid, Upsample2,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub arch: ArchId,
    pub out_channels: usize,
    /// (height, width, channels) of the images it consumes.
    pub input_shape: (usize, usize, usize),
    /// Frozen models expose no trainable parameters.
    pub frozen: bool,
    seq: Sequential,
}

fn conv_block(in_ch: usize, out_ch: usize, relu: bool, rng: &mut SeededRng, out: &mut Vec<Layer>) {
    out.push(Layer::Conv2d(Conv2d::new(
        Conv2dCfg {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: false,
        },
        rng,
    )));
    out.push(Layer::BatchNorm2d(BatchNorm2d::new(out_ch)));
    if relu {
        out.push(Layer::Relu(Relu::new()));
    }
}

/// Build a generator for the dataset shape with the requested output channel
/// count (1 for a mask generator, C for a pattern generator).
pub fn build_generator(
    spec: &DatasetSpec,
    out_channels: usize,
    rng: &mut SeededRng,
) -> Result<GeneratorModel> {
    let (h, w, c) = spec.input_shape;
    if out_channels != 1 && out_channels != c {
        return Err(Error::config(format_args!(
            "generator output channels must be 1 or {c}, got {out_channels}"
        )));
    }
    let widths: &[usize] = match (h, w) {
        (28, 28) => &[16, 32],
        (32, 32) => &[32, 64, 128],
        other => {
            return Err(Error::config(format_args!(
                "no generator architecture for spatial shape {other:?}"
            )))
        }
    };
    let mut layers = Vec::new();
    // encoder
    let mut in_ch = c;
    for &width in widths {
        conv_block(in_ch, width, true, rng, &mut layers);
        conv_block(width, width, true, rng, &mut layers);
        layers.push(Layer::MaxPool2(MaxPool2::new()));
        in_ch = width;
    }
    // decoder mirrors the encoder widths
    for &width in widths.iter().rev() {
        conv_block(in_ch, width, true, rng, &mut layers);
        layers.push(Layer::Upsample2(Upsample2::new()));
        conv_block(width, width, true, rng, &mut layers);
        in_ch = width;
    }
    // final block: conv + batchnorm + sigmoid, no ReLU
    conv_block(in_ch, out_channels, false, rng, &mut layers);
    layers.push(Layer::Sigmoid(Sigmoid::new()));

    // nothing consumes the input gradient of the first conv
    if let Some(Layer::Conv2d(first)) = layers.first_mut() {
        first.skip_input_grad = true;
    }

    Ok(GeneratorModel {
        arch: ArchId::EncoderDecoder,
        out_channels,
        input_shape: spec.input_shape,
        frozen: false,
        seq: Sequential::new(layers),
    })
}

impl GeneratorModel {
    pub fn forward_train(&mut self, x: Tensor, rng: &mut SeededRng) -> Tensor {
        assert!(!self.frozen, "forward_train on a frozen generator");
        self.forward(x, &mut Ctx::train(rng))
    }

    pub fn forward_eval(&mut self, x: Tensor) -> Tensor {
        self.forward(x, &mut Ctx::eval())
    }

    /// Freeze: parameters stop being visited, so optimizers no-op on it.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.seq.layer_kinds()
    }
}

impl Parameterized for GeneratorModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        if !self.frozen {
            self.seq.visit_params(f);
        }
    }
}

impl Module for GeneratorModel {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let got = (x.shape()[2], x.shape()[3], x.shape()[1]);
        assert_eq!(got, self.input_shape, "generator input shape mismatch");
        self.seq.forward(x, ctx)
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        self.seq.backward(grad_out)
    }

    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.seq.visit_state(prefix, f)
    }

    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.seq.visit_state_mut(prefix, f)
    }
}
