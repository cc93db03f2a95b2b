//! Classifier construction and the uniform model interface used by training,
//! evaluation, and the defense suite.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::models::{ArchId, PreActResNet18};
use crate::nn::{
    Conv2d, Conv2dCfg, Ctx, Dropout, Flatten, Layer, Linear, MaxPool2, Module, ParamMut,
    Parameterized, Relu, Sequential,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Hyperparameters the tables leave open.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierHyper {
    /// Dropout after each conv activation in the small convnet.
    pub dropout_conv: f32,
    /// Dropout after the hidden linear activation.
    pub dropout_fc: f32,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        ClassifierHyper {
            dropout_conv: 0.3,
            dropout_fc: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
enum ClassifierKind {
    /// conv5x5(32) -> pool -> conv5x5(64) -> pool -> fc(1024) -> fc(M),
    /// ReLU + dropout after each starred layer. Valid (unpadded) convs.
    MnistCnn {
        seq: Sequential,
        /// index of the post-conv2 ReLU output (the feature maps defenses use)
        feature_tap: usize,
        /// index of the last conv layer
        last_conv: usize,
    },
    ResNet(PreActResNet18),
}

/// A classifier: raw class scores out, softmax lives in the loss.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub arch: ArchId,
    pub class_count: usize,
    /// (height, width, channels)
    pub input_shape: (usize, usize, usize),
    kind: ClassifierKind,
}

/// Build the documented classifier for the dataset shape: the small convnet
/// for 28x28x1 inputs, pre-activation ResNet-18 for 32x32x3.
pub fn build_classifier(spec: &DatasetSpec, rng: &mut SeededRng) -> Result<ClassifierModel> {
    build_classifier_with(spec, ClassifierHyper::default(), rng)
}

pub fn build_classifier_with(
    spec: &DatasetSpec,
    hyper: ClassifierHyper,
    rng: &mut SeededRng,
) -> Result<ClassifierModel> {
    let (h, w, c) = spec.input_shape;
    let m = spec.class_count;
    match (h, w, c) {
        (28, 28, 1) => {
            let conv = |in_ch, out_ch, rng: &mut SeededRng| {
                Conv2d::new(
                    Conv2dCfg {
                        in_ch,
                        out_ch,
                        kernel: 5,
                        stride: 1,
                        padding: 0,
                        bias: true,
                    },
                    rng,
                )
            };
            // 28 -> conv5 -> 24 -> pool -> 12 -> conv5 -> 8 -> pool -> 4
            let seq = Sequential::new(vec![
                Layer::Conv2d(conv(1, 32, rng)),
                Layer::Relu(Relu::new()),
                Layer::Dropout(Dropout::new(hyper.dropout_conv)),
                Layer::MaxPool2(MaxPool2::new()),
                Layer::Conv2d(conv(32, 64, rng)),
                Layer::Relu(Relu::new()),
                Layer::Dropout(Dropout::new(hyper.dropout_conv)),
                Layer::MaxPool2(MaxPool2::new()),
                Layer::Flatten(Flatten::new()),
                Layer::Linear(Linear::new(4 * 4 * 64, 1024, rng)),
                Layer::Relu(Relu::new()),
                Layer::Dropout(Dropout::new(hyper.dropout_fc)),
                Layer::Linear(Linear::new(1024, m, rng)),
            ]);
            Ok(ClassifierModel {
                arch: ArchId::MnistCnn,
                class_count: m,
                input_shape: spec.input_shape,
                kind: ClassifierKind::MnistCnn {
                    seq,
                    feature_tap: 5,
                    last_conv: 4,
                },
            })
        }
        (32, 32, 3) => Ok(ClassifierModel {
            arch: ArchId::PreActResNet18,
            class_count: m,
            input_shape: spec.input_shape,
            kind: ClassifierKind::ResNet(PreActResNet18::new(m, rng)),
        }),
        other => Err(Error::config(format_args!(
            "no classifier architecture for input shape {other:?}"
        ))),
    }
}

impl ClassifierModel {
    pub fn forward_train(&mut self, x: Tensor, rng: &mut SeededRng) -> Tensor {
        self.forward(x, &mut Ctx::train(rng))
    }

    pub fn forward_eval(&mut self, x: Tensor) -> Tensor {
        self.forward(x, &mut Ctx::eval())
    }

    /// Forward pass that also returns the feature maps of the last conv
    /// stage (post-activation).
    pub fn forward_capture_features(&mut self, x: Tensor, ctx: &mut Ctx) -> (Tensor, Tensor) {
        match &mut self.kind {
            ClassifierKind::MnistCnn {
                seq, feature_tap, ..
            } => seq.forward_capture(x, ctx, *feature_tap),
            ClassifierKind::ResNet(net) => net.forward_capture_features(x, ctx),
        }
    }

    /// Backward pass that also returns the gradient flowing into the feature
    /// maps captured by [`Self::forward_capture_features`].
    pub fn backward_capture_features(&mut self, dy: Tensor) -> (Tensor, Tensor) {
        match &mut self.kind {
            ClassifierKind::MnistCnn {
                seq, feature_tap, ..
            } => seq.backward_capture(dy, *feature_tap),
            ClassifierKind::ResNet(net) => net.backward_capture_features(dy),
        }
    }

    /// The conv layer whose output channels the pruning defense removes.
    pub fn last_conv_mut(&mut self) -> &mut Conv2d {
        match &mut self.kind {
            ClassifierKind::MnistCnn { seq, last_conv, .. } => {
                match &mut seq.layers[*last_conv] {
                    Layer::Conv2d(c) => c,
                    _ => unreachable!("last_conv index points at a conv layer"),
                }
            }
            ClassifierKind::ResNet(net) => net.last_conv_mut(),
        }
    }

    /// Channel count of the feature maps / prunable layer.
    pub fn feature_channels(&self) -> usize {
        match &self.kind {
            ClassifierKind::MnistCnn { .. } => 64,
            ClassifierKind::ResNet(_) => 512,
        }
    }

    /// Layer kind tags, for architecture assertions and listings.
    pub fn layer_kinds(&self) -> Vec<&'static str> {
        match &self.kind {
            ClassifierKind::MnistCnn { seq, .. } => seq.layer_kinds(),
            ClassifierKind::ResNet(net) => net.layer_kinds(),
        }
    }
}

impl Parameterized for ClassifierModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        match &mut self.kind {
            ClassifierKind::MnistCnn { seq, .. } => seq.visit_params(f),
            ClassifierKind::ResNet(net) => net.visit_params(f),
        }
    }
}

impl Module for ClassifierModel {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let got = (x.shape()[2], x.shape()[3], x.shape()[1]);
        assert_eq!(
            got, self.input_shape,
            "classifier input shape mismatch (h,w,c)"
        );
        match &mut self.kind {
            ClassifierKind::MnistCnn { seq, .. } => seq.forward(x, ctx),
            ClassifierKind::ResNet(net) => net.forward(x, ctx),
        }
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        match &mut self.kind {
            ClassifierKind::MnistCnn { seq, .. } => seq.backward(grad_out),
            ClassifierKind::ResNet(net) => net.backward(grad_out),
        }
    }

    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match &self.kind {
            ClassifierKind::MnistCnn { seq, .. } => seq.visit_state(prefix, f),
            ClassifierKind::ResNet(net) => net.visit_state(prefix, f),
        }
    }

    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match &mut self.kind {
            ClassifierKind::MnistCnn { seq, .. } => seq.visit_state_mut(prefix, f),
            ClassifierKind::ResNet(net) => net.visit_state_mut(prefix, f),
        }
    }
}
