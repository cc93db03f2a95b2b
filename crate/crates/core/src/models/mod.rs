//! Model zoo: classifier architectures and trigger generators.

mod classifier;
mod generator;
mod resnet;

pub use classifier::{build_classifier, build_classifier_with, ClassifierHyper, ClassifierModel};
pub use generator::{build_generator, GeneratorModel};
pub use resnet::PreActResNet18;

use crate::error::{Error, Result};

/// Architecture identifiers, stable across checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchId {
    MnistCnn,
    PreActResNet18,
    EncoderDecoder,
}

impl ArchId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::MnistCnn => "mnist_cnn",
            ArchId::PreActResNet18 => "preact_resnet18",
            ArchId::EncoderDecoder => "encoder_decoder",
        }
    }

    pub fn parse(s: &str) -> Result<ArchId> {
        match s {
            "mnist_cnn" => Ok(ArchId::MnistCnn),
            "preact_resnet18" => Ok(ArchId::PreActResNet18),
            "encoder_decoder" => Ok(ArchId::EncoderDecoder),
            other => Err(Error::config(format_args!("unknown architecture `{other}`"))),
        }
    }
}
