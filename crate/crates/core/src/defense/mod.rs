//! Defense and inspection battery: trigger reverse-engineering with anomaly
//! scoring, perturbation-entropy testing, dormant-channel pruning, input
//! squeezing, and gradient-weighted activation heatmaps.
//!
//! Every routine treats the classifier as a frozen artifact (pruning clones
//! it first) and can run against either the generator-backed model or the
//! static-trigger baseline.

mod fine_prune;
mod gradcam;
mod neural_cleanse;
mod squeeze;
mod strip;

pub use fine_prune::{fine_prune, PruningCurve, PruningPoint, TriggerSource};
pub use gradcam::{gradcam, heat_ratio_in_region};
pub use neural_cleanse::{neural_cleanse, AnomalyReport, LabelTrigger, NeuralCleanseConfig};
pub use squeeze::{squeeze, squeeze_batch, SqueezeMethod};
pub use strip::{strip, strip_distribution, EntropyReport, StripConfig};
