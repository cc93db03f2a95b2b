//! Subcommand implementations. Each command owns one run directory, writes
//! its artifacts plus a manifest, and reports errors with a config/runtime
//! distinction the process exit code reflects.

mod defend;
mod evaluate;
mod prepare;
mod report;
mod sweep;
mod trainers;

pub use defend::{defend, DefendArgs, DefendKind};
pub use evaluate::{evaluate_cmd, EvaluateArgs};
pub use prepare::prepare_data;
pub use report::report_cmd;
pub use sweep::{sweep_rho, SweepArgs};
pub use trainers::{pretrain_mask, train_baseline, train_dynamic, TrainArgs};

use std::path::{Path, PathBuf};

use dynback_core::dataset::{DatasetSpec, LabeledImage};
use dynback_core::rng::{streams, SeededRng};
use dynback_core::tensor::Tensor;
use dynback_core::trigger::StaticTriggerSpec;
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::loaders::{load_split, Split};

/// Command failure with the exit-code class attached.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Configuration or schema violation (exit code 2).
    #[error("{0}")]
    Config(String),
    /// Runtime failure (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }
}

pub(crate) fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<crate::loaders::LoadError> for CliError {
    fn from(e: crate::loaders::LoadError) -> Self {
        match e {
            crate::loaders::LoadError::UnknownDataset(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<crate::checkpoint::CheckpointError> for CliError {
    fn from(e: crate::checkpoint::CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::reports::ReportError> for CliError {
    fn from(e: crate::reports::ReportError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<dynback_core::Error> for CliError {
    fn from(e: dynback_core::Error) -> Self {
        match e {
            dynback_core::Error::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Global options shared by every subcommand.
#[derive(Clone, Debug)]
pub struct GlobalArgs {
    pub dataset_root: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub device: String,
}

impl GlobalArgs {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.device != "cpu" {
            return Err(CliError::Config(format!(
                "unsupported device `{}` (only `cpu` is available)",
                self.device
            )));
        }
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        crate::loaders::resolve_data_root(self.dataset_root.as_deref())
    }
}

/// Load a config, applying the global seed override.
pub(crate) fn load_config(path: &Path, global: &GlobalArgs) -> Result<ConfigFile, CliError> {
    let mut cfg = ConfigFile::load(path)?;
    if let Some(seed) = global.seed {
        cfg.experiment.seed = seed;
    }
    Ok(cfg)
}

/// The training subset: the first `train_subset` items of a seeded shuffle
/// of the train split (the full split when unset).
pub(crate) fn training_subset(
    cfg: &dynback_core::training::ExperimentConfig,
    mut data: Vec<LabeledImage>,
) -> Vec<LabeledImage> {
    if let Some(n) = cfg.train_subset {
        let mut rng = SeededRng::new(cfg.seed, streams::SUBSET);
        rng.shuffle(&mut data);
        data.truncate(n);
    }
    data
}

pub(crate) fn load_train_and_test(
    cfg_core: &dynback_core::training::ExperimentConfig,
    root: &Path,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>), CliError> {
    let train = load_split(&cfg_core.dataset, Split::Train, root)?;
    let test = load_split(&cfg_core.dataset, Split::Test, root)?;
    Ok((training_subset(cfg_core, train), test))
}

/// Static trigger asset: sparse mask coordinates and pattern values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TriggerAsset {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// (row, col, mask value)
    pub mask: Vec<(usize, usize, f32)>,
    /// (channel, row, col, pattern value)
    pub pattern: Vec<(usize, usize, usize, f32)>,
}

impl TriggerAsset {
    pub fn load(path: &Path) -> Result<TriggerAsset, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("trigger asset {}: {e}", path.display())))?;
        let asset: TriggerAsset = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("trigger asset {}: {e}", path.display())))?;
        Ok(asset)
    }

    pub fn to_spec(&self, dataset: &DatasetSpec) -> Result<StaticTriggerSpec, CliError> {
        let (h, w, c) = dataset.input_shape;
        if (self.height, self.width, self.channels) != (h, w, c) {
            return Err(CliError::Config(format!(
                "trigger asset shape {}x{}x{} does not match dataset {h}x{w}x{c}",
                self.height, self.width, self.channels
            )));
        }
        let mut mask = Tensor::zeros(&[1, h, w]);
        for &(y, x, v) in &self.mask {
            if y >= h || x >= w {
                return Err(CliError::Config(format!(
                    "mask coordinate ({y},{x}) outside {h}x{w}"
                )));
            }
            mask.data_mut()[y * w + x] = v;
        }
        let mut pattern = Tensor::zeros(&[c, h, w]);
        for &(ch, y, x, v) in &self.pattern {
            if ch >= c || y >= h || x >= w {
                return Err(CliError::Config(format!(
                    "pattern coordinate ({ch},{y},{x}) outside {c}x{h}x{w}"
                )));
            }
            pattern.data_mut()[(ch * h + y) * w + x] = v;
        }
        StaticTriggerSpec::new(mask, pattern).map_err(config_err)
    }

    /// Bounding box of the mask support: (top, left, height, width).
    pub fn support_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let ys: Vec<usize> = self.mask.iter().filter(|m| m.2 > 0.0).map(|m| m.0).collect();
        let xs: Vec<usize> = self.mask.iter().filter(|m| m.2 > 0.0).map(|m| m.1).collect();
        let (y0, y1) = (ys.iter().min()?, ys.iter().max()?);
        let (x0, x1) = (xs.iter().min()?, xs.iter().max()?);
        Some((*y0, *x0, y1 - y0 + 1, x1 - x0 + 1))
    }
}

/// Save a [H, W] or [C, H, W] tensor in [0,1] as a PNG.
pub(crate) fn save_png(path: &Path, t: &Tensor) -> Result<(), CliError> {
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img: image::DynamicImage = match t.shape() {
        [h, w] => {
            let mut img = image::GrayImage::new(*w as u32, *h as u32);
            for (i, p) in img.pixels_mut().enumerate() {
                p.0[0] = to_u8(t.data()[i]);
            }
            image::DynamicImage::ImageLuma8(img)
        }
        [1, h, w] => {
            let mut img = image::GrayImage::new(*w as u32, *h as u32);
            for (i, p) in img.pixels_mut().enumerate() {
                p.0[0] = to_u8(t.data()[i]);
            }
            image::DynamicImage::ImageLuma8(img)
        }
        [3, h, w] => {
            let (h, w) = (*h, *w);
            let mut img = image::RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = img.get_pixel_mut(x as u32, y as u32);
                    for ch in 0..3 {
                        px.0[ch] = to_u8(t.data()[(ch * h + y) * w + x]);
                    }
                }
            }
            image::DynamicImage::ImageRgb8(img)
        }
        other => {
            return Err(CliError::Runtime(format!(
                "cannot render tensor of shape {other:?} as an image"
            )))
        }
    };
    img.save(path)
        .map_err(|e| CliError::Runtime(format!("png write {}: {e}", path.display())))
}
