//! Experiment config files: a flat TOML schema mapped onto the core config,
//! with canonical re-serialization and a stable content hash.

use std::path::Path;

use dynback_core::dataset::{AugmentOp, DatasetSpec};
use dynback_core::nn::StepSchedule;
use dynback_core::training::{AdamConfig, ExperimentConfig, SgdConfig, TargetRule};
use dynback_core::trigger::MaskPretrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub mask_pretrain: MaskPretrainSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub defense: DefenseSection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub dataset: String,
    /// "single" or "all_to_all".
    pub target_rule: String,
    #[serde(default)]
    pub target_class: u32,
    pub rho_b: f32,
    pub rho_c: f32,
    pub lambda_div: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
    #[serde(default = "default_true")]
    pub attack_acc_excludes_target: bool,
    /// Optional override of the dataset's documented augmentation policy.
    #[serde(default)]
    pub augmentations: Option<Vec<String>>,
    /// Save model checkpoints every N epochs (0: final only).
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_probe_size() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub lr: f32,
    /// Epochs between drops; 0 disables drops.
    pub lr_drop_every: usize,
    /// First epoch at which the rate drops.
    pub lr_drop_start: usize,
    pub lr_drop_factor: f32,
}

impl ScheduleSection {
    fn to_schedule(&self) -> StepSchedule {
        StepSchedule {
            base_lr: self.lr,
            gamma: self.lr_drop_factor,
            step_every: self.lr_drop_every,
            start_epoch: self.lr_drop_start,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub classifier: ClassifierOpt,
    pub generator: ScheduleSection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClassifierOpt {
    #[serde(flatten)]
    pub schedule: ScheduleSection,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        // nominal full-scale recipe: SGD(0.01) dropping 10x every 100 epochs;
        // Adam(0.01) dropping every 100 epochs from epoch 200
        OptimizerSection {
            classifier: ClassifierOpt {
                schedule: ScheduleSection {
                    lr: 0.01,
                    lr_drop_every: 100,
                    lr_drop_start: 100,
                    lr_drop_factor: 0.1,
                },
                momentum: 0.9,
                weight_decay: 5e-4,
            },
            generator: ScheduleSection {
                lr: 0.01,
                lr_drop_every: 100,
                lr_drop_start: 200,
                lr_drop_factor: 0.1,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaskPretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub schedule: ScheduleSection,
    pub sparsity_target: f32,
    pub lambda_sparsity: f32,
    pub lambda_diversity: f32,
    pub div_floor: f32,
}

impl Default for MaskPretrainSection {
    fn default() -> Self {
        // full-scale: 25 epochs, Adam(0.01) dropping 10x every 10 epochs
        MaskPretrainSection {
            epochs: 25,
            batch_size: 128,
            schedule: ScheduleSection {
                lr: 0.01,
                lr_drop_every: 10,
                lr_drop_start: 10,
                lr_drop_factor: 0.1,
            },
            sparsity_target: 0.1,
            lambda_sparsity: 10.0,
            lambda_diversity: 1.0,
            div_floor: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub poison_rate: f32,
    /// Path to a static trigger asset (JSON), relative to the config file.
    pub trigger_asset: String,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            poison_rate: 0.1,
            trigger_asset: "assets/trigger_checkerboard3_28.json".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    pub nc_steps: usize,
    pub nc_batch: usize,
    pub nc_lambda_mask: f32,
    pub nc_lr: f32,
    pub nc_clean_inputs: usize,
    pub strip_overlays: usize,
    pub strip_inputs: usize,
    pub fineprune_step: usize,
    pub fineprune_clean: usize,
    pub fineprune_eval: usize,
    pub gradcam_inputs: usize,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection {
            nc_steps: 500,
            nc_batch: 32,
            nc_lambda_mask: 0.01,
            nc_lr: 0.1,
            nc_clean_inputs: 512,
            strip_overlays: 64,
            strip_inputs: 256,
            fineprune_step: 4,
            fineprune_clean: 500,
            fineprune_eval: 2000,
            gradcam_inputs: 64,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ConfigFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if cfg.schema_version != crate::SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported schema_version {} (expected {})",
                cfg.schema_version,
                crate::SCHEMA_VERSION
            )));
        }
        cfg.to_core()?;
        Ok(cfg)
    }

    /// Canonical serialized form (field order fixed by the struct layout).
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stable content hash of the canonical form.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical().as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, ConfigError> {
        let mut spec = crate::loaders::spec_by_name(&self.experiment.dataset)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(augs) = &self.experiment.augmentations {
            let mut policy = Vec::with_capacity(augs.len());
            for a in augs {
                policy.push(AugmentOp::parse(a).map_err(|e| ConfigError::Invalid(e.to_string()))?);
            }
            spec.augmentation_policy = policy;
        }
        Ok(spec)
    }

    /// Build the core experiment config (validated).
    pub fn to_core(&self) -> Result<ExperimentConfig, ConfigError> {
        let spec = self.dataset_spec()?;
        let target_rule = match self.experiment.target_rule.as_str() {
            "single" => TargetRule::Single(self.experiment.target_class),
            "all_to_all" => TargetRule::AllToAll,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown target_rule `{other}` (expected `single` or `all_to_all`)"
                )))
            }
        };
        let cfg = ExperimentConfig {
            dataset: spec,
            rho_b: self.experiment.rho_b,
            rho_c: self.experiment.rho_c,
            lambda_div: self.experiment.lambda_div,
            target_rule,
            epochs: self.experiment.epochs,
            batch_size: self.experiment.batch_size,
            seed: self.experiment.seed,
            train_subset: self.experiment.train_subset,
            probe_size: self.experiment.probe_size,
            opt_f: SgdConfig {
                momentum: self.optimizer.classifier.momentum,
                weight_decay: self.optimizer.classifier.weight_decay,
                schedule: self.optimizer.classifier.schedule.to_schedule(),
            },
            opt_g: AdamConfig {
                schedule: self.optimizer.generator.to_schedule(),
            },
            mask_pretrain: MaskPretrainConfig {
                epochs: self.mask_pretrain.epochs,
                batch_size: self.mask_pretrain.batch_size,
                schedule: self.mask_pretrain.schedule.to_schedule(),
                sparsity_target: self.mask_pretrain.sparsity_target,
                lambda_sparsity: self.mask_pretrain.lambda_sparsity,
                lambda_diversity: self.mask_pretrain.lambda_diversity,
                div_floor: self.mask_pretrain.div_floor,
            },
            attack_acc_excludes_target: self.experiment.attack_acc_excludes_target,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}
