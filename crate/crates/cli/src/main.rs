use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dynback_cli::commands::{
    defend, evaluate_cmd, prepare_data, pretrain_mask, report_cmd, sweep_rho, train_baseline,
    train_dynamic, CliError, DefendArgs, DefendKind, EvaluateArgs, GlobalArgs, SweepArgs,
    TrainArgs,
};

/// Train image classifiers with an input-conditioned dynamic backdoor, the
/// static-trigger baseline, and run the defense battery against both.
#[derive(Parser)]
#[command(name = "dynback", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Dataset root (defaults to $DYNBACK_DATA_ROOT, then ./data).
    #[arg(long, global = true)]
    dataset_root: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Base directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Compute device (only `cpu` is available).
    #[arg(long, global = true, default_value = "cpu")]
    device: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a dataset directory (or generate the synthetic corpus) and
    /// write its manifest.
    PrepareData {
        #[arg(long)]
        dataset: String,
        /// Seed for the synthetic corpus generator.
        #[arg(long)]
        synth_seed: Option<u64>,
    },
    /// Pretrain and freeze the mask generator.
    PretrainMask {
        #[arg(long)]
        config: PathBuf,
    },
    /// Jointly train the classifier and pattern generator.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mask_checkpoint: PathBuf,
    },
    /// Train the static-trigger baseline.
    TrainBaseline {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's trigger asset path.
        #[arg(long)]
        trigger_asset: Option<PathBuf>,
    },
    /// Clean / attack / cross-trigger accuracy of a stored model.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mask_checkpoint: Option<PathBuf>,
        #[arg(long)]
        pattern_checkpoint: Option<PathBuf>,
        #[arg(long)]
        trigger_asset: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        label: String,
    },
    /// Run one defense against a stored model.
    Defend {
        #[command(subcommand)]
        kind: DefendSub,
    },
    /// Train-and-evaluate across a grid of mode probabilities.
    SweepRho {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mask_checkpoint: PathBuf,
        /// `b` or `c`.
        #[arg(long)]
        axis: String,
        /// Comma-separated probability values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f32>,
    },
    /// Render stored metrics as a results table.
    Report {
        /// metrics.json, results.csv, or a directory of runs.
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Clone, clap::Args)]
struct DefendCommon {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mask_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pattern_checkpoint: Option<PathBuf>,
    #[arg(long)]
    trigger_asset: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    label: String,
    /// Heat-ratio region as top,left,height,width (gradcam only).
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum DefendSub {
    /// Per-label trigger reverse-engineering with anomaly scoring.
    NeuralCleanse(DefendCommon),
    /// Perturbation-entropy testing of clean vs poisoned inputs.
    Strip(DefendCommon),
    /// Dormant-channel pruning curve.
    FinePrune(DefendCommon),
    /// Input squeezing (median smoothing, color-depth shrinking).
    Squeeze(DefendCommon),
    /// Activation heatmaps on poisoned inputs.
    Gradcam(DefendCommon),
}

fn defend_args(kind: DefendKind, common: DefendCommon) -> Result<DefendArgs, CliError> {
    let region = match &common.region {
        None => None,
        Some(v) if v.len() == 4 => Some((v[0], v[1], v[2], v[3])),
        Some(_) => {
            return Err(CliError::Config(
                "--region expects four values: top,left,height,width".into(),
            ))
        }
    };
    Ok(DefendArgs {
        kind,
        config: common.config,
        checkpoint: common.checkpoint,
        mask_checkpoint: common.mask_checkpoint,
        pattern_checkpoint: common.pattern_checkpoint,
        trigger_asset: common.trigger_asset,
        label: common.label,
        region,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let global = GlobalArgs {
        dataset_root: cli.dataset_root,
        out: cli.out,
        seed: cli.seed,
        device: cli.device,
    };
    match cli.cmd {
        Cmd::PrepareData {
            dataset,
            synth_seed,
        } => prepare_data(&dataset, synth_seed, &global),
        Cmd::PretrainMask { config } => pretrain_mask(
            &TrainArgs {
                config,
                mask_checkpoint: None,
                trigger_asset: None,
            },
            &global,
        ),
        Cmd::Train {
            config,
            mask_checkpoint,
        } => train_dynamic(
            &TrainArgs {
                config,
                mask_checkpoint: Some(mask_checkpoint),
                trigger_asset: None,
            },
            &global,
        ),
        Cmd::TrainBaseline {
            config,
            trigger_asset,
        } => train_baseline(
            &TrainArgs {
                config,
                mask_checkpoint: None,
                trigger_asset,
            },
            &global,
        ),
        Cmd::Evaluate {
            config,
            checkpoint,
            mask_checkpoint,
            pattern_checkpoint,
            trigger_asset,
            label,
        } => evaluate_cmd(
            &EvaluateArgs {
                config,
                checkpoint,
                mask_checkpoint,
                pattern_checkpoint,
                trigger_asset,
                label,
            },
            &global,
        ),
        Cmd::Defend { kind } => {
            let (kind, common) = match kind {
                DefendSub::NeuralCleanse(c) => (DefendKind::NeuralCleanse, c),
                DefendSub::Strip(c) => (DefendKind::Strip, c),
                DefendSub::FinePrune(c) => (DefendKind::FinePrune, c),
                DefendSub::Squeeze(c) => (DefendKind::Squeeze, c),
                DefendSub::Gradcam(c) => (DefendKind::GradCam, c),
            };
            defend(&defend_args(kind, common)?, &global)
        }
        Cmd::SweepRho {
            config,
            mask_checkpoint,
            axis,
            values,
        } => sweep_rho(
            &SweepArgs {
                config,
                mask_checkpoint,
                axis,
                values,
            },
            &global,
        ),
        Cmd::Report { results } => report_cmd(&results, &global),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "schema_version": dynback_cli::SCHEMA_VERSION,
                "error": err.kind(),
                "message": err.to_string(),
            });
            eprintln!("{payload}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
