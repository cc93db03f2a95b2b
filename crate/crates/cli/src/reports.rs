//! Report serialization: metrics JSON, results CSV, training history CSV,
//! defense reports, and the three-column results table.

use std::path::Path;

use dynback_core::defense::{AnomalyReport, EntropyReport, PruningCurve};
use dynback_core::evaluate::MetricsReport;
use dynback_core::training::{EpochStats, TargetRule};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn target_rule_string(rule: TargetRule) -> String {
    match rule {
        TargetRule::Single(c) => format!("single({c})"),
        TargetRule::AllToAll => "all_to_all".into(),
    }
}

/// The evaluation report written to disk: core metrics plus run provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub schema_version: u32,
    pub dataset: String,
    pub target_rule: String,
    pub clean_acc: f32,
    pub attack_acc: f32,
    pub cross_acc: f32,
    pub n_clean: usize,
    pub n_attack: usize,
    pub n_cross: usize,
    pub config_hash: String,
    pub seed: u64,
    /// Unix timestamp (seconds).
    pub timestamp: u64,
    /// Freeform label ("dynamic", "baseline", sweep point, ...).
    pub label: String,
}

impl MetricsDocument {
    pub fn new(
        report: &MetricsReport,
        dataset: &str,
        config_hash: &str,
        seed: u64,
        label: &str,
    ) -> Self {
        MetricsDocument {
            schema_version: crate::SCHEMA_VERSION,
            dataset: dataset.to_string(),
            target_rule: target_rule_string(report.target_rule),
            clean_acc: report.clean_acc,
            attack_acc: report.attack_acc,
            cross_acc: report.cross_acc,
            n_clean: report.n_clean,
            n_attack: report.n_attack,
            n_cross: report.n_cross,
            config_hash: config_hash.to_string(),
            seed,
            timestamp: now_unix(),
            label: label.to_string(),
        }
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, json).map_err(io_at(path))
}

pub fn read_metrics(path: &Path) -> Result<MetricsDocument, ReportError> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Append one row to the cumulative results CSV (header written on create).
pub fn append_results_csv(path: &Path, doc: &MetricsDocument) -> Result<(), ReportError> {
    let exists = path.exists();
    let mut out = String::new();
    if !exists {
        out.push_str("timestamp,label,dataset,target_rule,clean_acc,attack_acc,cross_acc,config_hash,seed\n");
    }
    out.push_str(&format!(
        "{},{},{},{},{:.4},{:.4},{:.4},{},{}\n",
        doc.timestamp,
        doc.label,
        doc.dataset,
        doc.target_rule,
        doc.clean_acc,
        doc.attack_acc,
        doc.cross_acc,
        doc.config_hash,
        doc.seed
    ));
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_at(path))?;
    file.write_all(out.as_bytes()).map_err(io_at(path))
}

/// Training history CSV: one row per epoch.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<(), ReportError> {
    let mut out =
        String::from("epoch,L_cla,L_div,L_total,clean_acc,attack_acc,cross_acc,lr_f,lr_g\n");
    for h in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.6},{:.6}\n",
            h.epoch,
            h.l_cla,
            h.l_div,
            h.l_total,
            h.clean_acc,
            h.attack_acc,
            h.cross_acc,
            h.lr_f,
            h.lr_g
        ));
    }
    std::fs::write(path, out).map_err(io_at(path))
}

/// Anomaly report document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnomalyDocument {
    pub schema_version: u32,
    pub tau: f32,
    pub mask_l1_norms: Vec<f32>,
    pub anomaly_index: Vec<f32>,
    pub flagged: Vec<u32>,
    pub conversion_rates: Vec<f32>,
    pub config_hash: String,
    pub label: String,
}

impl AnomalyDocument {
    pub fn new(report: &AnomalyReport, config_hash: &str, label: &str) -> Self {
        AnomalyDocument {
            schema_version: crate::SCHEMA_VERSION,
            tau: report.tau,
            mask_l1_norms: report.triggers.iter().map(|t| t.mask_l1).collect(),
            anomaly_index: report.anomaly_index.clone(),
            flagged: report.flagged.clone(),
            conversion_rates: report.triggers.iter().map(|t| t.conversion_rate).collect(),
            config_hash: config_hash.to_string(),
            label: label.to_string(),
        }
    }
}

/// Entropy distributions for clean vs poisoned probes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StripDocument {
    pub schema_version: u32,
    pub clean_median: f32,
    pub poisoned_median: f32,
    pub clean_min: f32,
    pub poisoned_min: f32,
    pub n_inputs: usize,
    pub n_overlays: usize,
    pub config_hash: String,
    pub label: String,
}

impl StripDocument {
    pub fn new(
        clean: &EntropyReport,
        poisoned: &EntropyReport,
        n_overlays: usize,
        config_hash: &str,
        label: &str,
    ) -> Self {
        StripDocument {
            schema_version: crate::SCHEMA_VERSION,
            clean_median: clean.median,
            poisoned_median: poisoned.median,
            clean_min: clean.min,
            poisoned_min: poisoned.min,
            n_inputs: clean.entropies.len(),
            n_overlays,
            config_hash: config_hash.to_string(),
            label: label.to_string(),
        }
    }
}

/// Entropy samples as CSV for histogram plotting.
pub fn write_entropy_csv(
    path: &Path,
    clean: &EntropyReport,
    poisoned: &EntropyReport,
) -> Result<(), ReportError> {
    let mut out = String::from("population,entropy\n");
    for e in &clean.entropies {
        out.push_str(&format!("clean,{e:.6}\n"));
    }
    for e in &poisoned.entropies {
        out.push_str(&format!("poisoned,{e:.6}\n"));
    }
    std::fs::write(path, out).map_err(io_at(path))
}

/// Pruning curve document + CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PruneDocument {
    pub schema_version: u32,
    pub points: Vec<(usize, f32, f32)>,
    pub config_hash: String,
    pub label: String,
}

impl PruneDocument {
    pub fn new(curve: &PruningCurve, config_hash: &str, label: &str) -> Self {
        PruneDocument {
            schema_version: crate::SCHEMA_VERSION,
            points: curve
                .points
                .iter()
                .map(|p| (p.neurons_pruned, p.clean_acc, p.attack_acc))
                .collect(),
            config_hash: config_hash.to_string(),
            label: label.to_string(),
        }
    }
}

pub fn write_prune_csv(path: &Path, curve: &PruningCurve) -> Result<(), ReportError> {
    let mut out = String::from("neurons_pruned,clean_acc,attack_acc\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{:.4},{:.4}\n",
            p.neurons_pruned, p.clean_acc, p.attack_acc
        ));
    }
    std::fs::write(path, out).map_err(io_at(path))
}

/// The paper-style three-column table over a set of metric documents.
pub fn format_results_table(docs: &[MetricsDocument]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:<12} {:>8} {:>8} {:>8}\n",
        "label", "dataset", "clean", "attack", "cross"
    ));
    out.push_str(&"-".repeat(64));
    out.push('\n');
    for d in docs {
        out.push_str(&format!(
            "{:<24} {:<12} {:>8.2} {:>8.2} {:>8.2}\n",
            d.label, d.dataset, d.clean_acc, d.attack_acc, d.cross_acc
        ));
    }
    out
}
