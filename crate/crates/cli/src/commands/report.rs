//! report: render stored metrics as the three-column results table.

use std::path::Path;

use super::{CliError, GlobalArgs};
use crate::reports::{format_results_table, read_metrics, MetricsDocument};

pub fn report_cmd(results: &Path, global: &GlobalArgs) -> Result<(), CliError> {
    global.validate()?;
    let mut docs: Vec<MetricsDocument> = Vec::new();
    if results.is_dir() {
        collect_metrics(results, &mut docs)?;
    } else if results.extension().is_some_and(|e| e == "csv") {
        docs.extend(parse_results_csv(results)?);
    } else {
        docs.push(read_metrics(results)?);
    }
    if docs.is_empty() {
        return Err(CliError::Runtime(format!(
            "no metrics found under {}",
            results.display()
        )));
    }
    docs.sort_by_key(|d| d.timestamp);
    print!("{}", format_results_table(&docs));
    Ok(())
}

fn collect_metrics(dir: &Path, out: &mut Vec<MetricsDocument>) -> Result<(), CliError> {
    for entry in std::fs::read_dir(dir).map_err(CliError::from)? {
        let entry = entry.map_err(CliError::from)?;
        let path = entry.path();
        if path.is_dir() {
            collect_metrics(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.json") {
            out.push(read_metrics(&path)?);
        }
    }
    Ok(())
}

fn parse_results_csv(path: &Path) -> Result<Vec<MetricsDocument>, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::from)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(CliError::Runtime(format!(
                "{}:{}: expected 9 columns, found {}",
                path.display(),
                i + 1,
                cols.len()
            )));
        }
        let parse_f = |s: &str| s.parse::<f32>().unwrap_or(f32::NAN);
        out.push(MetricsDocument {
            schema_version: crate::SCHEMA_VERSION,
            timestamp: cols[0].parse().unwrap_or(0),
            label: cols[1].to_string(),
            dataset: cols[2].to_string(),
            target_rule: cols[3].to_string(),
            clean_acc: parse_f(cols[4]),
            attack_acc: parse_f(cols[5]),
            cross_acc: parse_f(cols[6]),
            n_clean: 0,
            n_attack: 0,
            n_cross: 0,
            config_hash: cols[7].to_string(),
            seed: cols[8].parse().unwrap_or(0),
        });
    }
    Ok(out)
}
