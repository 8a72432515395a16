//! The nine-variant ablation table.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::EvalReport;
use super::train::{train, RunPaths};
use crate::corridor::CorridorConfig;
use crate::error::{Error, Result};
use crate::geometry::AnchorMethod;
use crate::synthdata::{Record, TargetMode};

pub const CSV_HEADER: &str = "variant,endpoint_error,violation_rate,anchor_mae,fm_val_loss";

/// Variant names in table order with their corridor settings. Loss weights
/// and widths come from `base`; each variant only switches terms on or off.
pub fn ablation_variants(base: &CorridorConfig) -> Vec<(&'static str, CorridorConfig)> {
    let off = CorridorConfig {
        lambda_dp: 0.0,
        lambda_corr: 0.0,
        enable_buf: false,
        enable_cons: false,
        enable_extra_a: false,
        target_mode: TargetMode::Delta,
        anchor_method: AnchorMethod::RdpDp,
        ..base.clone()
    };
    let head = |mode| CorridorConfig {
        lambda_dp: base.lambda_dp,
        target_mode: mode,
        ..off.clone()
    };
    let extra = CorridorConfig {
        enable_extra_a: true,
        ..off.clone()
    };
    let merge = CorridorConfig {
        enable_extra_a: true,
        ..head(TargetMode::Delta)
    };
    let with = |buf, cons| CorridorConfig {
        lambda_corr: base.lambda_corr,
        enable_buf: buf,
        enable_cons: cons,
        ..merge.clone()
    };
    let full = with(true, true);
    vec![
        ("baseline-FM", off.clone()),
        ("pos", head(TargetMode::Pos)),
        ("delta-pos", head(TargetMode::Delta)),
        ("extra-A", extra),
        ("merge", merge.clone()),
        ("merge+buf", with(true, false)),
        ("merge+cons", with(false, true)),
        ("full", full.clone()),
        (
            "full-RDP",
            CorridorConfig {
                anchor_method: AnchorMethod::Uniform,
                ..full
            },
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub corridor: CorridorConfig,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Trains every variant on the same records and seeds, one after another.
/// A failing variant is recorded and the suite moves on.
pub fn run_ablation_suite(base: &RunConfig, records: &[Record], out_dir: Option<&Path>) -> Result<Vec<AblationRow>> {
    base.validate()?;
    base.train_seed()?;
    let mut rows = Vec::new();
    for (name, corridor) in ablation_variants(&base.corridor) {
        let cfg = RunConfig {
            corridor: corridor.clone(),
            ..base.clone()
        };
        let paths = match out_dir {
            Some(d) => {
                let dir = d.join(name);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let mut run_cfg = cfg.clone();
                run_cfg.train.checkpoint = None;
                std::fs::write(dir.join("config.json"), run_cfg.resolved_json()).map_err(|e| Error::io(&dir, e))?;
                Some(RunPaths::in_dir(&dir, &run_cfg))
            }
            None => None,
        };
        let mut cfg = cfg;
        cfg.train.checkpoint = None;
        let row = match train(&cfg, records, paths.as_ref()) {
            Ok(run) => AblationRow {
                variant: name.to_string(),
                corridor,
                report: Some(run.final_report().clone()),
                error: None,
            },
            Err(e) => AblationRow {
                variant: name.to_string(),
                corridor,
                report: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    if let Some(d) = out_dir {
        write_ablation(&rows, d)?;
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        match &r.report {
            Some(rep) => s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant, rep.endpoint_error, rep.corridor_violation_rate, rep.anchor_mae, rep.fm_val_loss
            )),
            None => s.push_str(&format!("{},failed,failed,failed,failed\n", r.variant)),
        }
    }
    s
}

/// `ablation.json` and `ablation.csv` in `dir`.
pub fn write_ablation(rows: &[AblationRow], dir: &Path) -> Result<()> {
    let json = dir.join("ablation.json");
    let text = serde_json::to_string_pretty(rows).expect("rows serialize");
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    let csv = dir.join("ablation.csv");
    let mut f = std::fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
    f.write_all(ablation_csv(rows).as_bytes()).map_err(|e| Error::io(&csv, e))
}
