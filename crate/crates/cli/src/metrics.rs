//! CSV emission for training metrics, evaluation reports, and the ablation
//! table.

use anyhow::Result;
use spm_core::data::CLASS_NAMES;
use spm_core::trainer::{AblationRow, EvalReport, SourceEpoch, StepMetrics};
use std::fmt::Write as _;
use std::path::Path;

pub const STEP_CSV_HEADER: &str =
    "step,epoch,l_ce,l_div,l_ctr,l_total,mean_weight,spm_a,gamma,pl_accuracy,target_accuracy";

pub fn step_metrics_csv(rows: &[StepMetrics]) -> String {
    let mut out = String::from(STEP_CSV_HEADER);
    out.push('\n');
    for m in rows {
        let target = m
            .target_accuracy
            .map(|a| format!("{a:.6}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            m.step,
            m.epoch,
            m.l_ce,
            m.l_div,
            m.l_ctr,
            m.l_total,
            m.mean_weight,
            m.spm_a,
            m.gamma,
            m.pl_accuracy,
            target
        );
    }
    out
}

pub fn source_log_csv(rows: &[SourceEpoch]) -> String {
    let mut out = String::from("epoch,mean_ce,holdout_accuracy\n");
    for r in rows {
        let acc = r.holdout_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:.6},{}", r.epoch, r.mean_ce, acc);
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let seeds = rows.first().map(|r| r.seed_accuracies.len()).unwrap_or(0);
    let mut out = String::from("name,spm,patch_overlap,reweighting,mean_accuracy");
    for s in 0..seeds {
        let _ = write!(out, ",seed_{s}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{:.6}",
            r.name, r.spm_on as u8, r.overlap_on as u8, r.reweight_on as u8, r.mean_accuracy
        );
        for a in &r.seed_accuracies {
            let _ = write!(out, ",{a:.6}");
        }
        out.push('\n');
    }
    out
}

pub fn format_eval(report: &EvalReport) -> String {
    let mut out = String::new();
    for (c, acc) in report.per_class.iter().enumerate() {
        let name = CLASS_NAMES.get(c).copied().unwrap_or("class");
        let _ = writeln!(out, "{name:<10} {:.2}%", acc * 100.0);
    }
    let _ = writeln!(out, "{:<10} {:.2}%", "mean", report.mean * 100.0);
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_csv_has_expected_columns_and_rows() {
        let rows = vec![StepMetrics {
            step: 0,
            epoch: 0,
            l_ce: 1.0,
            l_div: -1.0,
            l_ctr: 0.5,
            l_total: 0.5,
            mean_weight: 1.0,
            spm_a: 8.0,
            gamma: 0.0,
            pl_accuracy: 0.25,
            target_accuracy: None,
        }];
        let csv = step_metrics_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), STEP_CSV_HEADER);
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), 11);
        assert!(row.ends_with(',')); // no eval on this row
    }
}
