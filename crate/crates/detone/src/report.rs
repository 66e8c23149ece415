//! Report rendering: evaluation and ablation tables as CSV and as
//! aligned-column text.

use std::fs;
use std::path::Path;

use crate::trainer::{AblationReport, EvalReport, TrainError};

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.3}")
    }
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("image,psnr_db,ssim\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{:.4}\n",
            row.name,
            fmt_db(row.score.psnr_db),
            row.score.ssim
        ));
    }
    out.push_str(&format!(
        "AVG,{},{:.4}\n",
        fmt_db(report.avg.psnr_db),
        report.avg.ssim
    ));
    out
}

pub fn eval_text(report: &EvalReport) -> String {
    let name_width = report
        .rows
        .iter()
        .map(|r| r.name.len())
        .chain(["image".len(), 3])
        .max()
        .unwrap_or(8);
    let mut out = format!("{:<name_width$}  {:>9}  {:>7}\n", "image", "PSNR(dB)", "SSIM");
    for row in &report.rows {
        out.push_str(&format!(
            "{:<name_width$}  {:>9}  {:>7.4}\n",
            row.name,
            fmt_db(row.score.psnr_db),
            row.score.ssim
        ));
    }
    out.push_str(&format!(
        "{:<name_width$}  {:>9}  {:>7.4}\n",
        "AVG",
        fmt_db(report.avg.psnr_db),
        report.avg.ssim
    ));
    out
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out =
        String::from("image,proposed_psnr_db,proposed_ssim,baseline_psnr_db,baseline_ssim\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{:.4},{},{:.4}\n",
            row.name,
            fmt_db(row.proposed.psnr_db),
            row.proposed.ssim,
            fmt_db(row.baseline.psnr_db),
            row.baseline.ssim
        ));
    }
    out.push_str(&format!(
        "AVG,{},{:.4},{},{:.4}\n",
        fmt_db(report.avg_proposed.psnr_db),
        report.avg_proposed.ssim,
        fmt_db(report.avg_baseline.psnr_db),
        report.avg_baseline.ssim
    ));
    out
}

pub fn ablation_text(report: &AblationReport) -> String {
    let name_width = report
        .rows
        .iter()
        .map(|r| r.name.len())
        .chain(["image".len(), 3])
        .max()
        .unwrap_or(8);
    let mut out = format!(
        "{:<name_width$}  {:>14}  {:>9}  {:>14}  {:>9}\n",
        "image", "proposed(dB)", "SSIM", "baseline(dB)", "SSIM"
    );
    for row in &report.rows {
        out.push_str(&format!(
            "{:<name_width$}  {:>14}  {:>9.4}  {:>14}  {:>9.4}\n",
            row.name,
            fmt_db(row.proposed.psnr_db),
            row.proposed.ssim,
            fmt_db(row.baseline.psnr_db),
            row.baseline.ssim
        ));
    }
    out.push_str(&format!(
        "{:<name_width$}  {:>14}  {:>9.4}  {:>14}  {:>9.4}\n",
        "AVG",
        fmt_db(report.avg_proposed.psnr_db),
        report.avg_proposed.ssim,
        fmt_db(report.avg_baseline.psnr_db),
        report.avg_baseline.ssim
    ));
    out
}

pub fn write_report(path: &Path, contents: &str) -> Result<(), TrainError> {
    fs::write(path, contents).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}
