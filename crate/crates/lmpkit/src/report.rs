//! CSV and JSON report writers. All formats are schema-stable and byte
//! deterministic so reruns of the same config diff clean.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use lmpkit_core::metrics::{EntropyRow, PckReport};
use lmpkit_core::trainer::EpochStats;

use crate::error::CliError;

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::io(&parent.display().to_string(), e))?;
    }
    std::fs::write(path, content).map_err(|e| CliError::io(&path.display().to_string(), e))
}

/// `epoch, split, loss, acc, net` rows, one per trained network per epoch.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<(), CliError> {
    let mut out = String::from("epoch,split,loss,acc,net\n");
    for row in history {
        let _ = writeln!(
            out,
            "{},train,{:.6},{:.6},{}",
            row.epoch,
            row.loss,
            row.accuracy,
            row.net.as_str()
        );
    }
    write_file(path, &out)
}

/// `kind_or_thr, kp1..kpK, avg` rows mirroring the per-keypoint table
/// layout. K is the widest report in the batch.
pub fn write_pck_csv(path: &Path, rows: &[(String, PckReport)]) -> Result<(), CliError> {
    let k = rows
        .iter()
        .map(|(_, r)| r.per_keypoint_acc.len())
        .max()
        .unwrap_or(0);
    let mut out = String::from("kind_or_thr");
    for i in 1..=k {
        let _ = write!(out, ",kp{i}");
    }
    out.push_str(",avg\n");
    for (label, report) in rows {
        let _ = write!(out, "{label}");
        for i in 0..k {
            match report.per_keypoint_acc.get(i) {
                Some(acc) => {
                    let _ = write!(out, ",{acc:.4}");
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{:.4}", report.average);
    }
    write_file(path, &out)
}

/// `pooling, mean_entropy, std_entropy, n_images` rows.
pub fn write_entropy_csv(path: &Path, rows: &[EntropyRow]) -> Result<(), CliError> {
    let mut out = String::from("pooling,mean_entropy,std_entropy,n_images\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{}",
            row.label, row.mean_entropy, row.std_entropy, row.n_images
        );
    }
    write_file(path, &out)
}

/// Per-image predictions next to the ground truth, (row, col) coordinates.
#[derive(Debug, Serialize)]
pub struct ImageKeypoints {
    pub index: usize,
    pub label: usize,
    pub predictions: Vec<[f64; 2]>,
    pub ground_truth: Vec<[usize; 2]>,
}

pub fn write_keypoints_json(path: &Path, entries: &[ImageKeypoints]) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(entries).expect("keypoints serialize");
    write_file(path, &(text + "\n"))
}

/// Top-level evaluation summary; `warning` flags degenerate runs such as an
/// empty test split.
#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub n_images: usize,
    pub k: usize,
    pub warning: Option<String>,
}

pub fn write_eval_summary(path: &Path, summary: &EvalSummary) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_file(path, &(text + "\n"))
}
