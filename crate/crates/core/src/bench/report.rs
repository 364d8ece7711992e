//! Run reports: canonical JSON plus optional CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::config::RunConfig;
use crate::bench::data::TaskFamily;
use crate::error::{Error, Result};
use crate::learner::TaskOutcome;
use crate::theory::AccuracyMatrix;

pub const SCHEMA_VERSION: u32 = 1;

/// Detection quality against known task families. Precision is 1.0 when no
/// pair was labeled similar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SdmQuality {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    /// Absent when the sequence holds no similar pair.
    pub recall: Option<f64>,
}

impl SdmQuality {
    /// Scores `(truth, predicted)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
        for (truth, pred) in pairs {
            match (truth, pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => tn += 1,
            }
        }
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fneg,
            true_negatives: tn,
            precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
            recall: (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64),
        }
    }
}

/// Scores every (prior, task) verdict of a run against the families.
pub fn sdm_quality(tasks: &[TaskOutcome], families: &[TaskFamily]) -> SdmQuality {
    let similar = |a: u32, b: u32| {
        families[a as usize] == TaskFamily::Similar && families[b as usize] == TaskFamily::Similar
    };
    SdmQuality::from_pairs(tasks.iter().flat_map(|t| {
        t.verdict
            .per_prior
            .iter()
            .map(move |p| (similar(p.prior, t.task_id), p.similar))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub schema: u32,
    pub seed: u64,
    pub config: RunConfig,
    /// Lower triangle, `accuracy[t][i]` for `i <= t`.
    pub accuracy: Vec<Vec<f64>>,
    pub acc: f64,
    pub fwt: Option<f64>,
    pub bwt: Option<f64>,
    pub baselines: Option<Vec<f64>>,
    pub families: Option<Vec<TaskFamily>>,
    pub sdm: Option<SdmQuality>,
    pub tasks: Vec<TaskOutcome>,
    pub mask_storage_bytes: usize,
}

impl RunReport {
    pub fn accuracy_matrix(&self) -> Result<AccuracyMatrix> {
        AccuracyMatrix::from_rows(self.accuracy.clone())
    }
}

/// Serializes with keys sorted at every level.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let tree = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&sort_keys(tree))?;
    text.push('\n');
    Ok(text)
}

fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sort_keys(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn acc_matrix_csv(acc: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in acc {
        let cells: Vec<String> = row.iter().map(|&v| num(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Accuracy of task `i` after each later task has been learned.
pub fn trajectory_csv(acc: &[Vec<f64>], i: usize) -> String {
    let mut out = String::from("t,accuracy\n");
    for (t, row) in acc.iter().enumerate().skip(i) {
        let _ = writeln!(out, "{t},{}", num(row[i]));
    }
    out
}

pub fn similarity_csv(tasks: &[TaskOutcome]) -> String {
    let mut out = String::from("t,prior,dis,disPrime,similar\n");
    for t in tasks {
        for p in &t.verdict.per_prior {
            let _ = writeln!(out, "{},{},{},{},{}", t.task_id, p.prior, num(p.dis), num(p.dis_prime), p.similar as u8);
        }
    }
    out
}

pub fn timings_csv(tasks: &[TaskOutcome]) -> String {
    let mut out = String::from("t,seconds,detectSeconds\n");
    for t in tasks {
        let _ = writeln!(out, "{},{},{}", t.task_id, num(t.seconds), num(t.detect_seconds));
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes the canonical JSON and, when `csv_dir` is given, the CSV tables.
/// Wall-clock timings only ever go to `timings.csv`.
pub fn emit_report(report: &RunReport, json_path: &Path, csv_dir: Option<&Path>) -> Result<()> {
    write(json_path, &canonical_json(report)?)?;
    if let Some(dir) = csv_dir {
        fs::create_dir_all(dir)?;
        write(&dir.join("acc_matrix.csv"), &acc_matrix_csv(&report.accuracy))?;
        for i in 0..report.accuracy.len() {
            write(&dir.join(format!("ati_task{i}.csv")), &trajectory_csv(&report.accuracy, i))?;
        }
        write(&dir.join("similarity.csv"), &similarity_csv(&report.tasks))?;
        write(&dir.join("timings.csv"), &timings_csv(&report.tasks))?;
    }
    Ok(())
}
