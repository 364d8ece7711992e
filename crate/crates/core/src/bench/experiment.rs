//! Whole-run drivers behind the CLI.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bench::config::{RunConfig, Sequence};
use crate::bench::data::{self, SplitKind, SplitSizes};
use crate::bench::report::{sdm_quality, RunReport, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::learner::{self, KnowledgeBase, TrainConfig};

/// Knowledge-base mask bytes: one bit per weight per task plus word padding.
pub fn mask_storage_bytes(kb: &KnowledgeBase) -> usize {
    kb.tasks.iter().map(|r| r.mask.storage_bytes()).sum()
}

pub fn run_experiment(cfg: &RunConfig, with_baselines: bool) -> Result<RunReport> {
    let train = cfg.train_config();
    let Sequence { tasks, families } = cfg.sequence.build(train.seed)?;
    let (kb, outcome) = learner::run_sequence(&tasks, &train)?;
    let baselines = if with_baselines {
        Some(learner::one_baselines(&tasks, &train)?)
    } else {
        None
    };
    let metrics = crate::theory::compute_metrics(&outcome.accuracy, baselines.as_deref())?;
    let sdm = families.as_ref().map(|f| sdm_quality(&outcome.tasks, f));
    Ok(RunReport {
        schema: SCHEMA_VERSION,
        seed: train.seed,
        config: cfg.clone(),
        accuracy: outcome.accuracy.rows().to_vec(),
        acc: metrics.acc,
        fwt: metrics.fwt,
        bwt: metrics.bwt,
        baselines,
        families,
        sdm,
        tasks: outcome.tasks,
        mask_storage_bytes: mask_storage_bytes(&kb),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BaselineReport {
    pub schema: u32,
    pub seed: u64,
    pub config: RunConfig,
    pub baselines: Vec<f64>,
}

pub fn run_baselines(cfg: &RunConfig) -> Result<BaselineReport> {
    let train = cfg.train_config();
    let seq = cfg.sequence.build(train.seed)?;
    Ok(BaselineReport {
        schema: SCHEMA_VERSION,
        seed: train.seed,
        config: cfg.clone(),
        baselines: learner::one_baselines(&seq.tasks, &train)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StressTask {
    pub task_id: u32,
    pub seconds: f64,
    pub detect_seconds: f64,
    /// Test accuracy right after learning.
    pub accuracy: f64,
    /// Test accuracy once every task is learned.
    pub final_accuracy: f64,
    pub mask_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StressReport {
    pub schema: u32,
    pub tasks: usize,
    pub weights: usize,
    pub acc: f64,
    pub bwt: f64,
    pub mask_storage_bytes: usize,
    /// One bit per weight per task, rounded up per stored mask matrix.
    pub mask_bound_bytes: usize,
    pub per_task: Vec<StressTask>,
}

/// Small-budget defaults for task-count scaling runs.
pub fn stress_config(tasks: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 1,
        lr: 0.05,
        backward_transfer: false,
        ..TrainConfig::default()
    }
    .with_seed(seed);
    cfg.network.max_tasks = tasks.max(1);
    cfg
}

pub const STRESS_SIZES: SplitSizes = SplitSizes {
    train: 200,
    val: 20,
    test: 100,
};

/// Learns `n_tasks` permuted tasks, timing each one.
pub fn run_stress(cfg: &TrainConfig, n_tasks: usize, sizes: SplitSizes) -> Result<StressReport> {
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("stress needs at least one task".into()));
    }
    let dim = cfg.network.input_size();
    let classes = cfg.network.head_size;
    let tasks = data::gen_dissimilar(n_tasks, dim, classes, sizes, cfg.seed)?;
    let mut kb = KnowledgeBase::new(cfg.clone())?;
    let mut per_task = Vec::with_capacity(n_tasks);
    for ds in &tasks {
        let start = Instant::now();
        let out = learner::learn_task(&mut kb, ds)?;
        let seconds = start.elapsed().as_secs_f64();
        let accuracy = learner::evaluate(&kb, ds.task_id, ds, SplitKind::Test)?;
        per_task.push(StressTask {
            task_id: ds.task_id,
            seconds,
            detect_seconds: out.detect_seconds,
            accuracy,
            final_accuracy: f64::NAN,
            mask_bytes: kb.record(ds.task_id)?.mask.storage_bytes(),
        });
    }
    for (p, ds) in per_task.iter_mut().zip(&tasks) {
        p.final_accuracy = learner::evaluate(&kb, ds.task_id, ds, SplitKind::Test)?;
    }
    let n = n_tasks as f64;
    let acc = per_task.iter().map(|p| p.final_accuracy).sum::<f64>() / n;
    let bwt = if n_tasks > 1 {
        per_task[..n_tasks - 1].iter().map(|p| p.final_accuracy - p.accuracy).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let shapes = cfg.network.layer_shapes();
    let weights: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let per_mask: usize = shapes.iter().map(|(r, c)| (r * c).div_ceil(64) * 8).sum();
    Ok(StressReport {
        schema: SCHEMA_VERSION,
        tasks: n_tasks,
        weights,
        acc,
        bwt,
        mask_storage_bytes: mask_storage_bytes(&kb),
        mask_bound_bytes: per_mask * n_tasks,
        per_task,
    })
}
