//! Run configuration: one JSON document with network, train and sequence sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::data::{self, ClusterShape, MixedSpec, SplitSizes, TaskDataset, TaskFamily, MIN_SEPARATION};
use crate::bench::idx::{self, IdxData};
use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::nn::NetworkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct RunConfig {
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
    pub sequence: SequenceSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct NetworkSection {
    pub layers: Vec<usize>,
    pub head_size: usize,
    #[serde(default = "default_max_tasks")]
    pub max_tasks: usize,
}

fn default_max_tasks() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub c: f64,
    pub delta: f64,
    pub eps_th: f64,
    pub probe_rate: f64,
    pub seed: u64,
    pub forward_transfer: bool,
    pub backward_transfer: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch: t.batch_size,
            lr: t.lr,
            c: t.capacity,
            delta: t.delta,
            eps_th: t.eps_th,
            probe_rate: t.probe_rate,
            seed: t.seed,
            forward_transfer: t.forward_transfer,
            backward_transfer: t.backward_transfer,
        }
    }
}

fn default_dim() -> usize {
    64
}
fn default_classes() -> usize {
    10
}
fn default_train() -> usize {
    SplitSizes::default().train
}
fn default_val() -> usize {
    SplitSizes::default().val
}
fn default_test() -> usize {
    SplitSizes::default().test
}
fn default_separation() -> f64 {
    MIN_SEPARATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", rename_all_fields = "camelCase", deny_unknown_fields)]
pub enum SequenceSpec {
    Dissimilar {
        tasks: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_train")]
        train: usize,
        #[serde(default = "default_val")]
        val: usize,
        #[serde(default = "default_test")]
        test: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        /// Defaults to the training seed.
        #[serde(default)]
        data_seed: Option<u64>,
    },
    Similar {
        tasks: usize,
        noise_scale: f64,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_train")]
        train: usize,
        #[serde(default = "default_val")]
        val: usize,
        #[serde(default = "default_test")]
        test: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        data_seed: Option<u64>,
    },
    Mixed {
        similar: usize,
        dissimilar: usize,
        noise_scale: f64,
        #[serde(default)]
        interleave_seed: Option<u64>,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_train")]
        train: usize,
        #[serde(default = "default_val")]
        val: usize,
        #[serde(default = "default_test")]
        test: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        data_seed: Option<u64>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        tasks: usize,
        #[serde(default = "default_train")]
        train: usize,
        #[serde(default = "default_val")]
        val: usize,
        #[serde(default = "default_test")]
        test: usize,
        #[serde(default)]
        data_seed: Option<u64>,
    },
}

/// Datasets of a sequence plus the family of each task when known.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub tasks: Vec<TaskDataset>,
    pub families: Option<Vec<TaskFamily>>,
}

impl SequenceSpec {
    pub fn task_count(&self) -> usize {
        match self {
            SequenceSpec::Dissimilar { tasks, .. } | SequenceSpec::Similar { tasks, .. } | SequenceSpec::Idx { tasks, .. } => *tasks,
            SequenceSpec::Mixed { similar, dissimilar, .. } => similar + dissimilar,
        }
    }

    pub fn build(&self, run_seed: u64) -> Result<Sequence> {
        match self.clone() {
            SequenceSpec::Dissimilar {
                tasks,
                dim,
                classes,
                train,
                val,
                test,
                separation,
                data_seed,
            } => Ok(Sequence {
                tasks: data::gen_dissimilar_with(
                    tasks,
                    dim,
                    classes,
                    SplitSizes { train, val, test },
                    ClusterShape { separation },
                    data_seed.unwrap_or(run_seed),
                )?,
                families: None,
            }),
            SequenceSpec::Similar {
                tasks,
                noise_scale,
                dim,
                classes,
                train,
                val,
                test,
                separation,
                data_seed,
            } => Ok(Sequence {
                tasks: data::gen_similar_with(
                    tasks,
                    dim,
                    classes,
                    SplitSizes { train, val, test },
                    noise_scale,
                    ClusterShape { separation },
                    data_seed.unwrap_or(run_seed),
                )?,
                families: None,
            }),
            SequenceSpec::Mixed {
                similar,
                dissimilar,
                noise_scale,
                interleave_seed,
                dim,
                classes,
                train,
                val,
                test,
                separation,
                data_seed,
            } => {
                let seed = data_seed.unwrap_or(run_seed);
                let mixed = data::gen_mixed(&MixedSpec {
                    n_similar: similar,
                    n_dissimilar: dissimilar,
                    interleave_seed: interleave_seed.unwrap_or(seed),
                    dim,
                    classes,
                    sizes: SplitSizes { train, val, test },
                    noise_scale,
                    shape: ClusterShape { separation },
                    seed,
                })?;
                Ok(Sequence {
                    tasks: mixed.tasks,
                    families: Some(mixed.families),
                })
            }
            SequenceSpec::Idx {
                images,
                labels,
                tasks,
                train,
                val,
                test,
                data_seed,
            } => {
                let data = IdxData::read(&images, &labels)?;
                Ok(Sequence {
                    tasks: idx::permuted_sequence(&data, tasks, SplitSizes { train, val, test }, data_seed.unwrap_or(run_seed))?,
                    families: None,
                })
            }
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch,
            lr: t.lr,
            capacity: t.c,
            delta: t.delta,
            eps_th: t.eps_th,
            probe_rate: t.probe_rate,
            seed: t.seed,
            forward_transfer: t.forward_transfer,
            backward_transfer: t.backward_transfer,
            network: NetworkConfig {
                layer_sizes: self.network.layers.clone(),
                head_size: self.network.head_size,
                max_tasks: self.network.max_tasks,
                seed: t.seed,
            },
        }
    }

    /// Semantic checks that serde cannot express, reported with a field path.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |path: &str, message: String| Error::Config {
            path: path.into(),
            message,
        };
        self.train_config().validate().map_err(|e| cfg_err("train", e.to_string()))?;
        let n = self.sequence.task_count();
        if n == 0 {
            return Err(cfg_err("sequence", "a sequence needs at least one task".into()));
        }
        if n > self.network.max_tasks {
            return Err(cfg_err(
                "network.maxTasks",
                format!("{} tasks exceed the head budget of {}", n, self.network.max_tasks),
            ));
        }
        let synthetic = match &self.sequence {
            SequenceSpec::Dissimilar { dim, classes, separation, .. }
            | SequenceSpec::Similar { dim, classes, separation, .. }
            | SequenceSpec::Mixed { dim, classes, separation, .. } => Some((*dim, *classes, *separation)),
            SequenceSpec::Idx { .. } => None,
        };
        if let Some((dim, classes, separation)) = synthetic {
            if dim != self.network.layers[0] {
                return Err(cfg_err(
                    "sequence.dim",
                    format!("input width {dim} differs from network.layers[0] = {}", self.network.layers[0]),
                ));
            }
            if classes < 2 {
                return Err(cfg_err("sequence.classes", format!("{classes} classes, need at least two")));
            }
            if classes > self.network.head_size {
                return Err(cfg_err(
                    "sequence.classes",
                    format!("{classes} classes exceed network.headSize = {}", self.network.head_size),
                ));
            }
            ClusterShape { separation }
                .validate()
                .map_err(|e| cfg_err("sequence.separation", e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                path: if path == "." { origin.to_string() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}
