//! Sequential task learning over a shared masked network.

mod store;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use store::{load_kb, save_kb, FORMAT_VERSION, MAGIC};

use crate::bench::data::{Split, SplitKind, TaskDataset};
use crate::error::{Error, Result};
use crate::masks::{self, AccumulatedMask, TaskMask};
use crate::nn::{self, Network, NetworkConfig};
use crate::numerics::Matrix;
use crate::rng::{self, stream};
use crate::similarity::{self, BasisSource, PriorBases, RepresentationBasis, SimilarityVerdict};
use crate::theory::AccuracyMatrix;
use crate::transfer::{self, AlignmentRecord, GpmMemory};
use crate::TaskId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub capacity: f64,
    pub delta: f64,
    pub eps_th: f64,
    pub probe_rate: f64,
    pub seed: u64,
    /// Bi-objective loss and one-shot gradient alignment for the new task.
    pub forward_transfer: bool,
    /// Projected updates of similar prior heads.
    pub backward_transfer: bool,
    /// Its `seed` always mirrors the run seed.
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 10,
            lr: 0.001,
            capacity: 0.5,
            delta: 0.80,
            eps_th: 0.99,
            probe_rate: 0.05,
            seed: 0,
            forward_transfer: true,
            backward_transfer: true,
            network: NetworkConfig {
                layer_sizes: vec![64, 100, 100],
                head_size: 10,
                max_tasks: 128,
                seed: 0,
            },
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.network.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.seed != self.seed {
            return Err(Error::InvalidArgument("network seed must equal the run seed".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.capacity > 0.0 && self.capacity <= 1.0) {
            return Err(Error::InvalidArgument(format!("capacity {} outside (0, 1]", self.capacity)));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidArgument(format!("delta {} must be non-negative", self.delta)));
        }
        if !(self.eps_th > 0.0 && self.eps_th <= 1.0) {
            return Err(Error::InvalidArgument(format!("energy threshold {} outside (0, 1]", self.eps_th)));
        }
        if !(self.probe_rate > 0.0 && self.probe_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!("probe rate {} outside (0, 1]", self.probe_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_id: TaskId,
    /// Final mask `m*_t`.
    pub mask: TaskMask,
    /// Untrained-twin basis, stored at detection time.
    pub basis_original: RepresentationBasis,
    /// Trained basis through `m*_t`, stored after training.
    pub basis_continual: RepresentationBasis,
    pub memory: GpmMemory,
    pub verdict: SimilarityVerdict,
    pub alignment: Option<AlignmentRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub config: TrainConfig,
    pub net: Network,
    pub accum: AccumulatedMask,
    pub tasks: Vec<TaskRecord>,
}

impl KnowledgeBase {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = nn::init_network(&config.network);
        let accum = AccumulatedMask::empty(&net.layer_shapes());
        Ok(Self {
            config,
            net,
            accum,
            tasks: Vec::new(),
        })
    }

    /// The never-trained twin used for reference bases.
    pub fn original_model(&self) -> Network {
        nn::init_network(&self.config.network)
    }

    pub fn next_task(&self) -> TaskId {
        self.tasks.len() as TaskId
    }

    pub fn record(&self, task: TaskId) -> Result<&TaskRecord> {
        self.tasks.get(task as usize).ok_or(Error::UnknownTask(task))
    }

    pub fn memories(&self) -> Vec<GpmMemory> {
        self.tasks.iter().map(|r| r.memory.clone()).collect()
    }

    /// True when the accumulated mask equals the OR of the stored task masks.
    pub fn accum_consistent(&self) -> bool {
        let mut expect = AccumulatedMask::empty(&self.net.layer_shapes());
        for r in &self.tasks {
            match masks::accumulate(&expect, &r.mask) {
                Ok(a) => expect = a,
                Err(_) => return false,
            }
        }
        expect == self.accum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskOutcome {
    pub task_id: TaskId,
    pub verdict: SimilarityVerdict,
    pub reuse_fraction: f64,
    pub alignment: Option<AlignmentRecord>,
    pub bkt_steps: usize,
    pub max_projection_residual: f64,
    pub final_loss: f64,
    /// Wall-clock time for the whole task; not part of canonical reports.
    #[serde(skip)]
    pub seconds: f64,
    /// The part of `seconds` spent on similarity detection.
    #[serde(skip)]
    pub detect_seconds: f64,
}

fn probe(kb: &KnowledgeBase, dataset: &TaskDataset) -> Result<Split> {
    let mut r = rng::rng(kb.config.seed, stream::PROBE, dataset.task_id as u64);
    similarity::sample_probe(&dataset.train, kb.config.probe_rate, &mut r)
}

fn original_mask(kb: &KnowledgeBase, original: &Network) -> Result<TaskMask> {
    masks::select_mask(&original.scores, kb.config.capacity, 0)
}

/// Basis of the untrained twin's representation of `inputs`.
pub fn original_basis(kb: &KnowledgeBase, task: TaskId, inputs: &Matrix) -> Result<RepresentationBasis> {
    let original = kb.original_model();
    let mask = original_mask(kb, &original)?;
    let rep = nn::represent(&original, &mask.layers, None, inputs)?;
    similarity::compute_basis(&rep, kb.config.eps_th, task, BasisSource::Original)
}

/// Basis of the current network's representation of `inputs` through the
/// top-c mask of its present scores, before any task-specific bias exists.
pub fn continual_basis(kb: &KnowledgeBase, task: TaskId, inputs: &Matrix) -> Result<RepresentationBasis> {
    let mask = masks::select_mask(&kb.net.scores, kb.config.capacity, task)?;
    let rep = nn::represent(&kb.net, &mask.layers, None, inputs)?;
    similarity::compute_basis(&rep, kb.config.eps_th, task, BasisSource::Continual)
}

/// Similarity verdict for a new task's probe against every stored prior.
pub fn detect(kb: &KnowledgeBase, new_task: TaskId, probe_inputs: &Matrix, new_original: &RepresentationBasis) -> Result<SimilarityVerdict> {
    if kb.tasks.is_empty() {
        return Ok(SimilarityVerdict::empty(new_task));
    }
    let new_continual = continual_basis(kb, new_task, probe_inputs)?;
    let priors: Vec<PriorBases<'_>> = kb
        .tasks
        .iter()
        .map(|r| PriorBases {
            original: &r.basis_original,
            continual: &r.basis_continual,
        })
        .collect();
    let distances = similarity::normalized_distances(new_task, new_original, &new_continual, &priors)?;
    similarity::sdm_classify(&distances, kb.config.delta)
}

/// Learns one task. The dataset's task id must be the next free id.
pub fn learn_task(kb: &mut KnowledgeBase, dataset: &TaskDataset) -> Result<TaskOutcome> {
    let start = Instant::now();
    let t = kb.next_task();
    if dataset.task_id != t {
        return Err(Error::InvalidArgument(format!("expected task {t}, got dataset for task {}", dataset.task_id)));
    }
    dataset.validate()?;
    let cfg = kb.config.clone();
    if dataset.input_dim != cfg.network.input_size() {
        return Err(Error::shape("dataset input width", cfg.network.input_size(), dataset.input_dim));
    }
    if dataset.num_classes > cfg.network.head_size {
        return Err(Error::shape("dataset classes", cfg.network.head_size, dataset.num_classes));
    }

    let probe = probe(kb, dataset)?;
    let basis_original = original_basis(kb, t, &probe.inputs)?;
    let verdict = detect(kb, t, &probe.inputs, &basis_original)?;
    let detect_seconds = start.elapsed().as_secs_f64();
    let sim_set = verdict.sim_set.clone();
    let transfer_on = !sim_set.is_empty();
    let use_lsim = transfer_on && cfg.forward_transfer;
    let use_bkt = transfer_on && cfg.backward_transfer;
    let memories = kb.memories();

    kb.net.add_head()?;
    let train = &dataset.train;

    let mut alignment = None;
    if use_lsim {
        if let Some(donor) = verdict.most_similar {
            // biases start from the donor's so its frozen features arrive intact
            let donor_bias = kb.net.head(donor)?.hidden_bias.clone();
            kb.net.head_mut(t)?.hidden_bias = donor_bias;
            let mut record = AlignmentRecord::new(t, donor);
            let sim_heads: Vec<Matrix> = sim_set.iter().map(|&j| Ok(kb.net.head(j)?.weight.clone())).collect::<Result<_>>()?;
            let sim_refs: Vec<&Matrix> = sim_heads.iter().collect();
            let mask = masks::select_mask(&kb.net.scores, cfg.capacity, t)?;
            let head = kb.net.head(t)?.clone();
            let own = transfer::bi_objective_grad(&kb.net, &mask.layers, &head, t, &train.inputs, &train.labels, &sim_refs)?;
            let donor_mask = &kb.record(donor)?.mask.layers;
            let via_donor = transfer::bi_objective_grad(&kb.net, donor_mask, &head, t, &train.inputs, &train.labels, &sim_refs)?;
            let aligned = transfer::align_initial_gradients(&mut record, &own.grads.d_scores, &via_donor.grads.d_scores)?;
            nn::update_scores_with(&mut kb.net, &aligned, cfg.lr)?;
            alignment = Some(record);
        }
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = rng::rng(cfg.seed, stream::SHUFFLE, t as u64);
    let mut bkt_steps = 0;
    let mut max_residual = 0.0_f64;
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.inputs.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mask = masks::select_mask(&kb.net.scores, cfg.capacity, t)?;
            let head = kb.net.head(t)?;
            let sim_heads: Vec<&Matrix> = if use_lsim || use_bkt {
                sim_set.iter().map(|&j| Ok(&kb.net.head(j)?.weight)).collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let (loss, grads, d_sim) = if use_lsim {
                let bi = transfer::bi_objective_grad(&kb.net, &mask.layers, head, t, &x, &y, &sim_heads)?;
                (bi.loss, bi.grads, bi.d_sim_heads)
            } else {
                let trace = nn::forward_with_head(&kb.net, &mask.layers, head, t, &x)?;
                let (ce, d_logits) = nn::cross_entropy(&trace.logits, &y)?;
                let grads = nn::backward_from_logits(&kb.net, head, &trace, &d_logits)?;
                let d_sim = if use_bkt {
                    transfer::cosine_term(&head.weight, &sim_heads)?.2
                } else {
                    Vec::new()
                };
                (ce, grads, d_sim)
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss of task {t}")));
            }
            nn::update_weights_masked(&mut kb.net, &grads, &kb.accum, cfg.lr)?;
            nn::update_scores(&mut kb.net, &grads, cfg.lr)?;
            nn::update_task_params(kb.net.head_mut(t)?, &grads, cfg.lr)?;
            if use_bkt {
                let audit = transfer::backward_transfer_step(&mut kb.net, t, &sim_set, &memories, &d_sim, cfg.lr)?;
                max_residual = max_residual.max(audit.max_residual());
                bkt_steps += 1;
            }
            epoch_loss += loss;
            batches += 1;
        }
        final_loss = epoch_loss / batches as f64;
    }

    let mask = masks::select_mask(&kb.net.scores, cfg.capacity, t)?;
    let reuse_fraction = masks::reuse_fraction(&mask, &kb.accum)?;
    kb.accum = masks::accumulate(&kb.accum, &mask)?;
    let hidden_bias = kb.net.head(t)?.hidden_bias.clone();
    let rep_probe = nn::represent(&kb.net, &mask.layers, Some(&hidden_bias), &probe.inputs)?;
    let basis_continual = similarity::compute_basis(&rep_probe, cfg.eps_th, t, BasisSource::Continual)?;
    let rep_train = nn::represent(&kb.net, &mask.layers, Some(&hidden_bias), &train.inputs)?;
    let memory = transfer::build_gpm_memory_from(&rep_train, t, cfg.eps_th)?;
    kb.tasks.push(TaskRecord {
        task_id: t,
        mask,
        basis_original,
        basis_continual,
        memory,
        verdict: verdict.clone(),
        alignment,
    });
    Ok(TaskOutcome {
        task_id: t,
        verdict,
        reuse_fraction,
        alignment,
        bkt_steps,
        max_projection_residual: max_residual,
        final_loss,
        seconds: start.elapsed().as_secs_f64(),
        detect_seconds,
    })
}

/// Logits of a learned task through its stored mask, biases, and head.
pub fn task_logits(kb: &KnowledgeBase, task: TaskId, inputs: &Matrix) -> Result<Matrix> {
    let record = kb.record(task)?;
    Ok(nn::forward_layers(&kb.net, &record.mask.layers, task, inputs)?.logits)
}

pub fn accuracy_on(kb: &KnowledgeBase, task: TaskId, split: &Split) -> Result<f64> {
    let logits = task_logits(kb, task, &split.inputs)?;
    let pred = nn::argmax_rows(&logits);
    let correct = pred.iter().zip(&split.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / split.len() as f64)
}

pub fn evaluate(kb: &KnowledgeBase, task: TaskId, dataset: &TaskDataset, split: SplitKind) -> Result<f64> {
    if dataset.task_id != task {
        return Err(Error::InvalidArgument(format!("dataset is for task {}, not {task}", dataset.task_id)));
    }
    accuracy_on(kb, task, dataset.split(split))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub accuracy: AccuracyMatrix,
    pub tasks: Vec<TaskOutcome>,
}

/// Learns every dataset in order and fills the test-accuracy matrix.
pub fn run_sequence(datasets: &[TaskDataset], cfg: &TrainConfig) -> Result<(KnowledgeBase, SequenceOutcome)> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("a sequence needs at least one task".into()));
    }
    let mut kb = KnowledgeBase::new(cfg.clone())?;
    let mut accuracy = AccuracyMatrix::new();
    let mut tasks = Vec::with_capacity(datasets.len());
    for (t, ds) in datasets.iter().enumerate() {
        tasks.push(learn_task(&mut kb, ds)?);
        let row = datasets[..=t]
            .iter()
            .map(|d| evaluate(&kb, d.task_id, d, SplitKind::Test))
            .collect::<Result<Vec<_>>>()?;
        accuracy.push_row(row)?;
    }
    Ok((kb, SequenceOutcome { accuracy, tasks }))
}

/// Test accuracy of an independent single-task model with a task-derived seed.
pub fn one_baseline(dataset: &TaskDataset, cfg: &TrainConfig) -> Result<f64> {
    let seed = rng::derive_seed(cfg.seed, stream::BASELINE, dataset.task_id as u64);
    one_baseline_with_seed(dataset, cfg, seed)
}

/// ONE baselines for every dataset, trained concurrently. Results are in input order.
pub fn one_baselines(datasets: &[TaskDataset], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(datasets.len().max(1));
    let mut out: Vec<Option<Result<f64>>> = (0..datasets.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, slots) in out.chunks_mut(datasets.len().div_ceil(workers).max(1)).enumerate() {
            let start = w * datasets.len().div_ceil(workers).max(1);
            scope.spawn(move || {
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(one_baseline(&datasets[start + k], cfg));
                }
            });
        }
    });
    out.into_iter().map(|r| r.expect("every slot is filled")).collect()
}

pub fn one_baseline_with_seed(dataset: &TaskDataset, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let mut solo = dataset.clone();
    solo.task_id = 0;
    let mut kb = KnowledgeBase::new(cfg.clone().with_seed(seed))?;
    learn_task(&mut kb, &solo)?;
    evaluate(&kb, 0, &solo, SplitKind::Test)
}
