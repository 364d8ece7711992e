//! Multi-head fully connected ReLU network with manual backprop.
//!
//! Hidden layer `l` computes `relu((W_l ⊙ m_l) · x + b_l^t)` where the mask
//! `m_l` and the bias `b_l^t` both belong to the task being run. Each task
//! owns a linear head on top of the last hidden layer. Scores `S_l` share the
//! shape of `W_l` and receive the straight-through gradient `∂L/∂ŵ_l ⊙ W_l`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::{AccumulatedMask, BitMatrix, TaskMask};
use crate::numerics::Matrix;
use crate::rng::{self, stream};
use crate::TaskId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct NetworkConfig {
    /// Input width followed by every hidden width; the last entry is the
    /// representation width seen by the heads.
    pub layer_sizes: Vec<usize>,
    pub head_size: usize,
    pub max_tasks: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(layer_sizes: Vec<usize>, head_size: usize, max_tasks: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            layer_sizes,
            head_size,
            max_tasks,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument("network needs at least two layer sizes".into()));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) || self.head_size == 0 || self.max_tasks == 0 {
            return Err(Error::InvalidArgument("network sizes must all be positive".into()));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn representation_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_sizes.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// Per-task parameters: classification head plus the task's hidden biases.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub hidden_bias: Vec<Vec<f64>>,
}

impl TaskHead {
    pub fn zero_biases(cfg: &NetworkConfig) -> Vec<Vec<f64>> {
        cfg.layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub weights: Vec<Matrix>,
    pub scores: Vec<Matrix>,
    /// Indexed by task id.
    pub heads: Vec<TaskHead>,
}

fn glorot(rows: usize, cols: usize, rng: &mut rng::Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::new(rows, cols, values).expect("uniform samples are finite")
}

pub fn init_network(cfg: &NetworkConfig) -> Network {
    let shapes = cfg.layer_shapes();
    let mut wrng = rng::rng(cfg.seed, stream::WEIGHTS, 0);
    let mut srng = rng::rng(cfg.seed, stream::SCORES, 0);
    let weights = shapes.iter().map(|&(r, c)| glorot(r, c, &mut wrng)).collect();
    let scores = shapes.iter().map(|&(r, c)| glorot(r, c, &mut srng)).collect();
    Network {
        config: cfg.clone(),
        weights,
        scores,
        heads: Vec::new(),
    }
}

impl Network {
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.config.layer_shapes()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Matrix::len).sum()
    }

    /// Appends a freshly initialised head for the next task; returns its id.
    pub fn add_head(&mut self) -> Result<TaskId> {
        let id = self.heads.len();
        if id >= self.config.max_tasks {
            return Err(Error::InvalidArgument(format!(
                "network already holds the maximum of {} task heads",
                self.config.max_tasks
            )));
        }
        let head = self.fresh_head(id as TaskId);
        self.heads.push(head);
        Ok(id as TaskId)
    }

    /// The head a task would start from. Deterministic in (seed, task id).
    pub fn fresh_head(&self, task: TaskId) -> TaskHead {
        let mut hrng = rng::rng(self.config.seed, stream::HEAD, task as u64);
        TaskHead {
            weight: glorot(self.config.head_size, self.config.representation_size(), &mut hrng),
            bias: vec![0.0; self.config.head_size],
            hidden_bias: TaskHead::zero_biases(&self.config),
        }
    }

    pub fn head(&self, task: TaskId) -> Result<&TaskHead> {
        self.heads.get(task as usize).ok_or(Error::UnknownTask(task))
    }

    pub fn head_mut(&mut self, task: TaskId) -> Result<&mut TaskHead> {
        self.heads.get_mut(task as usize).ok_or(Error::UnknownTask(task))
    }

    fn check_mask(&self, layers: &[BitMatrix]) -> Result<()> {
        if layers.len() != self.weights.len() {
            return Err(Error::shape("mask layers", self.weights.len(), layers.len()));
        }
        for (l, (m, w)) in layers.iter().zip(&self.weights).enumerate() {
            if m.shape() != w.shape() {
                return Err(Error::shape(
                    format!("mask layer {l}"),
                    format!("{:?}", w.shape()),
                    format!("{:?}", m.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn masked_weights(&self, layers: &[BitMatrix]) -> Result<Vec<Matrix>> {
        self.check_mask(layers)?;
        Ok(layers.iter().zip(&self.weights).map(|(m, w)| m.apply(w)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub head: TaskId,
    pub input: Matrix,
    pub mask: Vec<BitMatrix>,
    /// Masked weights used for each layer.
    pub effective: Vec<Matrix>,
    pub pre_activations: Vec<Matrix>,
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardTrace {
    /// Last hidden activation, `batch × representation width`.
    pub fn representation(&self) -> &Matrix {
        self.activations.last().expect("at least one hidden layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub d_weights: Vec<Matrix>,
    pub d_scores: Vec<Matrix>,
    pub d_hidden_bias: Vec<Vec<f64>>,
    pub d_head: Matrix,
    pub d_head_bias: Vec<f64>,
}

impl LayerGradients {
    pub fn is_zero(&self) -> bool {
        let zero = |m: &Matrix| m.as_slice().iter().all(|v| *v == 0.0);
        self.d_weights.iter().all(zero)
            && self.d_scores.iter().all(zero)
            && zero(&self.d_head)
            && self.d_hidden_bias.iter().flatten().all(|v| *v == 0.0)
            && self.d_head_bias.iter().all(|v| *v == 0.0)
    }
}

fn check_batch(net: &Network, batch: &Matrix) -> Result<()> {
    if batch.cols() != net.config.input_size() {
        return Err(Error::shape("batch width (layer 0 input)", net.config.input_size(), batch.cols()));
    }
    Ok(())
}

fn add_bias_relu(z: &mut Matrix, bias: &[f64]) -> Matrix {
    let mut a = z.clone();
    for r in 0..z.rows() {
        for ((zv, av), b) in z.row_mut(r).iter_mut().zip(a.row_mut(r)).zip(bias) {
            *zv += b;
            *av = zv.max(0.0);
        }
    }
    a
}

pub fn forward(net: &Network, mask: &TaskMask, head: TaskId, batch: &Matrix) -> Result<ForwardTrace> {
    forward_layers(net, &mask.layers, head, batch)
}

pub fn forward_layers(net: &Network, layers: &[BitMatrix], head: TaskId, batch: &Matrix) -> Result<ForwardTrace> {
    let h = net.head(head)?;
    forward_with_head(net, layers, h, head, batch)
}

/// Forward pass with an explicit head, which need not be stored in `net`.
pub fn forward_with_head(
    net: &Network,
    layers: &[BitMatrix],
    head: &TaskHead,
    head_id: TaskId,
    batch: &Matrix,
) -> Result<ForwardTrace> {
    check_batch(net, batch)?;
    let effective = net.masked_weights(layers)?;
    let mut pre_activations = Vec::with_capacity(effective.len());
    let mut activations: Vec<Matrix> = Vec::with_capacity(effective.len());
    for (l, w) in effective.iter().enumerate() {
        let x = if l == 0 { batch } else { &activations[l - 1] };
        let mut z = x.matmul_t(w)?;
        let a = add_bias_relu(&mut z, &head.hidden_bias[l]);
        pre_activations.push(z);
        activations.push(a);
    }
    let rep = activations.last().unwrap();
    let mut logits = rep.matmul_t(&head.weight)?;
    for r in 0..logits.rows() {
        for (v, b) in logits.row_mut(r).iter_mut().zip(&head.bias) {
            *v += b;
        }
    }
    Ok(ForwardTrace {
        head: head_id,
        input: batch.clone(),
        mask: layers.to_vec(),
        effective,
        pre_activations,
        activations,
        logits,
    })
}

/// Representation (last hidden activation) with no head involved.
pub fn represent(net: &Network, layers: &[BitMatrix], hidden_bias: Option<&[Vec<f64>]>, batch: &Matrix) -> Result<Matrix> {
    check_batch(net, batch)?;
    let effective = net.masked_weights(layers)?;
    let zero = TaskHead::zero_biases(&net.config);
    let bias = hidden_bias.unwrap_or(&zero);
    let mut x = batch.clone();
    for (l, w) in effective.iter().enumerate() {
        let mut z = x.matmul_t(w)?;
        x = add_bias_relu(&mut z, &bias[l]);
    }
    Ok(x)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape("labels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[y];
        let g = grad.row_mut(r);
        for (c, (gv, z)) in g.iter_mut().zip(row).enumerate() {
            let p = (z - log_sum).exp();
            *gv = (p - if c == y { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

pub fn backward(net: &Network, mask: &TaskMask, trace: &ForwardTrace, labels: &[usize]) -> Result<LayerGradients> {
    if mask.layers != trace.mask {
        return Err(Error::InvalidArgument("backward mask differs from the forward pass mask".into()));
    }
    let (_, d_logits) = cross_entropy(&trace.logits, labels)?;
    let head = net.head(trace.head)?;
    backward_from_logits(net, head, trace, &d_logits)
}

/// Backpropagates an upstream logit gradient through `trace`.
pub fn backward_from_logits(net: &Network, head: &TaskHead, trace: &ForwardTrace, d_logits: &Matrix) -> Result<LayerGradients> {
    if d_logits.shape() != trace.logits.shape() {
        return Err(Error::shape(
            "logit gradient",
            format!("{:?}", trace.logits.shape()),
            format!("{:?}", d_logits.shape()),
        ));
    }
    let rep = trace.representation();
    let d_head = d_logits.t_matmul(rep)?;
    let d_head_bias = column_sums(d_logits);
    let mut upstream = d_logits.matmul(&head.weight)?;

    let layers = trace.effective.len();
    let mut d_weights = vec![Matrix::zeros(0, 0); layers];
    let mut d_scores = vec![Matrix::zeros(0, 0); layers];
    let mut d_hidden_bias = vec![Vec::new(); layers];
    for l in (0..layers).rev() {
        let z = &trace.pre_activations[l];
        for (g, zv) in upstream.as_mut_slice().iter_mut().zip(z.as_slice()) {
            if *zv <= 0.0 {
                *g = 0.0;
            }
        }
        let x = if l == 0 { &trace.input } else { &trace.activations[l - 1] };
        // gradient with respect to the masked weight ŵ = W ⊙ m
        let d_eff = upstream.t_matmul(x)?;
        let eff = &trace.effective[l];
        let w = &net.weights[l];
        let m = &trace.mask[l];
        let mut dw = d_eff.clone();
        for (k, g) in dw.as_mut_slice().iter_mut().enumerate() {
            if !m.get_flat(k) {
                *g = 0.0;
            }
        }
        d_scores[l] = d_eff.hadamard(w)?;
        d_hidden_bias[l] = column_sums(&upstream);
        if l > 0 {
            upstream = upstream.matmul(eff)?;
        }
        d_weights[l] = dw;
    }
    Ok(LayerGradients {
        d_weights,
        d_scores,
        d_hidden_bias,
        d_head,
        d_head_bias,
    })
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

/// `W ← W − lr · (∂L/∂W ⊙ (𝟙 − M))`; entries under `accum` are never written.
pub fn update_weights_masked(net: &mut Network, grads: &LayerGradients, accum: &AccumulatedMask, lr: f64) -> Result<()> {
    if grads.d_weights.len() != net.weights.len() || accum.layers.len() != net.weights.len() {
        return Err(Error::shape("update_weights_masked layers", net.weights.len(), grads.d_weights.len()));
    }
    for ((w, g), m) in net.weights.iter_mut().zip(&grads.d_weights).zip(&accum.layers) {
        w.check_same_shape(g, "update_weights_masked")?;
        if m.shape() != w.shape() {
            return Err(Error::shape("update_weights_masked mask", format!("{:?}", w.shape()), format!("{:?}", m.shape())));
        }
        for (k, (wv, gv)) in w.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
            if !m.get_flat(k) {
                *wv -= lr * gv;
            }
        }
    }
    Ok(())
}

/// `S ← S − lr · ∂L/∂S` on every entry.
pub fn update_scores(net: &mut Network, grads: &LayerGradients, lr: f64) -> Result<()> {
    update_scores_with(net, &grads.d_scores, lr)
}

pub fn update_scores_with(net: &mut Network, d_scores: &[Matrix], lr: f64) -> Result<()> {
    if d_scores.len() != net.scores.len() {
        return Err(Error::shape("update_scores layers", net.scores.len(), d_scores.len()));
    }
    for (s, g) in net.scores.iter_mut().zip(d_scores) {
        s.sub_scaled_assign(g, lr)?;
    }
    Ok(())
}

/// SGD step on a task's head weight, head bias, and hidden biases.
pub fn update_task_params(head: &mut TaskHead, grads: &LayerGradients, lr: f64) -> Result<()> {
    head.weight.sub_scaled_assign(&grads.d_head, lr)?;
    for (b, g) in head.bias.iter_mut().zip(&grads.d_head_bias) {
        *b -= lr * g;
    }
    for (bl, gl) in head.hidden_bias.iter_mut().zip(&grads.d_hidden_bias) {
        for (b, g) in bl.iter_mut().zip(gl) {
            *b -= lr * g;
        }
    }
    Ok(())
}

pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
