//! Online task-similarity detection.
//!
//! A task's representation basis is the set of leading left singular vectors
//! of its (transposed) probe representations that capture a fraction
//! `eps_th` of the spectral energy. Bases are compared with an exact
//! Wasserstein-1 distance between uniform distributions over their vectors,
//! using a sign-invariant ground cost. A prior task is labelled similar when
//! its distance to the new task shrinks, relative to the untrained twin
//! model, by at least the margin `delta`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bench::data::Split;
use crate::error::{Error, Result};
use crate::numerics::{norm, solve_transport, svd, Matrix};
use crate::rng::Rng;
use crate::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisSource {
    Original,
    Continual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationBasis {
    pub task_id: TaskId,
    pub source: BasisSource,
    /// `width × k`, one basis vector per column.
    pub vectors: Matrix,
}

impl RepresentationBasis {
    pub fn k(&self) -> usize {
        self.vectors.cols()
    }

    pub fn dim(&self) -> usize {
        self.vectors.rows()
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j)
    }
}

/// Uniform sample without replacement of `⌈rate · N⌉` training rows.
pub fn sample_probe(train: &Split, rate: f64, rng: &mut Rng) -> Result<Split> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("probe rate {rate} outside (0, 1]")));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("cannot probe an empty dataset".into()));
    }
    let n = train.len();
    let take = ((rate * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    let (picked, _) = idx.partial_shuffle(rng, take);
    Ok(train.select(picked))
}

/// Smallest `k` with `Σ_{j≤k} σ_j² ≥ eps_th · Σ_j σ_j²`.
pub fn energy_rank(sigma: &[f64], eps_th: f64) -> usize {
    let energies: Vec<f64> = sigma.iter().map(|s| s * s).collect();
    let total: f64 = energies.iter().sum();
    let target = eps_th * total - 1e-12 * total;
    let mut acc = 0.0;
    for (j, e) in energies.iter().enumerate() {
        acc += e;
        if acc >= target {
            return j + 1;
        }
    }
    sigma.len()
}

/// Orthonormal basis of the dominant subspace of `representation`'s rows.
pub fn compute_basis(representation: &Matrix, eps_th: f64, task_id: TaskId, source: BasisSource) -> Result<RepresentationBasis> {
    let vectors = thresholded_left_basis(representation, eps_th)?;
    Ok(RepresentationBasis {
        task_id,
        source,
        vectors,
    })
}

/// Left singular vectors of `representationᵀ` up to the energy rank.
pub(crate) fn thresholded_left_basis(representation: &Matrix, eps_th: f64) -> Result<Matrix> {
    if representation.is_empty() {
        return Err(Error::InvalidArgument("empty representation".into()));
    }
    if !(eps_th > 0.0 && eps_th <= 1.0) {
        return Err(Error::InvalidArgument(format!("energy threshold {eps_th} outside (0, 1]")));
    }
    if representation.as_slice().iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("all-zero representation".into()));
    }
    let res = svd(&representation.transpose())?;
    let k = energy_rank(&res.sigma, eps_th);
    Ok(res.u.leading_columns(k))
}

/// `min(‖u − v‖, ‖u + v‖)`
pub fn sign_invariant_distance(u: &[f64], v: &[f64]) -> f64 {
    let (mut minus, mut plus) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        minus += (a - b) * (a - b);
        plus += (a + b) * (a + b);
    }
    minus.min(plus).sqrt()
}

/// Exact Wasserstein-1 distance between the uniform distributions over two bases.
pub fn basis_distance(a: &RepresentationBasis, b: &RepresentationBasis) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("basis_distance dimension", a.dim(), b.dim()));
    }
    let (ka, kb) = (a.k(), b.k());
    if ka == 0 || kb == 0 {
        return Err(Error::Degenerate("empty basis".into()));
    }
    let av: Vec<Vec<f64>> = (0..ka).map(|j| a.vector(j)).collect();
    let bv: Vec<Vec<f64>> = (0..kb).map(|j| b.vector(j)).collect();
    let mut cost = Vec::with_capacity(ka * kb);
    for u in &av {
        for v in &bv {
            cost.push(sign_invariant_distance(u, v));
        }
    }
    let cost = Matrix::new(ka, kb, cost)?;
    let plan = solve_transport(&cost, &vec![1.0 / ka as f64; ka], &vec![1.0 / kb as f64; kb])?;
    Ok(plan.cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorDistance {
    pub prior: TaskId,
    /// Untrained-model distance before normalisation.
    pub raw_prime: f64,
    /// Continual-model distance before normalisation.
    pub raw: f64,
    pub dis_prime: f64,
    pub dis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Distances {
    pub new_task: TaskId,
    pub pairs: Vec<PriorDistance>,
    /// False when there is a single prior and raw distances are used as-is.
    pub normalized: bool,
    pub degenerate: bool,
}

/// Normalises raw `(prior, d', d)` distances across priors. A single prior
/// keeps its raw distances, since normalisation would pin both to 1.
pub fn normalize_distances(new_task: TaskId, raw: &[(TaskId, f64, f64)]) -> Distances {
    let n = raw.len();
    if n == 1 {
        let (prior, rp, r) = raw[0];
        return Distances {
            new_task,
            pairs: vec![PriorDistance {
                prior,
                raw_prime: rp,
                raw: r,
                dis_prime: rp,
                dis: r,
            }],
            normalized: false,
            degenerate: false,
        };
    }
    let sum_prime: f64 = raw.iter().map(|p| p.1).sum();
    let sum: f64 = raw.iter().map(|p| p.2).sum();
    let degenerate = sum_prime == 0.0 || sum == 0.0;
    let pairs = raw
        .iter()
        .map(|&(prior, rp, r)| {
            let (dp, d) = if degenerate {
                (1.0 / n as f64, 1.0 / n as f64)
            } else {
                (rp / sum_prime, r / sum)
            };
            PriorDistance {
                prior,
                raw_prime: rp,
                raw: r,
                dis_prime: dp,
                dis: d,
            }
        })
        .collect();
    Distances {
        new_task,
        pairs,
        normalized: true,
        degenerate,
    }
}

/// Bases of one prior task as stored in the knowledge base.
#[derive(Debug, Clone, Copy)]
pub struct PriorBases<'a> {
    pub original: &'a RepresentationBasis,
    pub continual: &'a RepresentationBasis,
}

pub fn normalized_distances(
    new_task: TaskId,
    new_original: &RepresentationBasis,
    new_continual: &RepresentationBasis,
    priors: &[PriorBases<'_>],
) -> Result<Distances> {
    if priors.is_empty() {
        return Err(Error::InvalidArgument("no prior tasks to compare against".into()));
    }
    let mut raw = Vec::with_capacity(priors.len());
    for p in priors {
        let dp = basis_distance(p.original, new_original)?;
        let d = basis_distance(p.continual, new_continual)?;
        raw.push((p.original.task_id, dp, d));
    }
    Ok(normalize_distances(new_task, &raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorVerdict {
    pub prior: TaskId,
    pub raw_prime: f64,
    pub raw: f64,
    pub dis_prime: f64,
    pub dis: f64,
    pub similar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimilarityVerdict {
    pub new_task: TaskId,
    pub per_prior: Vec<PriorVerdict>,
    pub sim_set: Vec<TaskId>,
    pub dis_set: Vec<TaskId>,
    pub most_similar: Option<TaskId>,
    pub normalized: bool,
    pub degenerate: bool,
}

impl SimilarityVerdict {
    /// Verdict for the very first task, which has no priors.
    pub fn empty(new_task: TaskId) -> Self {
        Self {
            new_task,
            per_prior: Vec::new(),
            sim_set: Vec::new(),
            dis_set: Vec::new(),
            most_similar: None,
            normalized: false,
            degenerate: false,
        }
    }
}

/// Single-pair similarity test with margin `delta`.
pub fn is_similar(dis_prime: f64, dis: f64, delta: f64, normalized: bool) -> bool {
    if dis >= dis_prime {
        return false;
    }
    let gap = (dis - dis_prime).abs();
    if normalized {
        gap >= delta
    } else {
        gap / dis_prime.max(1e-12) >= delta
    }
}

pub fn sdm_classify(distances: &Distances, delta: f64) -> Result<SimilarityVerdict> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must be non-negative")));
    }
    let mut per_prior = Vec::with_capacity(distances.pairs.len());
    let (mut sim_set, mut dis_set) = (Vec::new(), Vec::new());
    for p in &distances.pairs {
        let similar = is_similar(p.dis_prime, p.dis, delta, distances.normalized);
        if similar {
            sim_set.push(p.prior);
        } else {
            dis_set.push(p.prior);
        }
        per_prior.push(PriorVerdict {
            prior: p.prior,
            raw_prime: p.raw_prime,
            raw: p.raw,
            dis_prime: p.dis_prime,
            dis: p.dis,
            similar,
        });
    }
    let mut verdict = SimilarityVerdict {
        new_task: distances.new_task,
        per_prior,
        sim_set,
        dis_set,
        most_similar: None,
        normalized: distances.normalized,
        degenerate: distances.degenerate,
    };
    verdict.most_similar = most_similar(&verdict);
    Ok(verdict)
}

/// The similar prior with the largest gap `dis' − dis`; lowest id on ties.
pub fn most_similar(verdict: &SimilarityVerdict) -> Option<TaskId> {
    let mut best: Option<(TaskId, f64)> = None;
    for p in verdict.per_prior.iter().filter(|p| p.similar) {
        let gap = p.dis_prime - p.dis;
        best = match best {
            Some((id, g)) if g > gap || (g == gap && id < p.prior) => Some((id, g)),
            _ => Some((p.prior, gap)),
        };
    }
    best.map(|(id, _)| id)
}

/// Unit-norm check used by tests and audits.
pub fn max_orthonormality_error(vectors: &Matrix) -> f64 {
    let k = vectors.cols();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| vectors.column(j)).collect();
    let mut worst = 0.0_f64;
    for i in 0..k {
        worst = worst.max((norm(&cols[i]) - 1.0).abs());
        for j in i + 1..k {
            let d: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            worst = worst.max(d.abs());
        }
    }
    worst
}
