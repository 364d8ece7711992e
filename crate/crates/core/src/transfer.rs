//! Forward and backward knowledge transfer between similar tasks.
//!
//! Forward transfer adds, once per task, the score gradient obtained by
//! running the new task's data through the most similar prior's sub-network.
//! Backward transfer nudges the heads of similar priors toward the new head
//! using the cosine term of the bi-objective loss, projected away from the
//! representation subspaces of every other prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::BitMatrix;
use crate::nn::{self, LayerGradients, Network, TaskHead};
use crate::numerics::{dot, norm, Matrix};
use crate::similarity::thresholded_left_basis;
use crate::TaskId;

/// Residual norm below which a merged basis vector is dropped.
pub const MERGE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GpmMemory {
    pub owner_task: TaskId,
    /// `width × k`, orthonormal columns.
    pub basis: Matrix,
}

impl GpmMemory {
    pub fn k(&self) -> usize {
        self.basis.cols()
    }
}

/// Protected subspace of the owner's penultimate representations.
pub fn build_gpm_memory(trace: &nn::ForwardTrace, owner_task: TaskId, eps_th: f64) -> Result<GpmMemory> {
    build_gpm_memory_from(trace.representation(), owner_task, eps_th)
}

pub fn build_gpm_memory_from(representation: &Matrix, owner_task: TaskId, eps_th: f64) -> Result<GpmMemory> {
    Ok(GpmMemory {
        owner_task,
        basis: thresholded_left_basis(representation, eps_th)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AlignmentRecord {
    pub new_task: TaskId,
    pub donor_task: TaskId,
    pub applied: bool,
}

impl AlignmentRecord {
    pub fn new(new_task: TaskId, donor_task: TaskId) -> Self {
        Self {
            new_task,
            donor_task,
            applied: false,
        }
    }
}

/// Element-wise sum of the new task's and the donor's score gradients.
pub fn align_initial_gradients(record: &mut AlignmentRecord, grad_new: &[Matrix], grad_donor: &[Matrix]) -> Result<Vec<Matrix>> {
    if record.applied {
        return Err(Error::AlignmentAlreadyApplied(record.new_task));
    }
    if grad_new.len() != grad_donor.len() {
        return Err(Error::shape("alignment layers", grad_new.len(), grad_donor.len()));
    }
    let summed = grad_new.iter().zip(grad_donor).map(|(a, b)| a.add(b)).collect::<Result<Vec<_>>>()?;
    record.applied = true;
    Ok(summed)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm head".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// `(∂cos/∂a, ∂cos/∂b)`
pub fn cosine_grad(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm head".into()));
    }
    let ab = dot(a, b);
    let inv = 1.0 / (na * nb);
    let da = a.iter().zip(b).map(|(x, y)| y * inv - ab * x / (na.powi(3) * nb)).collect();
    let db = a.iter().zip(b).map(|(x, y)| x * inv - ab * y / (na * nb.powi(3))).collect();
    Ok((da, db))
}

/// Similarity term `(1/N₁) Σ_j (1 − cos(w_j, w_t))` and its gradients with
/// respect to `w_t` and each `w_j`. Empty `sim_heads` gives zero.
pub fn cosine_term(head_new: &Matrix, sim_heads: &[&Matrix]) -> Result<(f64, Matrix, Vec<Matrix>)> {
    let (r, c) = head_new.shape();
    let mut d_new = Matrix::zeros(r, c);
    if sim_heads.is_empty() {
        return Ok((0.0, d_new, Vec::new()));
    }
    let n1 = sim_heads.len() as f64;
    let mut value = 0.0;
    let mut d_priors = Vec::with_capacity(sim_heads.len());
    for h in sim_heads {
        h.check_same_shape(head_new, "cosine_term head")?;
        value += 1.0 - cosine(h.as_slice(), head_new.as_slice())?;
        let (dj, dt) = cosine_grad(h.as_slice(), head_new.as_slice())?;
        for (acc, g) in d_new.as_mut_slice().iter_mut().zip(&dt) {
            *acc -= g / n1;
        }
        d_priors.push(Matrix::from_raw(r, c, dj.into_iter().map(|g| -g / n1).collect()));
    }
    Ok((value / n1, d_new, d_priors))
}

/// Mean cross-entropy plus the similarity term.
pub fn bi_objective_loss(logits: &Matrix, labels: &[usize], head_new: &Matrix, sim_heads: &[&Matrix]) -> Result<f64> {
    let (ce, _) = nn::cross_entropy(logits, labels)?;
    let (cos, _, _) = cosine_term(head_new, sim_heads)?;
    Ok(ce + cos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiObjective {
    pub loss: f64,
    pub cross_entropy: f64,
    pub similarity: f64,
    /// Gradients for the new task; `d_head` includes the similarity term.
    pub grads: LayerGradients,
    /// One gradient per similar prior head, from the similarity term only.
    pub d_sim_heads: Vec<Matrix>,
}

/// Forward/backward pass of the bi-objective loss through `layers`.
pub fn bi_objective_grad(
    net: &Network,
    layers: &[BitMatrix],
    head: &TaskHead,
    head_id: TaskId,
    batch: &Matrix,
    labels: &[usize],
    sim_heads: &[&Matrix],
) -> Result<BiObjective> {
    let trace = nn::forward_with_head(net, layers, head, head_id, batch)?;
    let (ce, d_logits) = nn::cross_entropy(&trace.logits, labels)?;
    let mut grads = nn::backward_from_logits(net, head, &trace, &d_logits)?;
    let (similarity, d_new, d_sim_heads) = cosine_term(&head.weight, sim_heads)?;
    grads.d_head = grads.d_head.add(&d_new)?;
    Ok(BiObjective {
        loss: ce + similarity,
        cross_entropy: ce,
        similarity,
        grads,
        d_sim_heads,
    })
}

/// Orthonormal basis of the span of all columns, by modified Gram-Schmidt.
pub fn merge_bases(dim: usize, bases: &[&Matrix]) -> Result<Matrix> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for b in bases {
        if b.rows() != dim {
            return Err(Error::shape("merge_bases dimension", dim, b.rows()));
        }
        for j in 0..b.cols() {
            let mut v = b.column(j);
            for _ in 0..2 {
                for q in &kept {
                    let p = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
                }
            }
            let n = norm(&v);
            if n >= MERGE_TOL {
                v.iter_mut().for_each(|x| *x /= n);
                kept.push(v);
            }
        }
    }
    Matrix::from_columns(dim, &kept)
}

/// `g ← g − (g·B)·Bᵀ` for each row `g` of `grad`; `basis` must be orthonormal.
pub fn project_out(grad: &Matrix, basis: &Matrix) -> Result<Matrix> {
    if grad.cols() != basis.rows() {
        return Err(Error::shape("projection dimension", basis.rows(), grad.cols()));
    }
    if basis.cols() == 0 {
        return Ok(grad.clone());
    }
    let coeff = grad.matmul(basis)?;
    let inside = coeff.matmul_t(basis)?;
    grad.sub(&inside)
}

/// Removes every component of `grad` lying in the union of `memories`.
pub fn gpm_project(grad: &Matrix, memories: &[&GpmMemory]) -> Result<Matrix> {
    let bases: Vec<&Matrix> = memories.iter().map(|m| &m.basis).collect();
    let merged = merge_bases(grad.cols(), &bases)?;
    project_out(grad, &merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeadAudit {
    pub prior: TaskId,
    pub protected: Vec<TaskId>,
    /// `max |Bᵀ · Δwᵀ|` over all protected bases.
    pub max_residual: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectionAudit {
    pub new_task: TaskId,
    pub heads: Vec<HeadAudit>,
}

impl ProjectionAudit {
    pub fn max_residual(&self) -> f64 {
        self.heads.iter().map(|h| h.max_residual).fold(0.0, f64::max)
    }
}

/// Protected memories for a BKT step: owners outside `sim_set ∪ {new_task}`.
pub fn protected_memories<'a>(memories: &'a [GpmMemory], sim_set: &[TaskId], new_task: TaskId) -> Vec<&'a GpmMemory> {
    memories
        .iter()
        .filter(|m| m.owner_task != new_task && !sim_set.contains(&m.owner_task))
        .collect()
}

/// `w_j ← w_j − lr · gpm_project(∂L_sim/∂w_j)` for every similar prior `j`.
/// Touches head weights only.
pub fn backward_transfer_step(
    net: &mut Network,
    new_task: TaskId,
    sim_set: &[TaskId],
    memories: &[GpmMemory],
    d_sim_heads: &[Matrix],
    lr: f64,
) -> Result<ProjectionAudit> {
    if sim_set.len() != d_sim_heads.len() {
        return Err(Error::shape("backward transfer gradients", sim_set.len(), d_sim_heads.len()));
    }
    let protected = protected_memories(memories, sim_set, new_task);
    let protected_ids: Vec<TaskId> = protected.iter().map(|m| m.owner_task).collect();
    let width = net.config.representation_size();
    let bases: Vec<&Matrix> = protected.iter().map(|m| &m.basis).collect();
    let merged = merge_bases(width, &bases)?;
    let mut heads = Vec::with_capacity(sim_set.len());
    for (&j, g) in sim_set.iter().zip(d_sim_heads) {
        let step = project_out(g, &merged)?.scale(lr);
        let head = net.head_mut(j)?;
        head.weight.check_same_shape(&step, "backward transfer head")?;
        let before = head.weight.clone();
        head.weight.sub_scaled_assign(&step, 1.0)?;
        let delta = head.weight.sub(&before)?;
        let mut max_residual = 0.0_f64;
        for m in &protected {
            let r = delta.matmul(&m.basis)?;
            max_residual = max_residual.max(r.max_abs());
        }
        heads.push(HeadAudit {
            prior: j,
            protected: protected_ids.clone(),
            max_residual,
            step_norm: delta.frobenius_sq().sqrt(),
        });
    }
    Ok(ProjectionAudit { new_task, heads })
}
