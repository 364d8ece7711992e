//! Finite-difference gradient checks on random small networks. Each returns
//! the worst norm-relative error, or `None` when the instance sits too close
//! to a ReLU kink for finite differences to be trusted.

use super::*;
use etcl::nn::LayerGradients;
use etcl::transfer;

pub const LAYERS: [usize; 3] = [5, 6, 4];
pub const CLASSES: usize = 3;
const BATCH: usize = 8;
const H: f64 = 1e-4;
const KINK: f64 = 1e-3;

pub struct Case {
    pub net: Network,
    pub mask: Vec<BitMatrix>,
    pub x: Matrix,
    pub labels: Vec<usize>,
}

pub fn case(seed: u64) -> Case {
    let mut r = rng(seed);
    let net = random_net(&mut r, &LAYERS, CLASSES, 1);
    let mask = net.layer_shapes().iter().map(|&(a, b)| random_mask(&mut r, a, b, 0.7)).collect();
    let x = random_matrix(&mut r, BATCH, LAYERS[0], 1.0);
    let labels = (0..BATCH).map(|i| (i + seed as usize) % CLASSES).collect();
    Case { net, mask, x, labels }
}

fn effective(weights: &[Matrix], mask: &[BitMatrix]) -> Vec<Matrix> {
    weights.iter().zip(mask).map(|(w, m)| m.apply(w)).collect()
}

fn with_flat(m: &Matrix, v: &[f64]) -> Matrix {
    Matrix::new(m.rows(), m.cols(), v.to_vec()).unwrap()
}

pub fn clear_of_kinks(c: &Case) -> bool {
    kink_margin(&c.x, &effective(&c.net.weights, &c.mask), &c.net.heads[0]) > KINK
}

fn analytic(c: &Case) -> LayerGradients {
    let head = &c.net.heads[0];
    let trace = nn::forward_with_head(&c.net, &c.mask, head, 0, &c.x).unwrap();
    let (_, d_logits) = nn::cross_entropy(&trace.logits, &c.labels).unwrap();
    nn::backward_from_logits(&c.net, head, &trace, &d_logits).unwrap()
}

/// Weights, hidden biases, head weight and head bias.
pub fn backprop_error(seed: u64) -> Option<f64> {
    let c = case(seed);
    if !clear_of_kinks(&c) {
        return None;
    }
    let g = analytic(&c);
    let head = &c.net.heads[0];
    let mut worst: f64 = 0.0;
    for l in 0..LAYERS.len() - 1 {
        let w = &c.net.weights[l];
        let fd = central_diff(w.as_slice(), H, |p| {
            let mut ws = c.net.weights.clone();
            ws[l] = with_flat(w, p);
            reference_loss(&c.x, &effective(&ws, &c.mask), head, &c.labels)
        });
        worst = worst.max(rel_err(g.d_weights[l].as_slice(), &fd));
        let fd = central_diff(&head.hidden_bias[l], H, |p| {
            let mut hd = head.clone();
            hd.hidden_bias[l] = p.to_vec();
            reference_loss(&c.x, &effective(&c.net.weights, &c.mask), &hd, &c.labels)
        });
        worst = worst.max(rel_err(&g.d_hidden_bias[l], &fd));
    }
    let eff = effective(&c.net.weights, &c.mask);
    let fd = central_diff(head.weight.as_slice(), H, |p| {
        let hd = TaskHead { weight: with_flat(&head.weight, p), ..head.clone() };
        reference_loss(&c.x, &eff, &hd, &c.labels)
    });
    worst = worst.max(rel_err(g.d_head.as_slice(), &fd));
    let fd = central_diff(&head.bias, H, |p| {
        let hd = TaskHead { bias: p.to_vec(), ..head.clone() };
        reference_loss(&c.x, &eff, &hd, &c.labels)
    });
    Some(worst.max(rel_err(&g.d_head_bias, &fd)))
}

/// Score gradients against the derivative with respect to a continuous
/// relaxation of the mask, taken at the binary mask.
pub fn straight_through_error(seed: u64) -> Option<f64> {
    let c = case(seed);
    if !clear_of_kinks(&c) {
        return None;
    }
    let g = analytic(&c);
    let head = &c.net.heads[0];
    let dense: Vec<Vec<f64>> = c
        .mask
        .iter()
        .map(|m| (0..m.len()).map(|k| if m.get_flat(k) { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for l in 0..dense.len() {
        let fd = central_diff(&dense[l], H, |p| {
            let eff: Vec<Matrix> = c
                .net
                .weights
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let m = if i == l { p } else { &dense[i][..] };
                    with_flat(w, &w.as_slice().iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>())
                })
                .collect();
            reference_loss(&c.x, &eff, head, &c.labels)
        });
        worst = worst.max(rel_err(g.d_scores[l].as_slice(), &fd));
    }
    Some(worst)
}

/// Cross-entropy plus cosine term: the new head and every similar head.
pub fn bi_objective_error(seed: u64, n_sim: usize) -> Option<f64> {
    let c = case(seed);
    if !clear_of_kinks(&c) {
        return None;
    }
    let mut r = rng(seed ^ 0xa5a5);
    let sims: Vec<Matrix> = (0..n_sim).map(|_| random_matrix(&mut r, CLASSES, LAYERS[2], 1.0)).collect();
    let sim_refs: Vec<&Matrix> = sims.iter().collect();
    let head = &c.net.heads[0];
    let bo = transfer::bi_objective_grad(&c.net, &c.mask, head, 0, &c.x, &c.labels, &sim_refs).unwrap();
    let eff = effective(&c.net.weights, &c.mask);
    let total = |hd: &TaskHead, sims: &[Matrix]| {
        let cos: f64 = sims.iter().map(|s| 1.0 - reference_cosine(s.as_slice(), hd.weight.as_slice())).sum::<f64>() / sims.len() as f64;
        reference_loss(&c.x, &eff, hd, &c.labels) + cos
    };
    let mut worst = (bo.loss - total(head, &sims)).abs();
    let fd = central_diff(head.weight.as_slice(), H, |p| {
        let hd = TaskHead { weight: with_flat(&head.weight, p), ..head.clone() };
        total(&hd, &sims)
    });
    worst = worst.max(rel_err(bo.grads.d_head.as_slice(), &fd));
    for (j, s) in sims.iter().enumerate() {
        let fd = central_diff(s.as_slice(), H, |p| {
            let mut moved = sims.clone();
            moved[j] = with_flat(s, p);
            total(head, &moved)
        });
        worst = worst.max(rel_err(bo.d_sim_heads[j].as_slice(), &fd));
    }
    Some(worst)
}
