//! Shared helpers and independent reference implementations for the integration tests.
#![allow(dead_code)]

pub mod oracle;

use etcl::masks::BitMatrix;
use etcl::nn::{self, Network, NetworkConfig, TaskHead};
use etcl::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

pub fn random_mask(r: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> BitMatrix {
    let bits: Vec<bool> = (0..rows * cols).map(|_| r.random::<f64>() < density).collect();
    BitMatrix::from_bits(rows, cols, &bits).unwrap()
}

/// Network with `heads` random heads whose biases are nonzero.
pub fn random_net(r: &mut ChaCha8Rng, layers: &[usize], head_size: usize, heads: usize) -> Network {
    let cfg = NetworkConfig::new(layers.to_vec(), head_size, heads.max(1), r.random()).unwrap();
    let mut net = nn::init_network(&cfg);
    for _ in 0..heads {
        net.add_head().unwrap();
    }
    for h in &mut net.heads {
        h.bias = random_vec(r, head_size, 0.3);
        for b in &mut h.hidden_bias {
            let n = b.len();
            *b = random_vec(r, n, 0.3);
        }
    }
    net
}

/// Plain-loop forward pass: mean cross-entropy of `relu` layers with the
/// given effective (already masked) weights.
pub fn reference_loss(x: &Matrix, effective: &[Matrix], head: &TaskHead, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let mut a: Vec<f64> = x.row(r).to_vec();
        for (l, w) in effective.iter().enumerate() {
            let mut next = vec![0.0; w.rows()];
            for (i, out) in next.iter_mut().enumerate() {
                let mut z = head.hidden_bias[l][i];
                for (j, av) in a.iter().enumerate() {
                    z += w.get(i, j) * av;
                }
                *out = z.max(0.0);
            }
            a = next;
        }
        let logits: Vec<f64> = (0..head.weight.rows())
            .map(|c| head.bias[c] + (0..a.len()).map(|j| head.weight.get(c, j) * a[j]).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len() as f64
}

/// Smallest |pre-activation| over the batch; finite differences are only
/// trusted away from ReLU kinks.
pub fn kink_margin(x: &Matrix, effective: &[Matrix], head: &TaskHead) -> f64 {
    let mut margin = f64::INFINITY;
    for r in 0..x.rows() {
        let mut a: Vec<f64> = x.row(r).to_vec();
        for (l, w) in effective.iter().enumerate() {
            let mut next = vec![0.0; w.rows()];
            for (i, out) in next.iter_mut().enumerate() {
                let mut z = head.hidden_bias[l][i];
                for (j, av) in a.iter().enumerate() {
                    z += w.get(i, j) * av;
                }
                margin = margin.min(z.abs());
                *out = z.max(0.0);
            }
            a = next;
        }
    }
    margin
}

pub fn reference_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// ‖a − b‖ / max(‖a‖, ‖b‖, floor)
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let up = f(&p);
            p[k] = x[k] - h;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn sign_min_dist(u: &[f64], v: &[f64]) -> f64 {
    let a: f64 = u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum();
    let b: f64 = u.iter().zip(v).map(|(x, y)| (x + y).powi(2)).sum();
    a.min(b).sqrt()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// W1 between uniform distributions of equal size by enumerating every permutation.
pub fn brute_force_w1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| sign_min_dist(&a[i], &b[j])).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Random orthonormal columns (dim × k) by Gram-Schmidt.
pub fn random_orthonormal(r: &mut ChaCha8Rng, dim: usize, k: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < k {
        let mut v = random_vec(r, dim, 1.0);
        for _ in 0..2 {
            for q in &cols {
                let p: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_columns(dim, &cols).unwrap()
}
