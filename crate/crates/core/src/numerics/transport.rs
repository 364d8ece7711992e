//! Exact discrete optimal transport.
//!
//! Equal-size uniform marginals reduce to a linear assignment problem
//! (a permutation coupling is optimal), which is solved with the
//! Hungarian method. Everything else goes through a transportation
//! simplex: a network simplex specialised to the complete bipartite graph.

use std::collections::VecDeque;

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const MARGINAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Matrix,
    pub cost: f64,
}

pub fn solve_transport(ground_cost: &Matrix, src: &[f64], dst: &[f64]) -> Result<TransportPlan> {
    let (m, n) = ground_cost.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty transport problem".into()));
    }
    if src.len() != m || dst.len() != n {
        return Err(Error::shape(
            "solve_transport marginals",
            format!("{m} sources, {n} targets"),
            format!("{} sources, {} targets", src.len(), dst.len()),
        ));
    }
    if ground_cost.as_slice().iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidArgument("ground cost must be finite and non-negative".into()));
    }
    for w in src.iter().chain(dst) {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::InvalidArgument(format!("marginal weight {w} is not a non-negative number")));
        }
    }
    let (sa, sb): (f64, f64) = (src.iter().sum(), dst.iter().sum());
    if (sa - 1.0).abs() > MARGINAL_TOL || (sb - 1.0).abs() > MARGINAL_TOL {
        return Err(Error::InfeasibleMarginals { src: sa, dst: sb });
    }

    if m == n && is_uniform(src) && is_uniform(dst) {
        return Ok(solve_uniform_assignment(ground_cost));
    }
    transportation_simplex(ground_cost, src, dst)
}

fn is_uniform(w: &[f64]) -> bool {
    let target = 1.0 / w.len() as f64;
    w.iter().all(|x| (x - target).abs() <= 1e-15)
}

fn solve_uniform_assignment(cost: &Matrix) -> TransportPlan {
    let n = cost.rows();
    let assignment = hungarian(cost);
    let w = 1.0 / n as f64;
    let mut coupling = Matrix::zeros(n, n);
    let mut total = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        coupling.set(i, j, w);
        total += cost.get(i, j);
    }
    TransportPlan {
        coupling,
        cost: total * w,
    }
}

/// Minimum-cost perfect matching on a square cost matrix.
/// Returns `assignment[row] = col`.
pub fn hungarian(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "hungarian needs a square matrix");
    // 1-based potentials formulation; column 0 is a virtual sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    assignment
}

#[derive(Clone, Copy)]
struct BasicCell {
    row: usize,
    col: usize,
    flow: f64,
}

fn transportation_simplex(cost: &Matrix, src: &[f64], dst: &[f64]) -> Result<TransportPlan> {
    let (m, n) = cost.shape();
    let mut basis = northwest_corner(src, dst);
    let cost_scale = 1.0 + cost.max_abs();
    let tol = 1e-12 * cost_scale;
    let max_iters = 50 * (m + n) * (m + n) + 1000;
    let mut degenerate_run = 0usize;

    for _ in 0..max_iters {
        let (u, v) = potentials(cost, &basis, m, n);
        let bland = degenerate_run > m + n;
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -tol;
        'scan: for i in 0..m {
            for j in 0..n {
                let r = cost.get(i, j) - u[i] - v[j];
                if r < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(finish(cost, &basis));
        };
        // Cells of the cycle closed by the entering edge, alternating sign
        // starting with a minus at the cell adjacent to the entering column.
        let path = tree_path(&basis, m, n, m + ej, ei);
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 && basis[cell].flow < theta {
                theta = basis[cell].flow;
                leaving = cell;
            }
        }
        debug_assert!(leaving != usize::MAX);
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis[cell].flow = (basis[cell].flow - theta).max(0.0);
            } else {
                basis[cell].flow += theta;
            }
        }
        basis[leaving] = BasicCell {
            row: ei,
            col: ej,
            flow: theta,
        };
        if theta <= 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
    }
    Err(Error::Degenerate(format!(
        "transportation simplex exceeded {max_iters} pivots on {m}x{n} problem"
    )))
}

fn northwest_corner(src: &[f64], dst: &[f64]) -> Vec<BasicCell> {
    let (m, n) = (src.len(), dst.len());
    let mut a = src.to_vec();
    let mut b = dst.to_vec();
    let mut cells = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let q = a[i].min(b[j]).max(0.0);
        a[i] -= q;
        b[j] -= q;
        cells.push(BasicCell { row: i, col: j, flow: q });
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    cells
}

/// Dual potentials with `u[0] = 0` along the spanning tree of basic cells.
fn potentials(cost: &Matrix, basis: &[BasicCell], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let adj = adjacency(basis, m, n);
    let mut pot = vec![f64::NAN; m + n];
    pot[0] = 0.0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        for &cell in &adj[node] {
            let c = basis[cell];
            let (r, col) = (c.row, m + c.col);
            let other = if node == r { col } else { r };
            if pot[other].is_nan() {
                // u_r + v_c = cost
                pot[other] = cost.get(c.row, c.col) - pot[node];
                queue.push_back(other);
            }
        }
    }
    let u = pot[..m].to_vec();
    let v = pot[m..].to_vec();
    (u, v)
}

fn adjacency(basis: &[BasicCell], m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); m + n];
    for (k, c) in basis.iter().enumerate() {
        adj[c.row].push(k);
        adj[m + c.col].push(k);
    }
    adj
}

/// Basic cells on the tree path from node `from` to node `to`, in order.
fn tree_path(basis: &[BasicCell], m: usize, n: usize, from: usize, to: usize) -> Vec<usize> {
    let adj = adjacency(basis, m, n);
    let mut via = vec![usize::MAX; m + n];
    let mut seen = vec![false; m + n];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &cell in &adj[node] {
            let c = basis[cell];
            let other = if node == c.row { m + c.col } else { c.row };
            if !seen[other] {
                seen[other] = true;
                via[other] = cell;
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = to;
    while node != from {
        let cell = via[node];
        path.push(cell);
        let c = basis[cell];
        node = if node == c.row { m + c.col } else { c.row };
    }
    path.reverse();
    path
}

fn finish(cost: &Matrix, basis: &[BasicCell]) -> TransportPlan {
    let (m, n) = cost.shape();
    let mut coupling = Matrix::zeros(m, n);
    for c in basis {
        let cur = coupling.get(c.row, c.col);
        coupling.set(c.row, c.col, cur + c.flow);
    }
    let total = coupling
        .as_slice()
        .iter()
        .zip(cost.as_slice())
        .map(|(x, c)| x * c)
        .sum();
    TransportPlan {
        coupling,
        cost: total,
    }
}
