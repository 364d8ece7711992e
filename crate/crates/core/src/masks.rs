//! Binary task masks: top-c% selection, accumulation, and freeze audits.
//!
//! Masks are bit-packed row-major, 64 entries per `u64` word, with entry `k`
//! of a layer stored in bit `k % 64` of word `k / 64`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::numerics::Matrix;
use crate::TaskId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            words: vec![0; (rows * cols).div_ceil(64)],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for k in 0..rows * cols {
            m.set_flat(k, true);
        }
        m
    }

    pub fn from_words(rows: usize, cols: usize, words: Vec<u64>) -> Result<Self> {
        let n = rows * cols;
        if words.len() != n.div_ceil(64) {
            return Err(Error::shape("BitMatrix::from_words", n.div_ceil(64), words.len()));
        }
        if n % 64 != 0 {
            if let Some(last) = words.last() {
                if last >> (n % 64) != 0 {
                    return Err(Error::Malformed("mask padding bits set".into()));
                }
            }
        }
        Ok(Self { rows, cols, words })
    }

    pub fn from_bits(rows: usize, cols: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::shape("BitMatrix::from_bits", rows * cols, bits.len()));
        }
        let mut m = Self::zeros(rows, cols);
        for (k, &b) in bits.iter().enumerate() {
            m.set_flat(k, b);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get_flat(&self, k: usize) -> bool {
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.get_flat(r * self.cols + c)
    }

    #[inline]
    pub fn set_flat(&mut self, k: usize, on: bool) {
        let bit = 1u64 << (k % 64);
        if on {
            self.words[k / 64] |= bit;
        } else {
            self.words[k / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn or(&self, other: &BitMatrix) -> BitMatrix {
        debug_assert_eq!(self.shape(), other.shape());
        BitMatrix {
            rows: self.rows,
            cols: self.cols,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect(),
        }
    }

    pub fn and_count(&self, other: &BitMatrix) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// `values ⊙ self` as a dense matrix.
    pub fn apply(&self, values: &Matrix) -> Matrix {
        debug_assert_eq!(self.shape(), values.shape());
        let mut out = values.clone();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            if !self.get_flat(k) {
                *v = 0.0;
            }
        }
        out
    }

    /// Complement as 0/1 floats, i.e. the `𝟙 − M` factor of a masked update.
    pub fn complement_dense(&self) -> Matrix {
        let values = (0..self.len())
            .map(|k| if self.get_flat(k) { 0.0 } else { 1.0 })
            .collect();
        Matrix::new(self.rows, self.cols, values).expect("0/1 entries are finite")
    }

    pub fn storage_bytes(&self) -> usize {
        self.words.len() * std::mem::size_of::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMask {
    pub task_id: TaskId,
    pub capacity: f64,
    pub layers: Vec<BitMatrix>,
}

impl TaskMask {
    pub fn count_ones(&self) -> usize {
        self.layers.iter().map(BitMatrix::count_ones).sum()
    }

    pub fn ones_like(task_id: TaskId, shapes: &[(usize, usize)]) -> Self {
        Self {
            task_id,
            capacity: 1.0,
            layers: shapes.iter().map(|&(r, c)| BitMatrix::ones(r, c)).collect(),
        }
    }

    pub fn zeros_like(task_id: TaskId, shapes: &[(usize, usize)]) -> Self {
        Self {
            task_id,
            capacity: 1.0,
            layers: shapes.iter().map(|&(r, c)| BitMatrix::zeros(r, c)).collect(),
        }
    }

    pub fn storage_bytes(&self) -> usize {
        self.layers.iter().map(BitMatrix::storage_bytes).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedMask {
    pub layers: Vec<BitMatrix>,
    pub tasks: Vec<TaskId>,
}

impl AccumulatedMask {
    pub fn empty(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(r, c)| BitMatrix::zeros(r, c)).collect(),
            tasks: Vec::new(),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.layers.iter().map(BitMatrix::count_ones).sum()
    }
}

/// Number of entries kept by a capacity ratio, rounding half up.
pub fn kept_count(capacity: f64, n: usize) -> usize {
    ((capacity * n as f64) + 0.5).floor().min(n as f64) as usize
}

pub fn select_mask(scores: &[Matrix], capacity: f64, task_id: TaskId) -> Result<TaskMask> {
    if !(capacity > 0.0 && capacity <= 1.0) {
        return Err(Error::InvalidArgument(format!("capacity ratio {capacity} outside (0, 1]")));
    }
    let layers = scores.iter().map(|s| select_layer(s, capacity)).collect::<Result<_>>()?;
    Ok(TaskMask {
        task_id,
        capacity,
        layers,
    })
}

fn select_layer(scores: &Matrix, capacity: f64) -> Result<BitMatrix> {
    if !scores.is_finite() {
        return Err(Error::NonFinite("weight scores".into()));
    }
    let n = scores.len();
    let k = kept_count(capacity, n);
    let mut out = BitMatrix::zeros(scores.rows(), scores.cols());
    if k == n {
        return Ok(BitMatrix::ones(scores.rows(), scores.cols()));
    }
    if k == 0 {
        return Ok(out);
    }
    let s = scores.as_slice();
    // higher score first, lower flat index first on ties
    let rank = |a: &usize, b: &usize| -> Ordering { s[*b].total_cmp(&s[*a]).then(a.cmp(b)) };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.select_nth_unstable_by(k - 1, rank);
    for &i in &idx[..k] {
        out.set_flat(i, true);
    }
    Ok(out)
}

pub fn accumulate(accum: &AccumulatedMask, mask: &TaskMask) -> Result<AccumulatedMask> {
    check_layer_shapes(&accum.layers, &mask.layers, "accumulate")?;
    if accum.tasks.contains(&mask.task_id) {
        return Err(Error::DuplicateTask(mask.task_id));
    }
    let layers = accum.layers.iter().zip(&mask.layers).map(|(a, m)| a.or(m)).collect();
    let mut tasks = accum.tasks.clone();
    tasks.push(mask.task_id);
    Ok(AccumulatedMask { layers, tasks })
}

/// Fraction of a task's selected weights that were already claimed by earlier tasks.
pub fn reuse_fraction(mask: &TaskMask, accum: &AccumulatedMask) -> Result<f64> {
    check_layer_shapes(&accum.layers, &mask.layers, "reuse_fraction")?;
    let selected = mask.count_ones();
    if selected == 0 {
        return Err(Error::Degenerate("reuse fraction of an all-zero mask".into()));
    }
    let shared: usize = mask.layers.iter().zip(&accum.layers).map(|(m, a)| m.and_count(a)).sum();
    Ok(shared as f64 / selected as f64)
}

pub(crate) fn check_layer_shapes(a: &[BitMatrix], b: &[BitMatrix], context: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(context, format!("{} layers", a.len()), b.len()));
    }
    for (l, (x, y)) in a.iter().zip(b).enumerate() {
        if x.shape() != y.shape() {
            return Err(Error::shape(
                format!("{context} layer {l}"),
                format!("{:?}", x.shape()),
                format!("{:?}", y.shape()),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrozenVerdict {
    Pass,
    Violation {
        layer: usize,
        row: usize,
        col: usize,
        before: f64,
        after: f64,
    },
}

impl FrozenVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, FrozenVerdict::Pass)
    }
}

/// Checks that every weight covered by `accum` is bit-identical in both snapshots.
pub fn assert_frozen(before: &Network, after: &Network, accum: &AccumulatedMask) -> FrozenVerdict {
    for (l, ((wb, wa), m)) in before
        .weights
        .iter()
        .zip(&after.weights)
        .zip(&accum.layers)
        .enumerate()
    {
        for k in 0..m.len() {
            if !m.get_flat(k) {
                continue;
            }
            let (b, a) = (wb.as_slice()[k], wa.as_slice()[k]);
            if b.to_bits() != a.to_bits() {
                return FrozenVerdict::Violation {
                    layer: l,
                    row: k / m.cols(),
                    col: k % m.cols(),
                    before: b,
                    after: a,
                };
            }
        }
    }
    FrozenVerdict::Pass
}
