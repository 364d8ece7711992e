//! Task datasets and synthetic task-sequence generators.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{self, stream};
use crate::TaskId;

/// Inputs as rows plus one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape("split labels", inputs.rows(), labels.len()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Split {
        Split {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn map_inputs(&self, f: impl Fn(&[f64], &mut [f64])) -> Split {
        let mut inputs = Matrix::zeros(self.inputs.rows(), self.inputs.cols());
        for r in 0..self.inputs.rows() {
            f(self.inputs.row(r), inputs.row_mut(r));
        }
        Split {
            inputs,
            labels: self.labels.clone(),
        }
    }

    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 1000,
            val: 200,
            test: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: TaskId,
    pub input_dim: usize,
    pub num_classes: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl TaskDataset {
    pub fn new(task_id: TaskId, num_classes: usize, train: Split, val: Split, test: Split) -> Result<Self> {
        let ds = Self {
            task_id,
            input_dim: train.inputs.cols(),
            num_classes,
            train,
            val,
            test,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if s.is_empty() {
                return Err(Error::InvalidArgument(format!("task {} {name} split is empty", self.task_id)));
            }
            if s.inputs.cols() != self.input_dim {
                return Err(Error::shape(format!("task {} {name} width", self.task_id), self.input_dim, s.inputs.cols()));
            }
            if let Some(&y) = s.labels.iter().find(|&&y| y >= self.num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: self.num_classes,
                });
            }
            if !s.inputs.is_finite() {
                return Err(Error::NonFinite(format!("task {} {name} inputs", self.task_id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    fn map_inputs(&self, task_id: TaskId, f: impl Fn(&[f64], &mut [f64]) + Copy) -> TaskDataset {
        TaskDataset {
            task_id,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            train: self.train.map_inputs(f),
            val: self.val.map_inputs(f),
            test: self.test.map_inputs(f),
        }
    }
}

/// Root-mean-square within-class standard deviation per input coordinate.
pub const CLUSTER_STD: f64 = 0.25;
/// Axis `j` of a cluster's noise frame has spread proportional to `(j + 1)^-SPECTRAL_DECAY`.
pub const SPECTRAL_DECAY: f64 = 0.5;
/// Minimum distance between any two class means, in units of `CLUSTER_STD`.
pub const MIN_SEPARATION: f64 = 6.0;

/// Geometry knobs of the synthetic clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ClusterShape {
    /// Distance between the closest pair of class means, in units of `CLUSTER_STD`.
    pub separation: f64,
}

impl Default for ClusterShape {
    fn default() -> Self {
        Self { separation: MIN_SEPARATION }
    }
}

impl ClusterShape {
    pub fn validate(&self) -> Result<()> {
        if !(self.separation.is_finite() && self.separation >= MIN_SEPARATION) {
            return Err(Error::InvalidArgument(format!(
                "cluster separation {} must be finite and at least {MIN_SEPARATION}",
                self.separation
            )));
        }
        Ok(())
    }
}

/// Gaussian class clusters whose closest pair of means sits exactly
/// `MIN_SEPARATION` standard deviations apart.
pub fn gen_base_task(dim: usize, classes: usize, sizes: SplitSizes, seed: u64) -> Result<TaskDataset> {
    gen_base_task_with(dim, classes, sizes, ClusterShape::default(), seed)
}

pub fn gen_base_task_with(dim: usize, classes: usize, sizes: SplitSizes, shape: ClusterShape, seed: u64) -> Result<TaskDataset> {
    shape.validate()?;
    if dim < classes {
        return Err(Error::InvalidArgument(format!(
            "input dimension {dim} is smaller than the class count {classes}"
        )));
    }
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let mut r = rng::rng(seed, stream::DATA, 0);
    let axes = random_orthonormal(dim, &mut r);
    let mut spread: Vec<f64> = (0..dim).map(|j| ((j + 1) as f64).powf(-SPECTRAL_DECAY)).collect();
    let rms = (spread.iter().map(|s| s * s).sum::<f64>() / dim as f64).sqrt();
    spread.iter_mut().for_each(|s| *s /= rms);
    let embed = |latent: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; dim];
        for (a, z) in axes.iter().zip(latent) {
            x.iter_mut().zip(a).for_each(|(xv, av)| *xv += z * av);
        }
        x
    };
    let mut means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let latent: Vec<f64> = spread.iter().map(|s| s * r.sample::<f64, _>(StandardNormal)).collect();
            embed(&latent)
        })
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            let d: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let scale = shape.separation * CLUSTER_STD / min_dist;
    for m in &mut means {
        for v in m.iter_mut() {
            *v *= scale;
        }
    }
    let draw = |n: usize, r: &mut rng::Rng| -> Split {
        let mut values = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % classes;
            labels.push(y);
            let latent: Vec<f64> = spread.iter().map(|s| CLUSTER_STD * s * r.sample::<f64, _>(StandardNormal)).collect();
            values.extend(means[y].iter().zip(embed(&latent)).map(|(mu, z)| mu + z));
        }
        // interleaved labels, then shuffled so splits carry no ordering
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(r);
        let inputs = Matrix::new(n, dim, values).expect("gaussian samples are finite");
        Split {
            inputs: inputs.select_rows(&order),
            labels: order.iter().map(|&i| labels[i]).collect(),
        }
    };
    let train = draw(sizes.train, &mut r);
    let val = draw(sizes.val, &mut r);
    let test = draw(sizes.test, &mut r);
    TaskDataset::new(0, classes, train, val, test)
}

/// Haar-ish random orthonormal frame by Gram-Schmidt on Gaussian vectors.
fn random_orthonormal(dim: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while out.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        for _ in 0..2 {
            for q in &out {
                let p: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

/// Coordinate-permuted copies of one base problem; task 0 is unpermuted.
pub fn gen_dissimilar(n_tasks: usize, dim: usize, classes: usize, sizes: SplitSizes, seed: u64) -> Result<Vec<TaskDataset>> {
    gen_dissimilar_with(n_tasks, dim, classes, sizes, ClusterShape::default(), seed)
}

pub fn gen_dissimilar_with(
    n_tasks: usize,
    dim: usize,
    classes: usize,
    sizes: SplitSizes,
    shape: ClusterShape,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("need at least one task".into()));
    }
    let base = gen_base_task_with(dim, classes, sizes, shape, seed)?;
    let mut out = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let perm = if t == 0 {
            (0..dim).collect::<Vec<_>>()
        } else {
            random_permutation(dim, seed, t as u64)
        };
        out.push(base.map_inputs(t as TaskId, |src, dst| {
            for (d, &p) in dst.iter_mut().zip(&perm) {
                *d = src[p];
            }
        }));
    }
    Ok(out)
}

pub fn random_permutation(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng::rng(seed, stream::PERMUTATION, index));
    p
}

/// Small random rotation plus translation of the input space.
#[derive(Debug, Clone)]
struct Affine {
    /// Disjoint coordinate pairs and the rotation angle applied in each plane.
    planes: Vec<(usize, usize, f64)>,
    shift: Vec<f64>,
}

impl Affine {
    fn random(dim: usize, noise: f64, seed: u64, index: u64) -> Self {
        let mut r = rng::rng(seed, stream::AFFINE, index);
        let mut coords: Vec<usize> = (0..dim).collect();
        coords.shuffle(&mut r);
        let mut planes = Vec::with_capacity(dim / 2);
        for pair in coords.chunks_exact(2) {
            let angle = if noise > 0.0 { r.random_range(-noise..=noise) } else { 0.0 };
            planes.push((pair[0], pair[1], angle));
        }
        // translation measured in cluster standard deviations
        let shift = (0..dim)
            .map(|_| if noise > 0.0 { CLUSTER_STD * r.random_range(-noise..=noise) } else { 0.0 })
            .collect();
        Self { planes, shift }
    }

    fn apply(&self, src: &[f64], dst: &mut [f64]) {
        dst.copy_from_slice(src);
        for &(i, j, a) in &self.planes {
            if a == 0.0 {
                continue;
            }
            let (c, s) = (a.cos(), a.sin());
            let (xi, xj) = (src[i], src[j]);
            dst[i] = c * xi - s * xj;
            dst[j] = s * xi + c * xj;
        }
        for (d, b) in dst.iter_mut().zip(&self.shift) {
            *d += b;
        }
    }
}

/// Affine-perturbed variants of one base problem. Rotation angles (radians)
/// and shifts (cluster standard deviations) are bounded by `noise_scale`.
pub fn gen_similar(
    n_tasks: usize,
    dim: usize,
    classes: usize,
    sizes: SplitSizes,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    gen_similar_with(n_tasks, dim, classes, sizes, noise_scale, ClusterShape::default(), seed)
}

pub fn gen_similar_with(
    n_tasks: usize,
    dim: usize,
    classes: usize,
    sizes: SplitSizes,
    noise_scale: f64,
    shape: ClusterShape,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("need at least one task".into()));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise scale {noise_scale} must be non-negative")));
    }
    let base = gen_base_task_with(dim, classes, sizes, shape, seed)?;
    Ok((0..n_tasks)
        .map(|t| {
            let affine = Affine::random(dim, noise_scale, seed, t as u64);
            base.map_inputs(t as TaskId, |src, dst| affine.apply(src, dst))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFamily {
    Similar,
    Dissimilar,
}

#[derive(Debug, Clone)]
pub struct MixedSequence {
    pub tasks: Vec<TaskDataset>,
    pub families: Vec<TaskFamily>,
}

impl MixedSequence {
    /// Ground truth for the ordered pair (earlier, later).
    pub fn pair_is_similar(&self, a: TaskId, b: TaskId) -> bool {
        a != b
            && self.families[a as usize] == TaskFamily::Similar
            && self.families[b as usize] == TaskFamily::Similar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct MixedSpec {
    pub n_similar: usize,
    pub n_dissimilar: usize,
    pub interleave_seed: u64,
    pub dim: usize,
    pub classes: usize,
    pub sizes: SplitSizes,
    pub noise_scale: f64,
    #[serde(default)]
    pub shape: ClusterShape,
    pub seed: u64,
}

/// Similar-family and permuted tasks drawn from two independent base
/// problems, interleaved by `interleave_seed`.
pub fn gen_mixed(spec: &MixedSpec) -> Result<MixedSequence> {
    let mut tagged: Vec<(TaskFamily, TaskDataset)> = Vec::new();
    if spec.n_similar > 0 {
        let sim_seed = rng::derive_seed(spec.seed, stream::DATA, 1);
        for t in gen_similar_with(spec.n_similar, spec.dim, spec.classes, spec.sizes, spec.noise_scale, spec.shape, sim_seed)? {
            tagged.push((TaskFamily::Similar, t));
        }
    }
    if spec.n_dissimilar > 0 {
        let dis_seed = rng::derive_seed(spec.seed, stream::DATA, 2);
        for t in gen_dissimilar_with(spec.n_dissimilar, spec.dim, spec.classes, spec.sizes, spec.shape, dis_seed)? {
            tagged.push((TaskFamily::Dissimilar, t));
        }
    }
    tagged.shuffle(&mut rng::rng(spec.interleave_seed, stream::INTERLEAVE, 0));
    let mut tasks = Vec::with_capacity(tagged.len());
    let mut families = Vec::with_capacity(tagged.len());
    for (i, (fam, mut ds)) in tagged.into_iter().enumerate() {
        ds.task_id = i as TaskId;
        tasks.push(ds);
        families.push(fam);
    }
    Ok(MixedSequence { tasks, families })
}
