//! Transfer metrics and an exact checker for the forward/backward error
//! bounds on finite input spaces.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Lower-triangular matrix of accuracies; `row(t)[i]` is task `i` after learning `t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the row for the next task; it must have one entry per learned task.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::shape("accuracy row", self.rows.len() + 1, row.len()));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.rows[t][i]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `A[t][i]` for `t ≥ i`.
    pub fn trajectory(&self, i: usize) -> Vec<f64> {
        self.rows[i..].iter().map(|r| r[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
}

/// ACC, BWT and FWT. FWT needs one baseline accuracy per task; pass `None`
/// to skip it.
pub fn compute_metrics(acc: &AccuracyMatrix, one_baseline: Option<&[f64]>) -> Result<Metrics> {
    let t = acc.tasks();
    if t == 0 {
        return Err(Error::InvalidArgument("empty accuracy matrix".into()));
    }
    let last = acc.row(t - 1);
    let mean_acc = last.iter().sum::<f64>() / t as f64;
    if t == 1 {
        return Ok(Metrics {
            acc: mean_acc,
            bwt: None,
            fwt: None,
        });
    }
    let denom = (t - 1) as f64;
    let bwt = (0..t - 1).map(|i| last[i] - acc.get(i, i)).sum::<f64>() / denom;
    let fwt = match one_baseline {
        Some(base) => {
            if base.len() != t {
                return Err(Error::shape("baseline accuracies", t, base.len()));
            }
            Some((1..t).map(|k| acc.get(k, k) - base[k]).sum::<f64>() / denom)
        }
        None => None,
    };
    Ok(Metrics {
        acc: mean_acc,
        bwt: Some(bwt),
        fwt,
    })
}

/// Forward and backward negative-transfer margins; positive means harmful.
pub fn fnm_bnm(err_with: f64, err_without: f64, err_before: f64, err_after: f64) -> (f64, f64) {
    (err_with - err_without, err_after - err_before)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiscreteTaskPair {
    pub m_i: Vec<f64>,
    pub m_t: Vec<f64>,
    pub l_i: Vec<f64>,
    pub l_t: Vec<f64>,
    pub h: Vec<f64>,
}

impl DiscreteTaskPair {
    pub fn validate(&self) -> Result<()> {
        let n = self.m_i.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty input space".into()));
        }
        for (name, v) in [("m_t", &self.m_t), ("l_i", &self.l_i), ("l_t", &self.l_t), ("h", &self.h)] {
            if v.len() != n {
                return Err(Error::shape(name, n, v.len()));
            }
        }
        for (name, m) in [("m_i", &self.m_i), ("m_t", &self.m_t)] {
            if m.iter().any(|p| !(*p >= 0.0)) || (m.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("{name} is not a probability vector")));
            }
        }
        for (name, v) in [("l_i", &self.l_i), ("l_t", &self.l_t), ("h", &self.h)] {
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidArgument(format!("{name} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Exchanges the roles of the two tasks.
    pub fn swapped(&self) -> Self {
        Self {
            m_i: self.m_t.clone(),
            m_t: self.m_i.clone(),
            l_i: self.l_t.clone(),
            l_t: self.l_i.clone(),
            h: self.h.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundTerms {
    pub lhs: f64,
    pub rhs: f64,
    /// Source-task error of `h`.
    pub source_error: f64,
    pub density_gap: f64,
    pub labeler_gap: f64,
}

impl BoundTerms {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + 1e-12
    }
}

fn weighted_abs(m: &[f64], a: &[f64], b: &[f64]) -> f64 {
    m.iter().zip(a).zip(b).map(|((w, x), y)| w * (x - y).abs()).sum()
}

/// Bounds the target error of `h` by the source error plus the density gap
/// and the smaller of the two labeler disagreements.
pub fn transfer_bound(pair: &DiscreteTaskPair, direction: Direction) -> Result<BoundTerms> {
    pair.validate()?;
    let p = match direction {
        Direction::Forward => pair.clone(),
        Direction::Backward => pair.swapped(),
    };
    let lhs = weighted_abs(&p.m_t, &p.h, &p.l_t);
    let source_error = weighted_abs(&p.m_i, &p.h, &p.l_i);
    let density_gap: f64 = p.m_i.iter().zip(&p.m_t).map(|(a, b)| (a - b).abs()).sum();
    let labeler_gap = weighted_abs(&p.m_i, &p.l_i, &p.l_t).min(weighted_abs(&p.m_t, &p.l_i, &p.l_t));
    Ok(BoundTerms {
        lhs,
        rhs: source_error + density_gap + labeler_gap,
        source_error,
        density_gap,
        labeler_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundCase {
    pub trial: usize,
    pub direction: Direction,
    pub terms: BoundTerms,
    pub pair: DiscreteTaskPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundReport {
    pub trials: usize,
    pub seed: u64,
    pub forward_violations: usize,
    pub backward_violations: usize,
    pub max_slack: f64,
    pub min_slack: f64,
    pub equality_cases: usize,
    pub tightest: Option<BoundCase>,
    pub violations: Vec<BoundCase>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.forward_violations == 0 && self.backward_violations == 0
    }
}

fn random_density(n: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let mut m: Vec<f64> = {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    };
    let residual = 1.0 - m.iter().sum::<f64>();
    m[0] += residual;
    m
}

pub fn random_pair(rng: &mut rng::Rng) -> DiscreteTaskPair {
    let n = rng.random_range(2..=16);
    let bits = |rng: &mut rng::Rng| (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    let m_i = random_density(n, rng);
    let m_t = random_density(n, rng);
    let l_i = bits(rng);
    let l_t = bits(rng);
    let h = (0..n).map(|_| rng.random::<f64>()).collect();
    DiscreteTaskPair { m_i, m_t, l_i, l_t, h }
}

/// Checks the bound in both directions on `trials` random pairs.
pub fn verify_bound(trials: usize, seed: u64) -> Result<BoundReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let mut report = BoundReport {
        trials,
        seed,
        forward_violations: 0,
        backward_violations: 0,
        max_slack: f64::NEG_INFINITY,
        min_slack: f64::INFINITY,
        equality_cases: 0,
        tightest: None,
        violations: Vec::new(),
    };
    for trial in 0..trials {
        let mut r = rng::rng(seed, stream::BOUND_TRIAL, trial as u64);
        let pair = random_pair(&mut r);
        for direction in [Direction::Forward, Direction::Backward] {
            let terms = transfer_bound(&pair, direction)?;
            let slack = terms.slack();
            report.max_slack = report.max_slack.max(slack);
            if slack.abs() <= 1e-12 {
                report.equality_cases += 1;
            }
            let case = || BoundCase {
                trial,
                direction,
                terms,
                pair: pair.clone(),
            };
            if slack < report.min_slack {
                report.min_slack = slack;
                report.tightest = Some(case());
            }
            if !terms.holds() {
                match direction {
                    Direction::Forward => report.forward_violations += 1,
                    Direction::Backward => report.backward_violations += 1,
                }
                report.violations.push(case());
            }
        }
    }
    Ok(report)
}
