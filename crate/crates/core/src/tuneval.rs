//! Choosing the penalty weights by masked-entry reconstruction, and scoring
//! a recovered Laplacian against the true one.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketsim::{stream_rng, STREAM_MASKS};
use crate::numerics::{self, SpdFactor};
use crate::recovery::{admm_solve, AdmmSettings, Kappa};
use crate::tolerances;

/// Candidate values for each weight; the search runs over their Cartesian
/// product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaGrid {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub k3: Vec<f64>,
    pub k4: Vec<f64>,
}

impl KappaGrid {
    /// `center` scaled by every factor, independently per weight.
    pub fn around(center: &Kappa, factors: &[f64]) -> Self {
        let axis = |v: f64| factors.iter().map(|f| v * f).collect::<Vec<_>>();
        KappaGrid {
            k1: axis(center.k1),
            k2: axis(center.k2),
            k3: axis(center.k3),
            k4: axis(center.k4),
        }
    }

    pub fn single(k: &Kappa) -> Self {
        Self::around(k, &[1.0])
    }

    pub fn len(&self) -> usize {
        self.k1.len() * self.k2.len() * self.k3.len() * self.k4.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidates in lexicographic order, `k4` varying fastest.
    pub fn candidates(&self) -> Result<Vec<Kappa>> {
        let mut out = Vec::with_capacity(self.len());
        for &a in &self.k1 {
            for &b in &self.k2 {
                for &c in &self.k3 {
                    for &d in &self.k4 {
                        out.push(Kappa::new(a, b, c, d)?);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let grid: KappaGrid = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub grid: KappaGrid,
    /// Fraction of price entries hidden per repeat.
    pub mask_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
    pub admm: AdmmSettings,
}

impl TuningConfig {
    pub fn new(grid: KappaGrid, seed: u64) -> Self {
        TuningConfig {
            grid,
            mask_fraction: 0.10,
            repeats: 10,
            seed,
            admm: {
                let mut a = AdmmSettings::default();
                a.stop.max_iter = tolerances::TUNING_MAX_ITER;
                a.objective_every = 0;
                a
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("kappa grid has no candidates".into()));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::Config(format!(
                "mask fraction must lie in (0, 1), got {}",
                self.mask_fraction
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        self.grid.candidates()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub kappa: Kappa,
    /// Mean over repeats of the masked-entry mean squared error; `inf` if any
    /// run diverged.
    pub mse: f64,
    pub per_repeat: Vec<f64>,
    /// Repeats whose ADMM run met the stopping rule.
    pub converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub best: Kappa,
    /// One entry per candidate, in grid order.
    pub scores: Vec<CandidateScore>,
    pub masked_entries: usize,
}

impl TuningReport {
    /// 1-based rank of `kappa` by ascending error, if it is a candidate.
    pub fn rank_of(&self, kappa: &Kappa) -> Option<usize> {
        let target = self.scores.iter().position(|s| s.kappa == *kappa)?;
        let mine = self.scores[target].mse;
        Some(
            1 + self
                .scores
                .iter()
                .enumerate()
                .filter(|(i, s)| s.mse < mine || (s.mse == mine && *i < target))
                .count(),
        )
    }

    pub fn ranked(&self) -> Vec<&CandidateScore> {
        let mut v: Vec<&CandidateScore> = self.scores.iter().collect();
        v.sort_by(|a, b| a.mse.total_cmp(&b.mse));
        v
    }
}

/// Draws `repeats` independent masks of `round(fraction * N * T)` entries
/// (column-major linear indices, sorted).
pub fn draw_masks(shape: (usize, usize), fraction: f64, repeats: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let total = shape.0 * shape.1;
    let k = (fraction * total as f64).round() as usize;
    if k == 0 || k >= total {
        return Err(Error::Config(format!(
            "mask fraction {fraction} hides {k} of {total} entries"
        )));
    }
    let mut rng = stream_rng(seed, STREAM_MASKS);
    Ok((0..repeats)
        .map(|_| {
            let mut m = index::sample(&mut rng, total, k).into_vec();
            m.sort_unstable();
            m
        })
        .collect())
}

/// Mean squared error of `B^-1 S` against `l_o` on the masked entries.
pub fn masked_error(b_hat: &DMatrix<f64>, s_hat: &DMatrix<f64>, l_o: &DMatrix<f64>, mask: &[usize]) -> Result<f64> {
    let recon = SpdFactor::new(b_hat)?.solve(s_hat)?;
    let sum: f64 = mask
        .iter()
        .map(|&i| (recon.as_slice()[i] - l_o.as_slice()[i]).powi(2))
        .sum();
    Ok(sum / mask.len() as f64)
}

fn score_run(l_o: &DMatrix<f64>, mask: &[usize], kappa: &Kappa, admm: &AdmmSettings) -> Result<(f64, bool)> {
    let mut masked = l_o.clone();
    for &i in mask {
        masked.as_mut_slice()[i] = 0.0;
    }
    match admm_solve(&masked, kappa, admm) {
        Ok(r) => match masked_error(&r.b_hat, &r.s_hat, l_o, mask) {
            Ok(e) if e.is_finite() => Ok((e, r.converged)),
            Ok(_) | Err(Error::NotPositiveDefinite(_)) | Err(Error::NonFinite(_)) => {
                Ok((f64::INFINITY, false))
            }
            Err(e) => Err(e),
        },
        Err(Error::Diverged { iteration, .. }) => {
            log::warn!("tune kappa={kappa} diverged at iteration={iteration}");
            Ok((f64::INFINITY, false))
        }
        Err(e) => Err(e),
    }
}

/// Grid search: every candidate sees the same masks, hidden entries are
/// zeroed, the problem is solved, and the hidden prices are predicted as
/// entries of `B^-1 S`. Returns the candidate with the lowest mean error.
pub fn tune_kappa(l_o: &DMatrix<f64>, cfg: &TuningConfig) -> Result<TuningReport> {
    cfg.validate()?;
    if l_o.ncols() < 2 || l_o.nrows() < 2 {
        return Err(Error::Domain(format!(
            "price matrix {}x{} is too small to tune on",
            l_o.nrows(),
            l_o.ncols()
        )));
    }
    let masks = draw_masks(l_o.shape(), cfg.mask_fraction, cfg.repeats, cfg.seed)?;
    let candidates = cfg.grid.candidates()?;
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..masks.len()).map(move |r| (c, r)))
        .collect();
    let results: Vec<(f64, bool)> = jobs
        .par_iter()
        .map(|&(c, r)| score_run(l_o, &masks[r], &candidates[c], &cfg.admm))
        .collect::<Result<_>>()?;

    let scores: Vec<CandidateScore> = candidates
        .iter()
        .enumerate()
        .map(|(c, kappa)| {
            let runs = &results[c * masks.len()..(c + 1) * masks.len()];
            let per_repeat: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let mse = per_repeat.iter().sum::<f64>() / per_repeat.len() as f64;
            log::info!("tune kappa={kappa} mse={mse:.6e}");
            CandidateScore {
                kappa: *kappa,
                mse,
                per_repeat,
                converged: runs.iter().filter(|r| r.1).count(),
            }
        })
        .collect();
    let best = scores
        .iter()
        .min_by(|a, b| a.mse.total_cmp(&b.mse))
        .map(|s| s.kappa)
        .expect("grid validated nonempty");
    Ok(TuningReport {
        best,
        scores,
        masked_entries: masks[0].len(),
    })
}

/// Support and magnitude agreement between an estimated and a true Laplacian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `||A - B||_F / (||A||_F + ||B||_F)` on the unit-max scaled matrices.
    pub frobenius_error: f64,
    /// Positive off-diagonal or non-positive diagonal entries of the estimate.
    pub sign_violations: usize,
    /// Edges counted once per unordered bus pair.
    pub true_edges: usize,
    pub estimated_edges: usize,
    pub true_positives: usize,
    pub s_hat_rank: usize,
    /// Fraction of nonzero entries of the source estimate.
    pub s_hat_density: f64,
}

/// Divides by the largest absolute entry (zero matrices are left as is).
pub fn unit_max(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.amax();
    if m > 0.0 {
        x / m
    } else {
        x.clone()
    }
}

fn edge_set(x: &DMatrix<f64>, tau: f64) -> Vec<(usize, usize)> {
    let n = x.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if x[(i, j)].abs().max(x[(j, i)].abs()) > tau {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn evaluate(b_hat: &DMatrix<f64>, s_hat: &DMatrix<f64>, b_true: &DMatrix<f64>, tau: f64) -> Result<EvalReport> {
    if b_hat.shape() != b_true.shape() || !b_hat.is_square() {
        return Err(Error::Dimension {
            context: "evaluate",
            expected: b_true.nrows(),
            found: b_hat.nrows(),
        });
    }
    if s_hat.nrows() != b_hat.nrows() {
        return Err(Error::Dimension {
            context: "evaluate S",
            expected: b_hat.nrows(),
            found: s_hat.nrows(),
        });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")));
    }
    let a = unit_max(b_hat);
    let b = unit_max(b_true);
    let est = edge_set(&a, tau);
    let truth = edge_set(&b, tau);
    let tp = est.iter().filter(|e| truth.contains(e)).count();
    let precision = if est.is_empty() {
        if truth.is_empty() { 1.0 } else { 0.0 }
    } else {
        tp as f64 / est.len() as f64
    };
    let recall = if truth.is_empty() { 1.0 } else { tp as f64 / truth.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let denom = a.norm() + b.norm();
    let frobenius_error = if denom > 0.0 { (&a - &b).norm() / denom } else { 0.0 };
    let n = a.nrows();
    let mut sign_violations = 0;
    for j in 0..n {
        for i in 0..n {
            let v = a[(i, j)];
            if (i == j && v <= 0.0) || (i != j && v > tolerances::SYMMETRY) {
                sign_violations += 1;
            }
        }
    }
    let s_hat_rank = if s_hat.is_empty() {
        0
    } else {
        numerics::numerical_rank(s_hat, tolerances::RANK)?
    };
    let nonzero = s_hat.iter().filter(|v| **v != 0.0).count();
    Ok(EvalReport {
        tau,
        precision,
        recall,
        f1,
        frobenius_error,
        sign_violations,
        true_edges: truth.len(),
        estimated_edges: est.len(),
        true_positives: tp,
        s_hat_rank,
        s_hat_density: if s_hat.is_empty() { 0.0 } else { nonzero as f64 / s_hat.len() as f64 },
    })
}
