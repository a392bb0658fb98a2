//! Joint estimation of the reduced Laplacian `B` and the congestion source
//! matrix `S` from a price matrix `L`, by minimizing
//!
//! ```text
//! 1/2 ||B L - S||_F^2 + k1 ||O . B||_1 + k2 ||S||_1 + k3 ||S||_* - k4 log|B|
//! s.t. B > 0, off-diagonal entries of B <= 0
//! ```
//!
//! with a five-block consensus ADMM whose block updates are all closed form.

mod admm;
pub mod prox;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use admm::{admm_run, admm_solve, AdmmSettings, AdmmState, IterationRecord, StoppingRule};

use crate::error::{Error, Result};
use crate::numerics::{self, SpdFactor};
use crate::textio;

pub const RESULT_FORMAT: u32 = 1;

/// Penalty weights `(k1, k2, k3, k4)` for `||O.B||_1`, `||S||_1`,
/// `||S||_*` and `-log|B|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl Kappa {
    pub fn new(k1: f64, k2: f64, k3: f64, k4: f64) -> Result<Self> {
        let k = Kappa { k1, k2, k3, k4 };
        k.validate()?;
        Ok(k)
    }

    /// Weights tuned for the 14-bus price data.
    pub fn ieee14() -> Self {
        Kappa {
            k1: 1e-3,
            k2: 5e-4,
            k3: 1e-2,
            k4: 1e-1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.as_array().into_iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("kappa{} must be positive, got {v}", i + 1)));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.k1, self.k2, self.k3, self.k4]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.k1, self.k2, self.k3, self.k4)
    }
}

impl FromStr for Kappa {
    type Err = Error;

    /// Parses `"k1,k2,k3,k4"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "kappa needs 4 comma-separated values, got {:?}",
                s
            )));
        }
        let mut a = [0.0; 4];
        for (slot, p) in a.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::Config(format!("bad kappa entry {p:?}")))?;
        }
        Self::from_array(a).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Objective value at `(b, s)`; `+inf` when `b` is not positive definite or
/// has a positive off-diagonal entry.
pub fn objective(b: &DMatrix<f64>, s: &DMatrix<f64>, l: &DMatrix<f64>, kappa: &Kappa) -> Result<f64> {
    if b.nrows() != l.nrows() || b.ncols() != l.nrows() {
        return Err(Error::Dimension {
            context: "objective B",
            expected: l.nrows(),
            found: b.ncols(),
        });
    }
    if s.shape() != l.shape() {
        return Err(Error::Dimension {
            context: "objective S",
            expected: l.ncols(),
            found: s.ncols(),
        });
    }
    let n = b.nrows();
    let mut offdiag = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                if b[(i, j)] > 0.0 {
                    return Ok(f64::INFINITY);
                }
                offdiag += b[(i, j)].abs();
            }
        }
    }
    let factor = match SpdFactor::new(&numerics::symmetrize(b)) {
        Ok(f) => f,
        Err(_) => return Ok(f64::INFINITY),
    };
    let fit = 0.5 * (b * l - s).norm_squared();
    Ok(fit + kappa.k1 * offdiag + kappa.k2 * numerics::l1_norm(s) + kappa.k3 * numerics::nuclear_norm(s)?
        - kappa.k4 * factor.log_det())
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    /// Symmetric positive definite estimate of the reduced Laplacian.
    pub b_hat: DMatrix<f64>,
    pub s_hat: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    /// `||B1-B2||, ||B1-B3||, ||S1-S2||` at exit.
    pub consensus_gaps: [f64; 3],
    pub objective: f64,
    pub b1_asymmetry: f64,
    pub kappa: Kappa,
    pub rho: f64,
    pub history: Vec<IterationRecord>,
    /// `(iteration, objective)` samples.
    pub objective_trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub format: u32,
    pub kind: String,
    pub n: usize,
    pub t: usize,
    pub kappa: Kappa,
    pub rho: f64,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub consensus_gaps: [f64; 3],
    #[serde(with = "crate::textio::float")]
    pub objective: f64,
    pub b1_asymmetry: f64,
    pub history_len: usize,
    pub objective_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

impl RecoveryResult {
    pub fn meta(&self) -> ResultMeta {
        ResultMeta {
            format: RESULT_FORMAT,
            kind: "recovery_result".into(),
            n: self.b_hat.nrows(),
            t: self.s_hat.ncols(),
            kappa: self.kappa,
            rho: self.rho,
            converged: self.converged,
            iterations: self.iterations,
            primal_residual: self.primal_residual,
            dual_residual: self.dual_residual,
            eps_pri: self.eps_pri,
            eps_dual: self.eps_dual,
            consensus_gaps: self.consensus_gaps,
            objective: self.objective,
            b1_asymmetry: self.b1_asymmetry,
            history_len: self.history.len(),
            objective_samples: self.objective_trace.len(),
            manifest: None,
        }
    }

    /// Residual history as rows `iteration, primal, dual, eps_pri, eps_dual, rho`.
    pub fn history_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.history.len(), 6, |i, j| {
            let r = &self.history[i];
            [r.iteration as f64, r.primal, r.dual, r.eps_pri, r.eps_dual, r.rho][j]
        })
    }

    pub fn to_text(&self, manifest: Option<serde_json::Value>) -> Result<String> {
        let mut meta = self.meta();
        meta.manifest = manifest;
        let trace = DMatrix::from_fn(self.objective_trace.len(), 2, |i, j| {
            let (it, f) = self.objective_trace[i];
            if j == 0 {
                it as f64
            } else {
                f
            }
        });
        textio::render(
            &meta,
            &[
                ("b_hat", &self.b_hat),
                ("s_hat", &self.s_hat),
                ("history", &self.history_matrix()),
                ("objective", &trace),
            ],
        )
    }

    pub fn from_text(text: &str) -> Result<(ResultMeta, Self)> {
        let mut doc: textio::Document<ResultMeta> = textio::parse(text)?;
        let meta = doc.header.clone();
        if meta.format != RESULT_FORMAT || meta.kind != "recovery_result" {
            return Err(Error::Schema(format!(
                "expected recovery_result format {RESULT_FORMAT}, found {} format {}",
                meta.kind, meta.format
            )));
        }
        let b_hat = doc.take("b_hat", meta.n, meta.n)?;
        let s_hat = doc.take("s_hat", meta.n, meta.t)?;
        let hist = doc.take("history", meta.history_len, 6)?;
        let trace = doc.take("objective", meta.objective_samples, 2)?;
        let history = (0..hist.nrows())
            .map(|i| IterationRecord {
                iteration: hist[(i, 0)] as usize,
                primal: hist[(i, 1)],
                dual: hist[(i, 2)],
                eps_pri: hist[(i, 3)],
                eps_dual: hist[(i, 4)],
                rho: hist[(i, 5)],
            })
            .collect();
        let objective_trace = (0..trace.nrows())
            .map(|i| (trace[(i, 0)] as usize, trace[(i, 1)]))
            .collect();
        let result = RecoveryResult {
            b_hat,
            s_hat,
            converged: meta.converged,
            iterations: meta.iterations,
            primal_residual: meta.primal_residual,
            dual_residual: meta.dual_residual,
            eps_pri: meta.eps_pri,
            eps_dual: meta.eps_dual,
            consensus_gaps: meta.consensus_gaps,
            objective: meta.objective,
            b1_asymmetry: meta.b1_asymmetry,
            kappa: meta.kappa,
            rho: meta.rho,
            history,
            objective_trace,
        };
        Ok((meta, result))
    }

    pub fn save(&self, path: impl AsRef<Path>, manifest: Option<serde_json::Value>) -> Result<()> {
        std::fs::write(path, self.to_text(manifest)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_text(&std::fs::read_to_string(path)?)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_parsing_and_validation() {
        let k: Kappa = "1e-3, 5e-4,1e-2,0.1".parse().unwrap();
        assert_eq!(k, Kappa::ieee14());
        assert_eq!(k.to_string().parse::<Kappa>().unwrap(), k);
        assert!("1,2,3".parse::<Kappa>().is_err());
        assert!("1,2,3,0".parse::<Kappa>().is_err());
        assert!(Kappa::new(1.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn objective_is_infinite_outside_the_feasible_set() {
        let l = DMatrix::from_element(2, 3, 1.0);
        let s = DMatrix::zeros(2, 3);
        let k = Kappa::ieee14();
        let bad_sign = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 2.0]);
        assert_eq!(objective(&bad_sign, &s, &l, &k).unwrap(), f64::INFINITY);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0]);
        assert_eq!(objective(&indefinite, &s, &l, &k).unwrap(), f64::INFINITY);
        let eye = DMatrix::<f64>::identity(2, 2);
        // 1/2 * 6 + 0 - 0.1 * log 1
        assert!((objective(&eye, &s, &l, &k).unwrap() - 3.0).abs() < 1e-12);
    }
}
