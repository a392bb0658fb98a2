//! Consensus ADMM over the split variables `(B1, B2, B3, S1, S2)`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::prox;
use super::{objective, Kappa, RecoveryResult};
use crate::error::{Error, Result};
use crate::numerics::{self, SpdFactor};
use crate::tolerances;

/// Absolute/relative stopping thresholds in the usual ADMM form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            eps_abs: tolerances::ADMM_EPS_ABS,
            eps_rel: tolerances::ADMM_EPS_REL,
            max_iter: tolerances::ADMM_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    pub rho: f64,
    pub stop: StoppingRule,
    /// Residual balancing: double/halve rho when one residual dominates
    /// the other by 10x.
    pub adaptive_rho: bool,
    /// Evaluate the objective every this many iterations (0 disables).
    pub objective_every: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        AdmmSettings {
            rho: 1e3,
            stop: StoppingRule::default(),
            adaptive_rho: false,
            objective_every: 100,
        }
    }
}

impl AdmmSettings {
    pub fn with_rho(rho: f64) -> Self {
        AdmmSettings {
            rho,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub rho: f64,
}

impl IterationRecord {
    pub fn converged(&self) -> bool {
        self.primal <= self.eps_pri && self.dual <= self.eps_dual
    }
}

/// Iterates, multipliers and the cached factorization of `LL' + 2 rho I`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub b3: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub y12: DMatrix<f64>,
    pub y13: DMatrix<f64>,
    pub y: DMatrix<f64>,
    rho: f64,
    iteration: usize,
    gram: DMatrix<f64>,
    factor: SpdFactor,
    pub history: Vec<IterationRecord>,
}

fn frob2(x: &DMatrix<f64>) -> f64 {
    x.norm_squared()
}

fn dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.zip_fold(b, 0.0, |acc, x, y| acc + (x - y) * (x - y)).sqrt()
}

/// Stores `next` in `slot`, returning `||next - old||_F^2`.
fn replace(slot: &mut DMatrix<f64>, next: DMatrix<f64>) -> f64 {
    let moved = dist(slot, &next).powi(2);
    *slot = next;
    moved
}

impl AdmmState {
    /// Identity B-blocks, zero S-blocks and multipliers.
    pub fn new(l: &DMatrix<f64>, rho: f64) -> Result<Self> {
        let (n, t) = l.shape();
        if n == 0 || t == 0 {
            return Err(Error::Domain(format!("price matrix must be nonempty, got {n}x{t}")));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!("rho must be positive, got {rho}")));
        }
        if l.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("price matrix"));
        }
        let gram = l * l.transpose();
        let factor = Self::factorize(&gram, rho)?;
        let eye = DMatrix::identity(n, n);
        Ok(AdmmState {
            b1: eye.clone(),
            b2: eye.clone(),
            b3: eye,
            s1: DMatrix::zeros(n, t),
            s2: DMatrix::zeros(n, t),
            y12: DMatrix::zeros(n, n),
            y13: DMatrix::zeros(n, n),
            y: DMatrix::zeros(n, t),
            rho,
            iteration: 0,
            gram,
            factor,
            history: Vec::new(),
        })
    }

    fn factorize(gram: &DMatrix<f64>, rho: f64) -> Result<SpdFactor> {
        let n = gram.nrows();
        SpdFactor::new(&(gram + DMatrix::identity(n, n) * (2.0 * rho)))
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn set_rho(&mut self, rho: f64) -> Result<()> {
        if rho != self.rho {
            self.factor = Self::factorize(&self.gram, rho)?;
            self.rho = rho;
        }
        Ok(())
    }

    /// `B1 = (S2 L' + rho B2 + rho B3 - Y12 - Y13)(LL' + 2 rho I)^-1`.
    pub fn update_b1(&mut self, l: &DMatrix<f64>) -> Result<()> {
        let mut rhs = &self.s2 * l.transpose();
        rhs += (&self.b2 + &self.b3) * self.rho;
        rhs -= &self.y12;
        rhs -= &self.y13;
        // The system matrix is symmetric, so solve from the left on rhs'.
        self.b1 = self.factor.solve(&rhs.transpose())?.transpose();
        Ok(())
    }

    pub fn update_s1(&mut self, kappa: &Kappa) {
        let (inv, level) = (1.0 / self.rho, kappa.k2 / self.rho);
        self.s1 = self
            .s2
            .zip_map(&self.y, |s, y| prox::soft_threshold(s - inv * y, level));
    }

    /// The `update_b2`, `update_b3` and `update_s2` steps return the squared
    /// Frobenius norm of the change in their block.
    pub fn update_b2(&mut self, kappa: &Kappa) -> f64 {
        let inv = 1.0 / self.rho;
        let arg = self.b1.zip_map(&self.y12, |b, y| b + inv * y);
        replace(&mut self.b2, prox::offdiag_nonpositive_prox(&arg, kappa.k1 / self.rho))
    }

    pub fn update_b3(&mut self, kappa: &Kappa) -> Result<f64> {
        let inv = 1.0 / self.rho;
        let arg = self.b1.zip_map(&self.y13, |b, y| b + inv * y);
        Ok(replace(&mut self.b3, prox::logdet_prox(&arg, kappa.k4 / self.rho)?))
    }

    /// `S2 = P_k3[B1 L + rho S1 + Y] / (rho + 1)`.
    pub fn update_s2(&mut self, l: &DMatrix<f64>, kappa: &Kappa) -> Result<f64> {
        let mut arg = &self.b1 * l;
        let rho = self.rho;
        arg.zip_zip_apply(&self.s1, &self.y, |a, s, y| *a += rho * s + y);
        let mut next = prox::svt(&arg, kappa.k3)?;
        next /= rho + 1.0;
        Ok(replace(&mut self.s2, next))
    }

    pub fn update_duals(&mut self) {
        let r = self.rho;
        self.y12.zip_zip_apply(&self.b1, &self.b2, |y, a, b| *y += r * (a - b));
        self.y13.zip_zip_apply(&self.b1, &self.b3, |y, a, b| *y += r * (a - b));
        self.y.zip_zip_apply(&self.s1, &self.s2, |y, a, b| *y += r * (a - b));
    }

    /// Norms of the three consensus gaps `(B1-B2, B1-B3, S1-S2)`.
    pub fn consensus_gaps(&self) -> [f64; 3] {
        [
            dist(&self.b1, &self.b2),
            dist(&self.b1, &self.b3),
            dist(&self.s1, &self.s2),
        ]
    }

    /// One full iteration; returns the residual record.
    pub fn step(&mut self, l: &DMatrix<f64>, kappa: &Kappa, stop: &StoppingRule) -> Result<IterationRecord> {
        let (n, t) = l.shape();
        self.update_b1(l)?;
        self.update_s1(kappa);
        let moved = self.update_b2(kappa) + self.update_b3(kappa)? + self.update_s2(l, kappa)?;
        self.update_duals();
        self.iteration += 1;

        let [g12, g13, gs] = self.consensus_gaps();
        let primal = (g12 * g12 + g13 * g13 + gs * gs).sqrt();
        let dual = self.rho * moved.sqrt();
        let ax = (2.0 * frob2(&self.b1) + frob2(&self.s1)).sqrt();
        let bz = (frob2(&self.b2) + frob2(&self.b3) + frob2(&self.s2)).sqrt();
        let y_sum = self.y12.zip_fold(&self.y13, 0.0, |acc, a, b| acc + (a + b) * (a + b));
        let aty = (y_sum + frob2(&self.y)).sqrt();
        let p = (2 * n * n + n * t) as f64;
        let q = (n * n + n * t) as f64;
        let record = IterationRecord {
            iteration: self.iteration,
            primal,
            dual,
            eps_pri: p.sqrt() * stop.eps_abs + stop.eps_rel * ax.max(bz),
            eps_dual: q.sqrt() * stop.eps_abs + stop.eps_rel * aty,
            rho: self.rho,
        };
        if !(primal.is_finite() && dual.is_finite() && record.eps_pri.is_finite() && record.eps_dual.is_finite()) {
            return Err(Error::Diverged {
                iteration: self.iteration,
                dump: self.dump(),
            });
        }
        self.history.push(record);
        Ok(record)
    }

    /// Block norms and the last few residual records, for diagnostics.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rho={} iteration={}", self.rho, self.iteration);
        for (name, m) in [
            ("B1", &self.b1),
            ("B2", &self.b2),
            ("B3", &self.b3),
            ("S1", &self.s1),
            ("S2", &self.s2),
            ("Y12", &self.y12),
            ("Y13", &self.y13),
            ("Y", &self.y),
        ] {
            let finite = m.iter().all(|v| v.is_finite());
            let _ = writeln!(out, "  {name}: frob={:.6e} finite={finite}", m.norm());
        }
        for r in self.history.iter().rev().take(5).rev() {
            let _ = writeln!(
                out,
                "  iter={} primal={:.3e} dual={:.3e} eps_pri={:.3e} eps_dual={:.3e}",
                r.iteration, r.primal, r.dual, r.eps_pri, r.eps_dual
            );
        }
        out
    }
}

/// Runs ADMM on the price matrix `l` until both residuals meet the stopping
/// rule or the iteration cap is hit (reported via `converged = false`).
pub fn admm_solve(l: &DMatrix<f64>, kappa: &Kappa, settings: &AdmmSettings) -> Result<RecoveryResult> {
    kappa.validate()?;
    if l.nrows() < 2 {
        return Err(Error::Domain(format!(
            "price matrix needs at least 2 rows, got {}",
            l.nrows()
        )));
    }
    let mut state = AdmmState::new(l, settings.rho)?;
    admm_run(&mut state, l, kappa, settings)
}

/// Continues iterating from an existing state.
pub fn admm_run(
    state: &mut AdmmState,
    l: &DMatrix<f64>,
    kappa: &Kappa,
    settings: &AdmmSettings,
) -> Result<RecoveryResult> {
    let stop = &settings.stop;
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut last = None;
    while state.iteration() < stop.max_iter {
        let rec = state.step(l, kappa, stop)?;
        last = Some(rec);
        let i = rec.iteration;
        if settings.objective_every > 0 && i % settings.objective_every == 0 {
            let f = objective(&clip_offdiag(&state.b3), &state.s1, l, kappa)?;
            objective_trace.push((i, f));
            log::debug!(
                "admm iter={i} primal={:.3e} dual={:.3e} eps_pri={:.3e} eps_dual={:.3e} objective={f:.9e}",
                rec.primal, rec.dual, rec.eps_pri, rec.eps_dual
            );
        }
        if rec.converged() {
            converged = true;
            break;
        }
        if settings.adaptive_rho {
            if rec.primal > 10.0 * rec.dual {
                state.set_rho(state.rho() * 2.0)?;
            } else if rec.dual > 10.0 * rec.primal {
                state.set_rho(state.rho() / 2.0)?;
            }
        }
    }
    let last = last.unwrap_or(IterationRecord {
        iteration: state.iteration(),
        primal: f64::NAN,
        dual: f64::NAN,
        eps_pri: f64::NAN,
        eps_dual: f64::NAN,
        rho: state.rho(),
    });
    if !converged {
        log::warn!(
            "admm hit max_iter={} primal={:.3e} dual={:.3e}",
            stop.max_iter, last.primal, last.dual
        );
    }
    let b_hat = finalize_b(&state.b3);
    let s_hat = state.s1.clone();
    let objective_value = objective(&b_hat, &s_hat, l, kappa)?;
    let gaps = state.consensus_gaps();
    log::info!(
        "admm done converged={converged} iterations={} primal={:.3e} dual={:.3e} objective={objective_value:.9e}",
        state.iteration(),
        last.primal,
        last.dual
    );
    Ok(RecoveryResult {
        b_hat,
        s_hat,
        converged,
        iterations: state.iteration(),
        primal_residual: last.primal,
        dual_residual: last.dual,
        eps_pri: last.eps_pri,
        eps_dual: last.eps_dual,
        consensus_gaps: gaps,
        objective: objective_value,
        b1_asymmetry: numerics::max_asymmetry(&state.b1),
        kappa: *kappa,
        rho: state.rho(),
        history: state.history.clone(),
        objective_trace,
    })
}

/// Symmetrizes `B3` and clips the residual positive off-diagonal entries
/// left by finite-precision consensus; keeps the unclipped matrix if the
/// clipped one is not positive definite.
fn finalize_b(b3: &DMatrix<f64>) -> DMatrix<f64> {
    let clipped = clip_offdiag(b3);
    if SpdFactor::new(&clipped).is_ok() {
        clipped
    } else {
        let sym = numerics::symmetrize(b3);
        log::warn!("clipping positive off-diagonals of B3 broke definiteness; keeping B3");
        sym
    }
}

/// Symmetric part with positive off-diagonal entries set to zero.
fn clip_offdiag(b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = numerics::symmetrize(b);
    let n = out.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && out[(i, j)] > 0.0 {
                out[(i, j)] = 0.0;
            }
        }
    }
    out
}
