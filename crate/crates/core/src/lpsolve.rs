//! Dense revised simplex for small linear programs, with Lagrange multipliers.
//!
//! Problems have the form
//!
//! ```text
//! minimize    c'x
//! subject to  G x <= h        (multipliers mu >= 0)
//!             E x  = f        (multipliers nu, free)
//!             lo <= x <= hi   (multipliers mu_lo, mu_hi >= 0)
//! ```
//!
//! Multipliers follow the convention `c + G'mu + E'nu - mu_lo + mu_hi = 0`.
//! Variables with `lo == hi` are substituted out before pivoting; remaining
//! finite bounds become shifts and extra rows. Pivoting uses Bland's rule, and
//! the duals are read from the final basis.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub le_rows: Vec<Vec<f64>>,
    pub le_rhs: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// A program over `cost.len()` free variables with no constraints yet.
    pub fn new(cost: Vec<f64>) -> Self {
        let n = cost.len();
        LinearProgram {
            cost,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn push_le(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
        self
    }

    pub fn push_eq(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let check_len = |context: &'static str, found: usize, expected: usize| {
            if found == expected {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected,
                    found,
                })
            }
        };
        check_len("LP inequality rhs", self.le_rhs.len(), self.le_rows.len())?;
        check_len("LP equality rhs", self.eq_rhs.len(), self.eq_rows.len())?;
        check_len("LP lower bounds", self.lower.len(), n)?;
        check_len("LP upper bounds", self.upper.len(), n)?;
        for row in self.le_rows.iter().chain(&self.eq_rows) {
            check_len("LP constraint row", row.len(), n)?;
        }
        let finite = self
            .cost
            .iter()
            .chain(self.le_rows.iter().flatten())
            .chain(self.eq_rows.iter().flatten())
            .chain(&self.le_rhs)
            .chain(&self.eq_rhs)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("LP coefficients"));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(Error::Domain(format!(
                    "variable {j} has bounds [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        if !self.eq_rows.is_empty() && self.eq_rows.len() >= n {
            log::warn!(
                "lp equality_rows={} vars={n}: equality multipliers may be non-unique",
                self.eq_rows.len()
            );
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep a text rendering of the final tableau in the solution.
    pub capture_tableau: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: tolerances::LP_KKT,
            max_iter: tolerances::LP_MAX_ITER,
            capture_tableau: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One per `G` row.
    pub ineq_duals: Vec<f64>,
    /// One per `E` row.
    pub eq_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    /// Some basic variable sits at zero, so the duals may not be unique.
    pub degenerate: bool,
    pub iterations: usize,
    pub tableau: Option<String>,
}

impl LpSolution {
    fn non_optimal(status: LpStatus, n: usize, m_i: usize, m_e: usize, iterations: usize) -> Self {
        LpSolution {
            status,
            x: vec![f64::NAN; n],
            objective: match status {
                LpStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            ineq_duals: vec![0.0; m_i],
            eq_duals: vec![0.0; m_e],
            lower_duals: vec![0.0; n],
            upper_duals: vec![0.0; n],
            degenerate: false,
            iterations,
            tableau: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Largest violation of each KKT condition.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(lp: &LinearProgram, sol: &LpSolution) -> KktResiduals {
    let n = lp.num_vars();
    let x = &sol.x;
    let mut grad = lp.cost.clone();
    for (row, &mu) in lp.le_rows.iter().zip(&sol.ineq_duals) {
        for j in 0..n {
            grad[j] += row[j] * mu;
        }
    }
    for (row, &nu) in lp.eq_rows.iter().zip(&sol.eq_duals) {
        for j in 0..n {
            grad[j] += row[j] * nu;
        }
    }
    for j in 0..n {
        grad[j] += sol.upper_duals[j] - sol.lower_duals[j];
    }
    let mut r = KktResiduals {
        stationarity: grad.iter().fold(0.0, |m, g| m.max(g.abs())),
        ..Default::default()
    };
    let dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    for ((row, &h), &mu) in lp.le_rows.iter().zip(&lp.le_rhs).zip(&sol.ineq_duals) {
        let slack = h - dot(row);
        r.primal = r.primal.max(-slack);
        r.dual = r.dual.max(-mu);
        r.complementarity = r.complementarity.max((mu * slack).abs());
    }
    for (row, &f) in lp.eq_rows.iter().zip(&lp.eq_rhs) {
        r.primal = r.primal.max((dot(row) - f).abs());
    }
    for j in 0..n {
        for (bound, mu, gap) in [
            (lp.lower[j], sol.lower_duals[j], x[j] - lp.lower[j]),
            (lp.upper[j], sol.upper_duals[j], lp.upper[j] - x[j]),
        ] {
            r.dual = r.dual.max(-mu);
            if bound.is_finite() {
                r.primal = r.primal.max(-gap);
                r.complementarity = r.complementarity.max((mu * gap).abs());
            } else {
                r.stationarity = r.stationarity.max(mu.abs());
            }
        }
    }
    r
}

pub fn solve(lp: &LinearProgram, tol: f64) -> Result<LpSolution> {
    solve_with(
        lp,
        &SolveOptions {
            tol,
            ..Default::default()
        },
    )
}

/// How an original variable maps onto standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    Fixed(f64),
    /// x = lo + col
    Lower { col: usize, lo: f64 },
    /// x = hi - col
    Upper { col: usize, hi: f64 },
    /// x = pos - neg
    Free { pos: usize, neg: usize },
}

struct StandardForm {
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// +1 or -1: rows negated to make `b >= 0`.
    row_sign: Vec<f64>,
    cost: DVector<f64>,
    /// First artificial column.
    artificial_start: usize,
    basis: Vec<usize>,
    vars: Vec<VarMap>,
    /// Standard-form row holding each variable's upper-bound row, if any.
    upper_rows: Vec<Option<usize>>,
    m_i: usize,
    m_e: usize,
}

fn build_standard_form(lp: &LinearProgram) -> StandardForm {
    let n = lp.num_vars();
    let mut vars = Vec::with_capacity(n);
    let mut cols = 0;
    let mut bound_rows = Vec::new();
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        let map = if lo == hi {
            VarMap::Fixed(lo)
        } else if lo.is_finite() {
            if hi.is_finite() {
                bound_rows.push(j);
            }
            cols += 1;
            VarMap::Lower { col: cols - 1, lo }
        } else if hi.is_finite() {
            cols += 1;
            VarMap::Upper { col: cols - 1, hi }
        } else {
            cols += 2;
            VarMap::Free {
                pos: cols - 2,
                neg: cols - 1,
            }
        };
        vars.push(map);
    }
    let m_i = lp.le_rows.len();
    let m_e = lp.eq_rows.len();
    let m = m_i + bound_rows.len() + m_e;
    let structural = cols;
    let slack_count = m_i + bound_rows.len();
    let artificial_start = structural + slack_count;

    // Rows: G rows, upper-bound rows, E rows.
    let mut a = DMatrix::zeros(m, artificial_start + m);
    let mut b = DVector::zeros(m);
    let mut cost = DVector::zeros(artificial_start + m);

    let place = |a: &mut DMatrix<f64>, b: &mut DVector<f64>, r: usize, row: &[f64], rhs: f64| {
        let mut rhs = rhs;
        for (j, &coef) in row.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            match vars[j] {
                VarMap::Fixed(v) => rhs -= coef * v,
                VarMap::Lower { col, lo } => {
                    a[(r, col)] += coef;
                    rhs -= coef * lo;
                }
                VarMap::Upper { col, hi } => {
                    a[(r, col)] -= coef;
                    rhs -= coef * hi;
                }
                VarMap::Free { pos, neg } => {
                    a[(r, pos)] += coef;
                    a[(r, neg)] -= coef;
                }
            }
        }
        b[r] = rhs;
    };

    for (i, row) in lp.le_rows.iter().enumerate() {
        place(&mut a, &mut b, i, row, lp.le_rhs[i]);
        a[(i, structural + i)] = 1.0;
    }
    let mut upper_rows = vec![None; n];
    for (k, &j) in bound_rows.iter().enumerate() {
        let r = m_i + k;
        if let VarMap::Lower { col, lo } = vars[j] {
            a[(r, col)] = 1.0;
            b[r] = lp.upper[j] - lo;
        }
        a[(r, structural + r)] = 1.0;
        upper_rows[j] = Some(r);
    }
    for (k, row) in lp.eq_rows.iter().enumerate() {
        let r = m_i + bound_rows.len() + k;
        place(&mut a, &mut b, r, row, lp.eq_rhs[k]);
    }

    for j in 0..n {
        let c = lp.cost[j];
        match vars[j] {
            VarMap::Fixed(_) => {}
            VarMap::Lower { col, .. } => cost[col] = c,
            VarMap::Upper { col, .. } => cost[col] = -c,
            VarMap::Free { pos, neg } => {
                cost[pos] = c;
                cost[neg] = -c;
            }
        }
    }

    let mut row_sign = vec![1.0; m];
    let mut basis = Vec::with_capacity(m);
    for r in 0..m {
        if b[r] < 0.0 {
            row_sign[r] = -1.0;
            a.row_mut(r).neg_mut();
            b[r] = -b[r];
        }
        let slack_ok = r < slack_count && row_sign[r] > 0.0;
        if slack_ok {
            basis.push(structural + r);
        } else {
            a[(r, artificial_start + r)] = 1.0;
            basis.push(artificial_start + r);
        }
    }

    StandardForm {
        a,
        b,
        row_sign,
        cost,
        artificial_start,
        basis,
        vars,
        upper_rows,
        m_i,
        m_e,
    }
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

struct Simplex<'a> {
    sf: &'a StandardForm,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    iterations: usize,
    max_iter: usize,
}

const REFACTOR_EVERY: usize = 32;

impl<'a> Simplex<'a> {
    fn refactor(&mut self) -> Result<()> {
        let m = self.basis.len();
        let mut bm = DMatrix::zeros(m, m);
        for (k, &col) in self.basis.iter().enumerate() {
            bm.set_column(k, &self.sf.a.column(col));
        }
        self.binv = bm
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite("singular simplex basis"))?;
        Ok(())
    }

    fn basic_values(&self) -> DVector<f64> {
        &self.binv * &self.sf.b
    }

    fn dump(&self) -> String {
        let mut s = String::new();
        let xb = self.basic_values();
        let _ = writeln!(s, "basis (column: value)");
        for (k, &col) in self.basis.iter().enumerate() {
            let _ = writeln!(s, "  {col}: {:.12e}", xb[k]);
        }
        s
    }

    /// Runs primal simplex on `cost`, never letting `barred` columns enter.
    fn run(&mut self, cost: &DVector<f64>, barred: usize) -> Result<PhaseOutcome> {
        let m = self.basis.len();
        let scale = 1.0 + cost.amax();
        let mut since_refactor = 0;
        loop {
            if self.iterations >= self.max_iter {
                return Err(Error::LpIterationLimit {
                    iterations: self.iterations,
                    dump: self.dump(),
                });
            }
            let cb = DVector::from_iterator(m, self.basis.iter().map(|&c| cost[c]));
            let y = self.binv.tr_mul(&cb);
            let mut entering = None;
            for j in 0..barred {
                if self.basis.contains(&j) {
                    continue;
                }
                let d = cost[j] - self.sf.a.column(j).dot(&y);
                if d < -tolerances::LP_PIVOT * scale {
                    entering = Some(j);
                    break;
                }
            }
            let Some(q) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            let w = &self.binv * self.sf.a.column(q);
            let xb = self.basic_values();
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if w[i] > tolerances::LP_PIVOT {
                    let ratio = xb[i].max(0.0) / w[i];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if ratio < best && !tie || tie && self.basis[i] < self.basis[r] {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Ok(PhaseOutcome::Unbounded);
            };
            self.pivot(r, q, &w);
            self.iterations += 1;
            since_refactor += 1;
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize, w: &DVector<f64>) {
        let m = self.basis.len();
        let piv = w[r];
        let pivot_row = self.binv.row(r) / piv;
        for i in 0..m {
            if i == r || w[i] == 0.0 {
                continue;
            }
            let factor = w[i];
            for j in 0..m {
                self.binv[(i, j)] -= factor * pivot_row[j];
            }
        }
        self.binv.set_row(r, &pivot_row);
        self.basis[r] = q;
    }

    /// Pivots zero-level artificials out of the basis where a structural or
    /// slack column can replace them. Rows where none can are redundant.
    fn expel_artificials(&mut self) -> Result<()> {
        let start = self.sf.artificial_start;
        for r in 0..self.basis.len() {
            if self.basis[r] < start {
                continue;
            }
            let row = self.binv.row(r) * &self.sf.a;
            let mut best: Option<(usize, f64)> = None;
            for j in 0..start {
                if self.basis.contains(&j) {
                    continue;
                }
                let v = row[j].abs();
                if v > 1e-9 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((q, _)) = best {
                let w = &self.binv * self.sf.a.column(q);
                self.pivot(r, q, &w);
            }
        }
        self.refactor()
    }
}

pub fn solve_with(lp: &LinearProgram, opts: &SolveOptions) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();
    let sf = build_standard_form(lp);
    let m = sf.basis.len();
    let m_i = sf.m_i;
    let m_e = sf.m_e;

    let mut simplex = Simplex {
        sf: &sf,
        basis: sf.basis.clone(),
        binv: DMatrix::identity(m, m),
        iterations: 0,
        max_iter: opts.max_iter,
    };
    if m > 0 {
        simplex.refactor()?;
    }

    // Phase one: drive artificials to zero.
    let ncols = sf.a.ncols();
    if sf.basis.iter().any(|&c| c >= sf.artificial_start) {
        let phase1_cost =
            DVector::from_fn(ncols, |j, _| if j >= sf.artificial_start { 1.0 } else { 0.0 });
        simplex.run(&phase1_cost, sf.artificial_start)?;
        let xb = simplex.basic_values();
        let infeasibility: f64 = simplex
            .basis
            .iter()
            .zip(xb.iter())
            .filter(|(&c, _)| c >= sf.artificial_start)
            .map(|(_, v)| v.abs())
            .sum();
        let scale = 1.0 + sf.b.amax();
        if infeasibility > tolerances::LP_FEASIBILITY * scale {
            return Ok(LpSolution::non_optimal(
                LpStatus::Infeasible,
                n,
                m_i,
                m_e,
                simplex.iterations,
            ));
        }
        simplex.expel_artificials()?;
    } else {
        // feasible slack basis
    }

    // Phase two.
    if let PhaseOutcome::Unbounded = simplex.run(&sf.cost, sf.artificial_start)? {
        return Ok(LpSolution::non_optimal(
            LpStatus::Unbounded,
            n,
            m_i,
            m_e,
            simplex.iterations,
        ));
    }
    if m > 0 {
        simplex.refactor()?;
    }

    let xb = simplex.basic_values();
    let mut col_value = vec![0.0; ncols];
    for (k, &c) in simplex.basis.iter().enumerate() {
        col_value[c] = xb[k].max(0.0);
    }
    let degenerate = simplex
        .basis
        .iter()
        .zip(xb.iter())
        .any(|(&c, &v)| c < sf.artificial_start && v.abs() <= tolerances::LP_PIVOT * (1.0 + sf.b.amax()));

    let x: Vec<f64> = sf
        .vars
        .iter()
        .map(|v| match *v {
            VarMap::Fixed(val) => val,
            VarMap::Lower { col, lo } => lo + col_value[col],
            VarMap::Upper { col, hi } => hi - col_value[col],
            VarMap::Free { pos, neg } => col_value[pos] - col_value[neg],
        })
        .collect();

    // Row duals y of the standard form, back to the original row orientation.
    let cb = DVector::from_iterator(m, simplex.basis.iter().map(|&c| sf.cost[c]));
    let y = simplex.binv.tr_mul(&cb);
    let row_dual = |r: usize| -sf.row_sign[r] * y[r];

    let snap = |v: f64| if v.abs() <= tolerances::LP_PIVOT { 0.0 } else { v };
    let ineq_duals: Vec<f64> = (0..m_i).map(|r| snap(row_dual(r).max(0.0))).collect();
    let eq_start = m - m_e;
    let eq_duals: Vec<f64> = (0..m_e).map(|k| row_dual(eq_start + k)).collect();

    // Bound multipliers from the stationarity residual of each variable.
    let mut lower_duals = vec![0.0; n];
    let mut upper_duals = vec![0.0; n];
    for j in 0..n {
        let mut r = lp.cost[j];
        for (row, mu) in lp.le_rows.iter().zip(&ineq_duals) {
            r += row[j] * mu;
        }
        for (row, nu) in lp.eq_rows.iter().zip(&eq_duals) {
            r += row[j] * nu;
        }
        match sf.vars[j] {
            VarMap::Fixed(_) => {
                lower_duals[j] = r.max(0.0);
                upper_duals[j] = (-r).max(0.0);
            }
            VarMap::Lower { .. } => {
                if let Some(row) = sf.upper_rows[j] {
                    upper_duals[j] = snap(row_dual(row).max(0.0));
                    r += upper_duals[j];
                }
                lower_duals[j] = snap(r.max(0.0));
            }
            VarMap::Upper { .. } => upper_duals[j] = snap((-r).max(0.0)),
            VarMap::Free { .. } => {}
        }
    }

    let tableau = opts.capture_tableau.then(|| render_tableau(&simplex, &sf.cost));
    let sol = LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_at(&x),
        x,
        ineq_duals,
        eq_duals,
        lower_duals,
        upper_duals,
        degenerate,
        iterations: simplex.iterations,
        tableau,
    };

    let kkt = kkt_residuals(lp, &sol);
    let scale = 1.0
        + lp.cost.iter().fold(0.0f64, |m, c| m.max(c.abs()))
        + sf.b.amax();
    if kkt.max() > opts.tol * scale {
        log::warn!(
            "lp kkt_residual={:.3e} stationarity={:.3e} primal={:.3e} dual={:.3e} complementarity={:.3e}",
            kkt.max(),
            kkt.stationarity,
            kkt.primal,
            kkt.dual,
            kkt.complementarity
        );
    }
    debug_assert!(
        kkt.max() <= 1e3 * opts.tol * scale,
        "KKT residuals {kkt:?} exceed tolerance"
    );
    Ok(sol)
}

fn render_tableau(simplex: &Simplex<'_>, cost: &DVector<f64>) -> String {
    let sf = simplex.sf;
    let body = &simplex.binv * &sf.a;
    let xb = simplex.basic_values();
    let cb = DVector::from_iterator(simplex.basis.len(), simplex.basis.iter().map(|&c| cost[c]));
    let y = simplex.binv.tr_mul(&cb);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# final tableau: {} rows, {} columns (artificials from {})",
        body.nrows(),
        body.ncols(),
        sf.artificial_start
    );
    let reduced: Vec<String> = (0..sf.a.ncols())
        .map(|j| format!("{:.6e}", cost[j] - sf.a.column(j).dot(&y)))
        .collect();
    let _ = writeln!(s, "reduced_costs,{}", reduced.join(","));
    for (r, &col) in simplex.basis.iter().enumerate() {
        let entries: Vec<String> = body.row(r).iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(s, "x{col}={:.9e},{}", xb[r], entries.join(","));
    }
    s
}
