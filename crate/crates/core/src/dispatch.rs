//! Network-constrained economic dispatch for one market interval and the
//! nodal prices derived from its multipliers.
//!
//! The dispatch LP is posed over bus injections only, with phases
//! eliminated through the shift-factor matrix `H = D A B^-1`:
//!
//! ```text
//! minimize   c'p
//! s.t.       p_lower <= p <= p_upper
//!            1'p = 0                    (lambda0 = -nu)
//!            H p_red <= f_max           (mu_upper)
//!           -H p_red <= f_max           (mu_lower)
//! ```
//!
//! Prices are `lambda = lambda0 * 1 + [0; H'(mu_lower - mu_upper)]`, which is
//! the congestion term `B^-1 A' D mu` with the reference entry pinned to zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lpsolve::{self, LinearProgram, LpStatus, SolveOptions};
use crate::netmodel::{GridTopology, IncidenceMatrix, LaplacianPair};
use crate::numerics::SpdFactor;
use crate::tolerances;

/// A grid together with the matrices the dispatch and pricing layers reuse.
#[derive(Debug, Clone)]
pub struct GridModel {
    topology: GridTopology,
    incidence: IncidenceMatrix,
    laplacian: LaplacianPair,
    laplacian_factor: SpdFactor,
    shift_factors: DMatrix<f64>,
}

impl GridModel {
    pub fn new(topology: GridTopology) -> Result<Self> {
        let incidence = topology.incidence();
        let laplacian = topology.laplacian();
        let laplacian_factor = SpdFactor::new(&laplacian.reduced)
            .expect("reduced Laplacian of a connected grid is positive definite");
        // H' = B^-1 A' D
        let mut a_t_d = incidence.reduced.transpose();
        for (l, mut col) in a_t_d.column_iter_mut().enumerate() {
            col *= laplacian.susceptance[l];
        }
        let shift_factors = laplacian_factor.solve(&a_t_d)?.transpose();
        Ok(GridModel {
            topology,
            incidence,
            laplacian,
            laplacian_factor,
            shift_factors,
        })
    }

    pub fn ieee14() -> Self {
        Self::new(GridTopology::ieee14()).expect("IEEE 14-bus model builds")
    }

    pub fn topology(&self) -> &GridTopology {
        &self.topology
    }

    pub fn incidence(&self) -> &IncidenceMatrix {
        &self.incidence
    }

    pub fn laplacian(&self) -> &LaplacianPair {
        &self.laplacian
    }

    /// Cholesky factor of the reduced Laplacian B.
    pub fn laplacian_factor(&self) -> &SpdFactor {
        &self.laplacian_factor
    }

    /// `D A B^-1`, L × N.
    pub fn shift_factors(&self) -> &DMatrix<f64> {
        &self.shift_factors
    }

    /// Entries of a full bus vector at the non-reference buses.
    pub fn reduce(&self, full: &DVector<f64>) -> DVector<f64> {
        full.clone().remove_row(self.topology.reference())
    }

    /// Inserts a zero at the reference bus.
    pub fn expand(&self, reduced: &DVector<f64>) -> DVector<f64> {
        reduced.clone().insert_row(self.topology.reference(), 0.0)
    }

    /// `A' D mu`: the nodal source vector induced by line multipliers.
    pub fn congestion_source(&self, mu: &DVector<f64>) -> DVector<f64> {
        let weighted = mu.component_mul(&self.laplacian.susceptance);
        self.incidence.reduced.tr_mul(&weighted)
    }

    /// `B^-1 A' D mu` at the non-reference buses.
    pub fn congestion_prices(&self, mu: &DVector<f64>) -> DVector<f64> {
        self.shift_factors.tr_mul(mu)
    }
}

/// Bids and injection bounds for one interval. Loads are negative injections.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketScenario {
    pub interval: usize,
    pub bids: Vec<f64>,
    pub p_lower: Vec<f64>,
    pub p_upper: Vec<f64>,
}

impl MarketScenario {
    pub fn validate(&self, buses: usize) -> Result<()> {
        for (context, v) in [
            ("scenario bids", &self.bids),
            ("scenario lower bounds", &self.p_lower),
            ("scenario upper bounds", &self.p_upper),
        ] {
            if v.len() != buses {
                return Err(Error::Dimension {
                    context,
                    expected: buses,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(context));
            }
        }
        if let Some(n) = (0..buses).find(|&n| self.p_lower[n] > self.p_upper[n]) {
            return Err(Error::Domain(format!(
                "interval {}: bus {} has p_lower {} > p_upper {}",
                self.interval,
                n + 1,
                self.p_lower[n],
                self.p_upper[n]
            )));
        }
        Ok(())
    }

    /// Whether total injection bounds bracket zero.
    pub fn balance_feasible(&self) -> bool {
        self.p_lower.iter().sum::<f64>() <= 1e-9 && self.p_upper.iter().sum::<f64>() >= -1e-9
    }
}

#[derive(Debug, Clone)]
pub struct DispatchSolution {
    pub interval: usize,
    /// Injections at all buses.
    pub injections: DVector<f64>,
    /// Phases at all buses, zero at the reference.
    pub phases: DVector<f64>,
    pub flows: DVector<f64>,
    /// Energy price: multiplier of the power balance.
    pub lambda0: f64,
    pub mu_lower: DVector<f64>,
    pub mu_upper: DVector<f64>,
    pub congested_lines: Vec<usize>,
    pub degenerate: bool,
    pub cost: f64,
}

impl DispatchSolution {
    /// `mu_lower - mu_upper`.
    pub fn net_multipliers(&self) -> DVector<f64> {
        &self.mu_lower - &self.mu_upper
    }

    pub fn is_congested(&self) -> bool {
        !self.congested_lines.is_empty()
    }
}

/// Nodal prices split by component.
#[derive(Debug, Clone)]
pub struct LmpVector {
    pub full: DVector<f64>,
    /// Congestion component at every bus (zero at the reference).
    pub congestion_part: DVector<f64>,
    pub noise_part: Option<DVector<f64>>,
}

impl LmpVector {
    /// Congestion component at the non-reference buses.
    pub fn reduced_congestion(&self, model: &GridModel) -> DVector<f64> {
        model.reduce(&self.congestion_part)
    }

    pub fn with_noise(mut self, w: DVector<f64>) -> Result<Self> {
        if w.len() != self.full.len() {
            return Err(Error::Dimension {
                context: "price noise",
                expected: self.full.len(),
                found: w.len(),
            });
        }
        self.full += &w;
        self.noise_part = Some(w);
        Ok(self)
    }
}

pub fn assemble_dispatch_lp(model: &GridModel, scenario: &MarketScenario) -> Result<LinearProgram> {
    let topo = model.topology();
    let buses = topo.bus_count();
    scenario.validate(buses)?;
    let mut lp = LinearProgram::new(scenario.bids.clone());
    for n in 0..buses {
        lp.set_bounds(n, scenario.p_lower[n], scenario.p_upper[n]);
    }
    lp.push_eq(vec![1.0; buses], 0.0);
    let h = model.shift_factors();
    let reduced_buses = topo.non_reference_buses();
    let limits = topo.flow_limits();
    let mut embedded = Vec::with_capacity(h.nrows());
    for l in 0..h.nrows() {
        let mut row = vec![0.0; buses];
        for (k, &bus) in reduced_buses.iter().enumerate() {
            row[bus] = h[(l, k)];
        }
        embedded.push(row);
    }
    for (row, &f) in embedded.iter().zip(&limits) {
        lp.push_le(row.clone(), f);
    }
    for (row, &f) in embedded.iter().zip(&limits) {
        lp.push_le(row.iter().map(|v| -v).collect(), f);
    }
    Ok(lp)
}

pub fn solve_dispatch(model: &GridModel, scenario: &MarketScenario) -> Result<DispatchSolution> {
    solve_dispatch_with(model, scenario, &SolveOptions::default()).map(|(sol, _)| sol)
}

/// Like [`solve_dispatch`], also returning the final tableau text when
/// `opts.capture_tableau` is set.
pub fn solve_dispatch_with(
    model: &GridModel,
    scenario: &MarketScenario,
    opts: &SolveOptions,
) -> Result<(DispatchSolution, Option<String>)> {
    let lp = assemble_dispatch_lp(model, scenario)?;
    let sol = lpsolve::solve_with(&lp, opts)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Dispatch {
            interval: scenario.interval,
            status: sol.status,
        });
    }
    let lines = model.topology().line_count();
    let injections = DVector::from_vec(sol.x.clone());
    let mu_upper = DVector::from_column_slice(&sol.ineq_duals[..lines]);
    let mu_lower = DVector::from_column_slice(&sol.ineq_duals[lines..2 * lines]);
    let reduced_p = model.reduce(&injections);
    let theta = model.laplacian_factor().solve(&DMatrix::from_column_slice(
        reduced_p.len(),
        1,
        reduced_p.as_slice(),
    ))?;
    let phases = model.expand(&DVector::from_column_slice(theta.as_slice()));
    let flows = model.shift_factors() * &reduced_p;
    let congested_lines = (0..lines)
        .filter(|&l| {
            mu_upper[l] > tolerances::CONGESTION_MU || mu_lower[l] > tolerances::CONGESTION_MU
        })
        .collect();
    Ok((
        DispatchSolution {
            interval: scenario.interval,
            injections,
            phases,
            flows,
            lambda0: -sol.eq_duals[0],
            mu_lower,
            mu_upper,
            congested_lines,
            degenerate: sol.degenerate,
            cost: sol.objective,
        },
        sol.tableau,
    ))
}

pub fn compute_lmp(sol: &DispatchSolution, model: &GridModel) -> Result<LmpVector> {
    let lines = model.topology().line_count();
    if sol.mu_lower.len() != lines || sol.mu_upper.len() != lines {
        return Err(Error::Dimension {
            context: "compute_lmp multipliers",
            expected: lines,
            found: sol.mu_lower.len(),
        });
    }
    let congestion = model.expand(&model.congestion_prices(&sol.net_multipliers()));
    Ok(LmpVector {
        full: congestion.add_scalar(sol.lambda0),
        congestion_part: congestion,
        noise_part: None,
    })
}
