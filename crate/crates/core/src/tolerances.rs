//! Numerical tolerances shared across the crate.
//!
//! Every threshold that decides a numerical outcome lives here so the
//! acceptance checks and the library agree on what "zero" means.

/// KKT residual tolerance for the simplex solver.
pub const LP_KKT: f64 = 1e-8;

/// Pivot / reduced-cost threshold inside the simplex iterations.
pub const LP_PIVOT: f64 = 1e-9;

/// Phase-one objective above which an LP is declared infeasible.
pub const LP_FEASIBILITY: f64 = 1e-7;

/// Default simplex iteration cap.
pub const LP_MAX_ITER: usize = 10_000;

/// A line multiplier with magnitude above this marks the line as congested.
pub const CONGESTION_MU: f64 = 1e-7;

/// Inputs to symmetric routines may deviate from symmetry by this much.
pub const SYMMETRY: f64 = 1e-8;

/// Relative reconstruction error guaranteed by the eigen / singular decompositions.
pub const DECOMPOSITION: f64 = 1e-10;

/// Relative singular-value cutoff for numerical rank.
pub const RANK: f64 = 1e-8;

/// Absolute / relative ADMM stopping tolerances.
pub const ADMM_EPS_ABS: f64 = 1e-6;
pub const ADMM_EPS_REL: f64 = 1e-4;
pub const ADMM_MAX_ITER: usize = 50_000;

/// Per-run iteration cap inside the kappa grid search. Scores are compared
/// across candidates at equal budget.
pub const TUNING_MAX_ITER: usize = 2_000;

/// Default edge threshold on unit-max normalized Laplacians.
pub const EDGE_TAU: f64 = 0.05;
