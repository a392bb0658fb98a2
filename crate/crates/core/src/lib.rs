//! Locational-marginal-price simulation on DC power grids and recovery of
//! the reduced grid Laplacian from the resulting price matrix.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`netmodel`] builds the grid graph and its weighted Laplacians.
//! 2. [`dispatch`] clears a network-constrained economic dispatch with the
//!    [`lpsolve`] simplex solver and forms nodal prices from its multipliers.
//! 3. [`marketsim`] draws a day of bids and loads and collects the
//!    congestion price matrix.
//! 4. [`recovery`] factors the price matrix into a Laplacian and a sparse,
//!    low-rank source matrix with ADMM, and [`tuneval`] picks regularization
//!    weights and scores the recovered topology.

pub mod dispatch;
pub mod error;
pub mod lpsolve;
pub mod marketsim;
pub mod netmodel;
pub mod numerics;
pub mod recovery;
pub mod textio;
pub mod tolerances;
pub mod tuneval;

pub use error::{Error, Result};
