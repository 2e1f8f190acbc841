//! Tax-aware portfolio construction.
//!
//! Trade lists are produced by a two-stage convex heuristic: a relaxation in
//! which every per-asset cost is replaced by its convex envelope picks a buy
//! or sell direction for each asset, and a sign-constrained convex program
//! then yields the final trades. An exhaustive sign enumeration serves as the
//! exact reference, and a monthly backtest drives the whole pipeline against
//! a lot-level ledger.

pub mod ledger;
pub mod piecewise;
pub mod conic;
pub mod tam;
pub mod relaxation;
pub mod heuristic;
pub mod oracle;
pub mod instance;
pub mod backtest;
pub mod io;
