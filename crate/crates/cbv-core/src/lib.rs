//! Cut-based valuation of ownership and flow networks.
//!
//! The consolidated value of a perimeter `P` depends only on its base values
//! and on the priced edges crossing the cut between `P` and its complement.

pub mod clearing;
pub mod control;
pub mod cut;
pub mod error;
pub mod fisher;
pub mod linalg;
pub mod network;
pub mod robustness;
pub mod scl;
pub mod sparse;
pub mod validation;

pub use cut::{CutStatistics, SolverConfig, SolverMethod, ValuationResult};
pub use error::{Error, Result};
pub use network::{NodeId, Observer, OwnershipNetwork, Perimeter, Regime};
pub use sparse::SparseMatrix;
pub use validation::{Finding, RuleId, Severity, ValidationReport};
