//! Simulation and verification laboratory for gains-from-trade mechanisms in
//! markets with one constrained-additive buyer and many unit-supply sellers.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audits;
pub mod bounds;
pub mod distributions;
pub mod error;
pub mod feasibility;
pub mod instances;
pub mod mc;
pub mod mechanisms;
pub mod numeric;
pub mod oracle;
pub mod ocrs;

pub use distributions::{Dist, Side};
pub use error::{Error, Result};
pub use feasibility::{Constraint, ItemSet};
pub use mechanisms::{MarketInstance, Mechanism, Outcome, Profile};
