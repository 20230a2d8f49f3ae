//! Tail asymptotics of the maximum of a random walk stopped at a random
//! time, crossing a general boundary, for heavy-tailed increments.

pub mod boundary;
pub mod classes;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod quadrature;
pub mod report;
pub mod hfunc;
pub mod rules;
pub mod shard;
pub mod sim;
pub mod stats;

pub use boundary::{Boundary, BoundaryKind, TailRule};
pub use dist::{Family, TailDistribution};
pub use error::{Error, Result};
pub use rules::{StoppingRule, TailSequence};
