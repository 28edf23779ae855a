//! One-dimensional stochastic sandpile: instruction stacks, full and half
//! toppling, the carpet/hole procedure, the single-block chain and the IDLA
//! bootstrap.

pub mod block;
pub mod bootstrap;
pub mod carpet;
pub mod error;
pub mod exact;
pub mod lattice;
pub mod layout;
pub mod rng;
pub mod stats;

pub use error::{Result, SandpileError};
pub use layout::BlockLayout;
pub use rng::{Orientation, StackLayout, StackSet};

/// Default scalar for estimators.
pub type Real = f64;
pub type Estimate = stats::Estimate<Real>;
pub type Proportion = stats::Proportion<Real>;
