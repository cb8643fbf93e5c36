//! Discovery of the structural form of an equation shared by several
//! similar systems.
//!
//! The pipeline: genetic programming proposes raw candidate expressions
//! ([`gp`]); each candidate is made dimension-consistent by inserting
//! per-system parameters ([`transform`]); the resulting template is fitted to
//! every system's dataset ([`fit`]); and the best candidates are ranked by
//! `L = L1 + L2`, the mean fit error plus the predictability of the fitted
//! parameters across systems ([`lmetric`]).

pub mod cli;
pub mod data;
pub mod expr;
pub mod fit;
pub mod gp;
pub mod lmetric;
pub mod rng;
pub mod transform;

pub use data::{Dataset, DatasetCollection};
pub use expr::{Expression, Node};
pub use fit::FitResult;
pub use gp::{CandidateRecord, GpConfig};
pub use lmetric::L2Report;
pub use transform::Template;
