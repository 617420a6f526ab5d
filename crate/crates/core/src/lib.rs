//! Expected-transaction-value estimation and risk-constrained customer allocation.
//!
//! - [`problem`]: instances, ETV matrices, plans and their validation
//! - [`etvmodel`]: the three-head probabilistic scorer, its losses and trainer
//! - [`alloc`]: heuristic, exact, manual-priority and greedy allocation
//! - [`sim`]: synthetic ground truth, evaluation metrics and experiments
//! - [`io`]: CSV formats

pub mod alloc;
pub mod error;
pub mod etvmodel;
mod flow;
pub mod io;
pub mod problem;
pub mod seed;
pub mod sim;

pub use error::{Error, Result, Violation};
pub use problem::{
    objective, validate_instance, validate_plan, AllocationPlan, EtvMatrix, FundType, Instance, Observation, UserRecord,
};
