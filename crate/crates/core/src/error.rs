use std::fmt;

use thiserror::Error;

/// A single broken invariant found while validating an instance or a plan.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Total fund demand differs from the number of users.
    DemandMismatch { demand_total: usize, users: usize },
    /// No assignment satisfies demands and risk eligibility together.
    Infeasible { placeable: usize, users: usize },
    /// Dimensions, ids or index ranges are inconsistent.
    Shape(String),
    /// A fund received a different number of users than it demands.
    DemandViolation { fund: usize, assigned: usize, demand: usize },
    /// A user was placed in a fund above their risk tolerance.
    RiskViolation { user: usize, fund: usize, tolerance: u32, risk_level: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DemandMismatch { demand_total, users } => {
                write!(f, "DemandMismatch: fund demands sum to {demand_total} but there are {users} users")
            }
            Violation::Infeasible { placeable, users } => {
                write!(f, "Infeasible: at most {placeable} of {users} users can be placed under risk eligibility")
            }
            Violation::Shape(msg) => write!(f, "ShapeError: {msg}"),
            Violation::DemandViolation { fund, assigned, demand } => {
                write!(f, "DemandViolation: fund {fund} has {assigned} users, demand is {demand}")
            }
            Violation::RiskViolation { user, fund, tolerance, risk_level } => write!(
                f,
                "RiskViolation: user {user} (tolerance {tolerance}) assigned to fund {fund} (risk level {risk_level})"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}", first_violation(.0))]
    Validation(Vec<Violation>),
    #[error("Infeasible: {0}")]
    Infeasible(String),
    #[error("ShapeError: {0}")]
    Shape(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("NonFiniteLoss: loss evaluated to {0}")]
    NonFiniteLoss(f64),
    #[error("Diverged: training loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("EmptyData: {0}")]
    EmptyData(String),
    #[error("EmptyDeliveries: no deliveries to evaluate")]
    EmptyDeliveries,
    #[error("ConfigError: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn first_violation(violations: &[Violation]) -> String {
    match violations.first() {
        Some(v) if violations.len() == 1 => v.to_string(),
        Some(v) => format!("{v} (and {} more)", violations.len() - 1),
        None => "validation failed".to_string(),
    }
}

impl Error {
    /// True when the error means no feasible allocation exists.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible(_) => true,
            Error::Validation(vs) => vs.iter().any(|v| matches!(v, Violation::Infeasible { .. })),
            _ => false,
        }
    }

    /// True for failures of the numeric pipeline (losses, training).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss(_) | Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
