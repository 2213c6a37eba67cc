use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single violated input invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewOffers { count: usize },
    DimensionMismatch { offers: usize, rows: usize, cols: Vec<usize> },
    NonFiniteEntry { row: usize, col: usize },
    Asymmetric { row: usize, col: usize, upper: f64, lower: f64 },
    NotPositiveSemidefinite { min_eigenvalue: f64, tolerance: f64 },
    NegativeRisk { q: f64 },
    NonFiniteRisk,
    ZeroPoolSize,
    DuplicateId { id: String },
    InvalidBid { id: String, bid: f64 },
    MissingResponseRate { id: String },
    ResponseRateOutOfRange { id: String, rate: f64 },
    RateOnPerAdCall { id: String, rate: f64 },
    InvalidCap { id: String, cap: f64 },
    CapsBelowPool { total: f64 },
    NonFiniteVector { name: &'static str, index: usize },
    VectorLength { name: &'static str, expected: usize, found: usize },
    NonPositiveMass { mass: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            TooFewOffers { count } => {
                write!(f, "at least 2 offers are required for pricing, got {count}")
            }
            DimensionMismatch { offers, rows, cols } => write!(
                f,
                "covariance shape does not match {offers} offers: {rows} rows with lengths {cols:?}"
            ),
            NonFiniteEntry { row, col } => write!(f, "covariance entry ({row}, {col}) is not finite"),
            Asymmetric { row, col, upper, lower } => write!(
                f,
                "covariance is asymmetric: entry ({row}, {col}) = {upper} but ({col}, {row}) = {lower}"
            ),
            NotPositiveSemidefinite { min_eigenvalue, tolerance } => write!(
                f,
                "covariance is not positive semidefinite: smallest eigenvalue {min_eigenvalue} < -{tolerance}"
            ),
            NegativeRisk { q } => write!(f, "risk parameter q = {q} is negative"),
            NonFiniteRisk => write!(f, "risk parameter q is not finite"),
            ZeroPoolSize => write!(f, "pool size must be positive"),
            DuplicateId { id } => write!(f, "offer id {id:?} appears more than once"),
            InvalidBid { id, bid } => write!(f, "offer {id:?} has invalid bid {bid}"),
            MissingResponseRate { id } => {
                write!(f, "offer {id:?} pays per response but has no response rate")
            }
            ResponseRateOutOfRange { id, rate } => {
                write!(f, "offer {id:?} has response rate {rate} outside [0, 1]")
            }
            RateOnPerAdCall { id, rate } => write!(
                f,
                "offer {id:?} pays per ad call; its response rate is fixed at 1, got {rate}"
            ),
            InvalidCap { id, cap } => write!(f, "offer {id:?} has cap {cap} outside [0, 1]"),
            CapsBelowPool { total } => {
                write!(f, "offer caps sum to {total}, below the whole pool")
            }
            NonFiniteVector { name, index } => write!(f, "{name}[{index}] is not finite"),
            VectorLength { name, expected, found } => {
                write!(f, "{name} has length {found}, expected {expected}")
            }
            NonPositiveMass { mass } => write!(f, "total mass {mass} must be positive"),
        }
    }
}

/// Every invariant an input failed, in discovery order.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub(crate) fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub(crate) fn into_result<T>(self, value: T) -> Result<T, ValidationReport> {
        if self.is_empty() {
            Ok(value)
        } else {
            Err(self)
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// Why a feasible set is empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infeasibility {
    AllCoordinatesPinned,
    CapsBelowMass { total: f64, mass: f64 },
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasibility::AllCoordinatesPinned => {
                f.write_str("every coordinate is pinned to zero")
            }
            Infeasibility::CapsBelowMass { total, mass } => {
                write!(f, "caps on free coordinates sum to {total}, below mass {mass}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(#[from] ValidationReport),
    #[error("infeasible problem: {0}")]
    Infeasible(Infeasibility),
    #[error("solver did not reach the KKT tolerance after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("min-form transform needs q > 0 (got q = {q}); supply the max form directly")]
    TransformUndefined { q: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for {len} offers")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("offer {index} cannot report expected value {value}: {reason}")]
    InvalidReport { index: usize, value: f64, reason: &'static str },
}

impl Error {
    pub(crate) fn single(v: Violation) -> Self {
        Error::Validation(ValidationReport { violations: vec![v] })
    }
}
