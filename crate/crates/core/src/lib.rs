//! Risk-averse portfolio allocation of ad calls across advertising offers,
//! priced with a generalized VCG mechanism.
//!
//! A publisher splits a pool of ad calls over offers with expected values
//! `mu` and return covariance `Σ`, maximizing `w'mu - q w'Σw` on the simplex.
//! Treating the variance penalty as an extra participant turns that
//! allocation into VCG outcome selection, so each offer is charged the
//! externality it imposes on the others and the risk participant's charge is
//! the revenue given up to risk aversion.
//!
//! ```
//! use portfolio_vcg::{allocate, price_schedule_for, CovarianceMatrix, MarketInstance, SolverConfig};
//!
//! let market = MarketInstance::from_values(&[1.0, 0.8], CovarianceMatrix::identity(2), 0.5, 1000)?;
//! let config = SolverConfig::default();
//! let alloc = allocate(&market, &config)?;
//! let prices = price_schedule_for(&market, &alloc, &config)?;
//! assert!((alloc.weights[0] - 0.6).abs() < 1e-9);
//! assert!((prices.offer_prices[0] - 0.24).abs() < 1e-9);
//! # Ok::<(), portfolio_vcg::Error>(())
//! ```

pub mod allocation;
pub mod error;
mod linalg;
pub mod market;
pub mod pricing;
pub mod qp;
pub mod verification;

pub use allocation::{allocate, apportion, qmap_allocate, qmap_transform, Allocation, QmapForm, QmapInstance};
pub use error::{Error, Infeasibility, Result, ValidationReport, Violation};
pub use linalg::{PSD_TOL, SYM_TOL};
pub use market::{
    expected_value, validate_market, CovarianceMatrix, MarketInput, MarketInstance, Offer, PaymentBasis,
    RiskParameter,
};
pub use pricing::{price_offer, price_risk_participant, price_schedule, price_schedule_for, qmap_prices, PriceSchedule};
pub use qp::{check_kkt, project_to_capped_simplex, project_to_simplex, solve, KktReport, QpProblem, QpSolution, SolverConfig};
pub use verification::{Property, PropertyReport, VerifyConfig, EPS_PRICE};
