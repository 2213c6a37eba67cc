//! File-based front end for allocation, pricing and property verification.
//!
//! Exit codes are a stable contract: 0 success, 1 I/O, 2 parse, 3 validation,
//! 4 solver, 5 property violation.

pub mod format;

use std::fmt;
use std::path::Path;

use portfolio_vcg::verification::run_property;
use portfolio_vcg::{
    allocate, price_schedule_for, qmap_allocate, qmap_prices, validate_market, Error, MarketInstance, Property,
    SolverConfig, VerifyConfig,
};

use crate::format::{digest, AllocationRecord, Diagnostics, MarketFile, QmapFile, ResultFile};

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Parse(String),
    Validation(String),
    Solver(String),
    /// The run completed but a property suite found violations.
    Violations(Box<ResultFile>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Violations(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
            CliError::Violations(r) => {
                let failed: Vec<&str> = r
                    .reports
                    .iter()
                    .flatten()
                    .filter(|p| !p.passed())
                    .map(|p| p.property.name())
                    .collect();
                write!(f, "property violations in: {}", failed.join(", "))
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(_) | Error::TransformUndefined { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

/// Tolerance overrides shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tolerances {
    pub kkt_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub eps_price: Option<f64>,
}

impl Tolerances {
    pub fn solver(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some(t) = self.kkt_tol {
            c.kkt_tol = t;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        c
    }

    pub fn verify(&self) -> VerifyConfig {
        let mut v = VerifyConfig { solver: self.solver(), ..VerifyConfig::default() };
        if let Some(e) = self.eps_price {
            v.eps_price = e;
        }
        v
    }
}

fn read(path: &Path) -> Result<(String, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let d = digest(text.as_bytes());
    Ok((text, d))
}

/// Parses and validates a market document.
pub fn load_market(text: &str) -> Result<MarketInstance, CliError> {
    let file = MarketFile::parse(text).map_err(|e| CliError::Parse(e.to_string()))?;
    validate_market(file.to_input()).map_err(|r| CliError::Validation(r.to_string()))
}

fn market_result(command: &str, path: &Path) -> Result<(ResultFile, MarketInstance), CliError> {
    let (text, d) = read(path)?;
    let market = load_market(&text)?;
    let mut result = ResultFile::new(command);
    result.input_digest = Some(d);
    result.offer_ids = market.offers().iter().map(|o| o.id.clone()).collect();
    Ok((result, market))
}

pub fn cmd_allocate(input: &Path, tol: &Tolerances) -> Result<ResultFile, CliError> {
    let (mut result, market) = market_result("allocate", input)?;
    let alloc = allocate(&market, &tol.solver())?;
    result.allocation = Some(AllocationRecord::from(&alloc));
    result.diagnostics = Some(Diagnostics::from(&alloc));
    Ok(result)
}

pub fn cmd_price(input: &Path, tol: &Tolerances) -> Result<ResultFile, CliError> {
    let (mut result, market) = market_result("price", input)?;
    let config = tol.solver();
    let alloc = allocate(&market, &config)?;
    let schedule = price_schedule_for(&market, &alloc, &config)?;
    result.allocation = Some(AllocationRecord::from(&alloc));
    result.diagnostics = Some(Diagnostics::from(&alloc));
    result.prices = Some(schedule);
    Ok(result)
}

pub fn cmd_qmap(input: &Path, tol: &Tolerances) -> Result<ResultFile, CliError> {
    let (text, d) = read(input)?;
    let file = QmapFile::parse(&text).map_err(|e| CliError::Parse(e.to_string()))?;
    let instance = file.to_instance()?;
    let config = tol.solver();
    let mut result = ResultFile::new("qmap");
    result.input_digest = Some(d);
    result.offer_ids = file.offer_ids();
    // a lone offer can still be allocated; pricing needs competition
    let (alloc, prices) = if instance.len() < 2 {
        (qmap_allocate(&instance, &config)?, None)
    } else {
        let (alloc, schedule) = qmap_prices(&instance, &config)?;
        (alloc, Some(schedule))
    };
    result.allocation = Some(AllocationRecord::from(&alloc));
    result.diagnostics = Some(Diagnostics::from(&alloc));
    result.prices = prices;
    Ok(result)
}

/// Runs the selected suites; a violation yields `CliError::Violations`
/// carrying the full result.
pub fn cmd_verify(properties: &[Property], seed: u64, trials: usize, tol: &Tolerances) -> Result<ResultFile, CliError> {
    let config = tol.verify();
    let reports: Vec<_> = properties.iter().map(|&p| run_property(p, seed, trials, &config)).collect();
    let failed = reports.iter().any(|r| !r.passed());
    let mut result = ResultFile::new("verify");
    result.reports = Some(reports);
    if failed {
        Err(CliError::Violations(Box::new(result)))
    } else {
        Ok(result)
    }
}
