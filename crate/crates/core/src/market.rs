//! Auction input: offers, covariance of returns, risk parameter, pool size.
//!
//! `mu[i]` is the expected revenue offer `i` would bring if it received the
//! entire ad-call pool. Callers holding per-call values scale them by
//! `pool_size` before building offers.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport, Violation};
use crate::linalg::{check_covariance, matrix_from_rows, PSD_TOL, SYM_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentBasis {
    PerAdCall,
    PerResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub id: String,
    pub bid: f64,
    pub basis: PaymentBasis,
    /// Required for per-response offers; absent or 1 for per-ad-call offers.
    pub response_rate: Option<f64>,
    /// Largest fraction of the pool this offer accepts.
    pub cap: Option<f64>,
}

impl Offer {
    pub fn per_ad_call(id: impl Into<String>, bid: f64) -> Self {
        Offer { id: id.into(), bid, basis: PaymentBasis::PerAdCall, response_rate: None, cap: None }
    }

    pub fn per_response(id: impl Into<String>, bid: f64, response_rate: f64) -> Self {
        Offer {
            id: id.into(),
            bid,
            basis: PaymentBasis::PerResponse,
            response_rate: Some(response_rate),
            cap: None,
        }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.cap = Some(cap);
        self
    }

    /// Probability that one shown ad produces a payment event.
    pub fn effective_rate(&self) -> Option<f64> {
        match self.basis {
            PaymentBasis::PerAdCall => Some(1.0),
            PaymentBasis::PerResponse => self.response_rate,
        }
    }

    fn check(&self, report: &mut ValidationReport) {
        if !(self.bid.is_finite() && self.bid >= 0.0) {
            report.push(Violation::InvalidBid { id: self.id.clone(), bid: self.bid });
        }
        match (self.basis, self.response_rate) {
            (PaymentBasis::PerResponse, None) => {
                report.push(Violation::MissingResponseRate { id: self.id.clone() })
            }
            (PaymentBasis::PerResponse, Some(rate)) if !(0.0..=1.0).contains(&rate) => report
                .push(Violation::ResponseRateOutOfRange { id: self.id.clone(), rate }),
            (PaymentBasis::PerAdCall, Some(rate)) if rate != 1.0 => {
                report.push(Violation::RateOnPerAdCall { id: self.id.clone(), rate })
            }
            _ => {}
        }
        if let Some(cap) = self.cap {
            if !(0.0..=1.0).contains(&cap) {
                report.push(Violation::InvalidCap { id: self.id.clone(), cap });
            }
        }
    }
}

/// Expected value of an offer: the bid times the response rate.
pub fn expected_value(offer: &Offer) -> Result<f64> {
    let mut report = ValidationReport::default();
    offer.check(&mut report);
    if !report.is_empty() {
        return Err(report.into());
    }
    let rate = offer.effective_rate().unwrap_or(1.0);
    Ok(offer.bid * rate)
}

/// Symmetric positive semidefinite matrix of return covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerances(entries, SYM_TOL, PSD_TOL)
    }

    pub fn with_tolerances(entries: DMatrix<f64>, sym_tol: f64, psd_tol: f64) -> Result<Self> {
        let mut report = ValidationReport::default();
        if entries.nrows() != entries.ncols() {
            report.push(Violation::DimensionMismatch {
                offers: entries.nrows(),
                rows: entries.nrows(),
                cols: vec![entries.ncols(); entries.nrows()],
            });
        } else {
            check_covariance(&entries, sym_tol, psd_tol, &mut report);
        }
        report.into_result(CovarianceMatrix(entries)).map_err(Error::from)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut report = ValidationReport::default();
        match matrix_from_rows(rows, rows.len(), &mut report) {
            Some(m) => Self::new(m),
            None => Err(report.into()),
        }
    }

    pub fn identity(n: usize) -> Self {
        CovarianceMatrix(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.0.row(i).iter().copied().collect()).collect()
    }
}

/// Publisher risk aversion `q >= 0`; zero is risk neutral.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RiskParameter(f64);

impl RiskParameter {
    pub const NEUTRAL: RiskParameter = RiskParameter(0.0);

    pub fn new(q: f64) -> Result<Self> {
        let mut report = ValidationReport::default();
        check_risk(q, &mut report);
        report.into_result(RiskParameter(q)).map_err(Error::from)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_risk(q: f64, report: &mut ValidationReport) {
    if !q.is_finite() {
        report.push(Violation::NonFiniteRisk);
    } else if q < 0.0 {
        report.push(Violation::NegativeRisk { q });
    }
}

/// Unvalidated market description, e.g. as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInput {
    pub offers: Vec<Offer>,
    /// Dense row-major covariance.
    pub covariance: Vec<Vec<f64>>,
    pub q: f64,
    pub pool_size: u64,
}

/// A validated auction input. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    offers: Vec<Offer>,
    sigma: CovarianceMatrix,
    q: RiskParameter,
    pool_size: u64,
    mu: Vec<f64>,
}

/// Checks every market invariant and reports all failures at once.
pub fn validate_market(raw: MarketInput) -> Result<MarketInstance, ValidationReport> {
    let mut report = ValidationReport::default();
    let n = raw.offers.len();
    if n < 2 {
        report.push(Violation::TooFewOffers { count: n });
    }
    let mut seen = HashSet::new();
    for offer in &raw.offers {
        if !seen.insert(offer.id.as_str()) {
            report.push(Violation::DuplicateId { id: offer.id.clone() });
        }
        offer.check(&mut report);
    }
    let caps: Vec<f64> = raw.offers.iter().map(|o| o.cap.unwrap_or(1.0)).collect();
    if raw.offers.iter().any(|o| o.cap.is_some()) && caps.iter().all(|c| (0.0..=1.0).contains(c)) {
        let total: f64 = caps.iter().sum();
        if total < 1.0 {
            report.push(Violation::CapsBelowPool { total });
        }
    }
    check_risk(raw.q, &mut report);
    if raw.pool_size == 0 {
        report.push(Violation::ZeroPoolSize);
    }
    let sigma = matrix_from_rows(&raw.covariance, n, &mut report);
    if let Some(ref s) = sigma {
        check_covariance(s, SYM_TOL, PSD_TOL, &mut report);
    }
    if !report.is_empty() {
        return Err(report);
    }
    let mu = raw
        .offers
        .iter()
        .map(|o| o.bid * o.effective_rate().unwrap_or(1.0))
        .collect();
    Ok(MarketInstance {
        offers: raw.offers,
        sigma: CovarianceMatrix(sigma.expect("checked above")),
        q: RiskParameter(raw.q),
        pool_size: raw.pool_size,
        mu,
    })
}

impl MarketInstance {
    pub fn new(offers: Vec<Offer>, sigma: CovarianceMatrix, q: f64, pool_size: u64) -> Result<Self> {
        let covariance = sigma.to_rows();
        validate_market(MarketInput { offers, covariance, q, pool_size }).map_err(Error::from)
    }

    /// Market of per-ad-call offers whose bids are the given expected values.
    pub fn from_values(mu: &[f64], sigma: CovarianceMatrix, q: f64, pool_size: u64) -> Result<Self> {
        let offers = mu
            .iter()
            .enumerate()
            .map(|(i, &v)| Offer::per_ad_call(format!("offer-{}", i + 1), v))
            .collect();
        Self::new(offers, sigma, q, pool_size)
    }

    pub fn len(&self) -> usize {
        self.offers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offers.is_empty()
    }

    pub fn offers(&self) -> &[Offer] {
        &self.offers
    }

    pub fn sigma(&self) -> &CovarianceMatrix {
        &self.sigma
    }

    pub fn q(&self) -> f64 {
        self.q.value()
    }

    pub fn pool_size(&self) -> u64 {
        self.pool_size
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Per-offer caps as fractions of the pool, if any offer carries one.
    pub fn caps(&self) -> Option<Vec<f64>> {
        if self.offers.iter().any(|o| o.cap.is_some()) {
            Some(self.offers.iter().map(|o| o.cap.unwrap_or(1.0)).collect())
        } else {
            None
        }
    }

    /// Same market with offer `index` reporting expected value `value`.
    ///
    /// The bid is rescaled to match; `mu[index]` is set to `value` exactly.
    pub fn with_reported_value(&self, index: usize, value: f64) -> Result<Self> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange { index, len: self.len() });
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::InvalidReport { index, value, reason: "must be finite and nonnegative" });
        }
        let mut next = self.clone();
        let offer = &mut next.offers[index];
        offer.bid = match offer.effective_rate() {
            Some(rate) if rate > 0.0 => value / rate,
            _ if value == 0.0 => offer.bid,
            _ => {
                return Err(Error::InvalidReport {
                    index,
                    value,
                    reason: "zero response rate pins the expected value at 0",
                })
            }
        };
        next.mu[index] = value;
        Ok(next)
    }

    /// Same market with a different risk parameter.
    pub fn with_risk(&self, q: f64) -> Result<Self> {
        let q = RiskParameter::new(q)?;
        let mut next = self.clone();
        next.q = q;
        Ok(next)
    }

    pub fn to_input(&self) -> MarketInput {
        MarketInput {
            offers: self.offers.clone(),
            covariance: self.sigma.to_rows(),
            q: self.q(),
            pool_size: self.pool_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_offers() -> Vec<Offer> {
        vec![Offer::per_ad_call("a", 1.0), Offer::per_ad_call("b", 0.8)]
    }

    #[test]
    fn expected_value_examples() {
        assert_eq!(expected_value(&Offer::per_response("x", 2.0, 0.5)).unwrap(), 1.0);
        assert_eq!(expected_value(&Offer::per_ad_call("x", 3.0)).unwrap(), 3.0);
        assert_eq!(expected_value(&Offer::per_response("x", 2.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn missing_rate_is_a_validation_error() {
        let offer = Offer {
            id: "x".into(),
            bid: 2.0,
            basis: PaymentBasis::PerResponse,
            response_rate: None,
            cap: None,
        };
        match expected_value(&offer) {
            Err(Error::Validation(r)) => {
                assert_eq!(r.violations, vec![Violation::MissingResponseRate { id: "x".into() }])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn valid_market_is_accepted() {
        let m = MarketInstance::new(two_offers(), CovarianceMatrix::identity(2), 0.5, 1000).unwrap();
        assert_eq!(m.mu(), &[1.0, 0.8]);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn asymmetric_covariance_is_rejected() {
        let raw = MarketInput {
            offers: two_offers(),
            covariance: vec![vec![1.0, 0.5], vec![0.4, 1.0]],
            q: 0.5,
            pool_size: 1000,
        };
        let report = validate_market(raw).unwrap_err();
        assert_eq!(
            report.violations,
            vec![Violation::Asymmetric { row: 0, col: 1, upper: 0.5, lower: 0.4 }]
        );
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let raw = MarketInput {
            offers: two_offers(),
            covariance: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            q: 0.5,
            pool_size: 1000,
        };
        let report = validate_market(raw).unwrap_err();
        match report.violations.as_slice() {
            [Violation::NotPositiveSemidefinite { min_eigenvalue, .. }] => {
                assert!((min_eigenvalue + 1.0).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_violation_is_reported() {
        let raw = MarketInput {
            offers: vec![Offer::per_response("a", -1.0, 1.5)],
            covariance: vec![vec![1.0, 0.0]],
            q: -0.1,
            pool_size: 0,
        };
        let report = validate_market(raw).unwrap_err();
        let kinds: Vec<_> = report.violations.iter().map(std::mem::discriminant).collect();
        assert_eq!(kinds.len(), 6, "{report}");
        assert!(report.violations.contains(&Violation::TooFewOffers { count: 1 }));
        assert!(report.violations.contains(&Violation::NegativeRisk { q: -0.1 }));
        assert!(report.violations.contains(&Violation::ZeroPoolSize));
    }

    #[test]
    fn single_offer_is_rejected() {
        let raw = MarketInput {
            offers: vec![Offer::per_ad_call("a", 1.0)],
            covariance: vec![vec![1.0]],
            q: 0.5,
            pool_size: 10,
        };
        assert_eq!(
            validate_market(raw).unwrap_err().violations,
            vec![Violation::TooFewOffers { count: 1 }]
        );
    }

    #[test]
    fn caps_must_cover_the_pool() {
        let offers = vec![
            Offer::per_ad_call("a", 1.0).with_cap(0.3),
            Offer::per_ad_call("b", 1.0).with_cap(0.3),
        ];
        let err = MarketInstance::new(offers, CovarianceMatrix::identity(2), 1.0, 10).unwrap_err();
        assert!(err.to_string().contains("caps sum"));
    }

    #[test]
    fn reported_value_rescales_bid() {
        let offers = vec![Offer::per_response("a", 2.0, 0.5), Offer::per_ad_call("b", 0.8)];
        let m = MarketInstance::new(offers, CovarianceMatrix::identity(2), 0.5, 10).unwrap();
        let d = m.with_reported_value(0, 1.5).unwrap();
        assert_eq!(d.mu()[0], 1.5);
        assert_eq!(d.offers()[0].bid, 3.0);
        assert!(m.with_reported_value(0, -1.0).is_err());
        assert!(m.with_reported_value(5, 1.0).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn expected_value_is_monotone(bid in 0.0..100.0f64, extra in 0.0..10.0f64,
                                      rate in 0.0..1.0f64, bump in 0.0..1.0f64) {
            let rate2 = (rate + bump).min(1.0);
            let base = expected_value(&Offer::per_response("x", bid, rate)).unwrap();
            let more_bid = expected_value(&Offer::per_response("x", bid + extra, rate)).unwrap();
            let more_rate = expected_value(&Offer::per_response("x", bid, rate2)).unwrap();
            prop_assert!(more_bid >= base);
            prop_assert!(more_rate >= base);
        }
    }
}
