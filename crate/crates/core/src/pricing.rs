//! VCG charges.
//!
//! Offer `i` pays `h_i - (others' value at the chosen allocation)`, where the
//! Clarke pivot `h_i` is the best total value attainable with offer `i`
//! pinned to zero. The risk participant is charged the expected revenue the
//! publisher gives up by being risk averse. That charge is reported but not
//! counted in publisher revenue.

use rayon::prelude::*;
use serde::Serialize;

use crate::allocation::{allocate, market_problem, qmap_allocate, qmap_transform, Allocation, QmapInstance};
use crate::error::{Error, Result, Violation};
use crate::linalg::dot;
use crate::market::{MarketInstance, PaymentBasis};
use crate::qp::{solve, QpProblem, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSchedule {
    /// Per-allocation VCG price of each offer.
    pub offer_prices: Vec<f64>,
    /// Charge to the risk-aversion participant; absent for call-count instances.
    pub risk_charge: Option<f64>,
    pub publisher_revenue: f64,
    /// Price per ad call; absent when the offer gets less than one rounded call.
    pub per_ad_call: Vec<Option<f64>>,
    /// Price per response; only for per-response offers with a positive rate.
    pub per_response: Vec<Option<f64>>,
    /// Clarke pivots `h_i`, kept for audit.
    pub restricted_objectives: Vec<f64>,
    /// Best expected revenue with risk aversion removed.
    pub risk_neutral_objective: Option<f64>,
}

/// Clarke pivot: optimum of `problem` with coordinate `index` pinned to zero.
fn clarke_pivot(problem: &QpProblem, index: usize, config: &SolverConfig) -> Result<f64> {
    Ok(solve(&problem.pinned(index), config)?.objective_value)
}

/// `h_i - (total - own value)` for every participant, pivots solved in parallel.
fn vcg_offer_prices(
    problem: &QpProblem,
    total: f64,
    own_values: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if problem.dim() < 2 {
        return Err(Error::single(Violation::TooFewOffers { count: problem.dim() }));
    }
    let pivots: Vec<f64> = (0..problem.dim())
        .into_par_iter()
        .map(|i| clarke_pivot(problem, i, config))
        .collect::<Result<_>>()?;
    let prices = pivots.iter().zip(own_values).map(|(h, own)| h - (total - own)).collect();
    Ok((prices, pivots))
}

fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        Err(Error::IndexOutOfRange { index, len })
    } else {
        Ok(())
    }
}

/// VCG price of offer `index` given the market's allocation.
pub fn price_offer(market: &MarketInstance, alloc: &Allocation, index: usize, config: &SolverConfig) -> Result<f64> {
    check_index(index, market.len())?;
    let h = clarke_pivot(&market_problem(market), index, config)?;
    let own = alloc.weights[index] * market.mu()[index];
    Ok(h - (alloc.objective_value - own))
}

/// Best expected revenue over the feasible allocations, ignoring risk.
fn risk_neutral_objective(market: &MarketInstance, config: &SolverConfig) -> Result<f64> {
    let mut problem = market_problem(market);
    problem.risk = 0.0;
    Ok(solve(&problem, config)?.objective_value)
}

/// Expected revenue foregone due to risk aversion: `max_w w'mu - w*'mu`.
pub fn price_risk_participant(market: &MarketInstance, alloc: &Allocation, config: &SolverConfig) -> Result<f64> {
    let h = risk_neutral_objective(market, config)?;
    Ok(h - dot(&alloc.weights, market.mu()))
}

/// Full schedule for an allocation already computed with [`allocate`].
pub fn price_schedule_for(market: &MarketInstance, alloc: &Allocation, config: &SolverConfig) -> Result<PriceSchedule> {
    let own: Vec<f64> = alloc.weights.iter().zip(market.mu()).map(|(w, m)| w * m).collect();
    let (offer_prices, restricted_objectives) =
        vcg_offer_prices(&market_problem(market), alloc.objective_value, &own, config)?;
    let h_neutral = risk_neutral_objective(market, config)?;
    let risk_charge = h_neutral - dot(&alloc.weights, market.mu());

    let per_ad_call = per_call(&offer_prices, alloc);
    let per_response = market
        .offers()
        .iter()
        .zip(&per_ad_call)
        .map(|(offer, pac)| match (offer.basis, offer.response_rate, pac) {
            (PaymentBasis::PerResponse, Some(rate), Some(pac)) if rate > 0.0 => Some(pac / rate),
            _ => None,
        })
        .collect();
    Ok(PriceSchedule {
        publisher_revenue: offer_prices.iter().sum(),
        offer_prices,
        risk_charge: Some(risk_charge),
        per_ad_call,
        per_response,
        restricted_objectives,
        risk_neutral_objective: Some(h_neutral),
    })
}

/// Allocates and prices in one pass.
pub fn price_schedule(market: &MarketInstance, config: &SolverConfig) -> Result<PriceSchedule> {
    let alloc = allocate(market, config)?;
    price_schedule_for(market, &alloc, config)
}

fn per_call(prices: &[f64], alloc: &Allocation) -> Vec<Option<f64>> {
    prices
        .iter()
        .zip(alloc.call_counts.iter().zip(&alloc.rounded_calls))
        .map(|(p, (calls, rounded))| (*rounded >= 1 && *calls > 0.0).then(|| p / calls))
        .collect()
}

/// Offer prices for a call-count instance: `h_i - (total - c_i k*_i)`,
/// with `-q b'k` counted in the risk participant's valuation.
pub fn qmap_prices(instance: &QmapInstance, config: &SolverConfig) -> Result<(Allocation, PriceSchedule)> {
    let problem = qmap_transform(instance)?;
    let alloc = qmap_allocate(instance, config)?;
    let own: Vec<f64> = alloc.call_counts.iter().zip(instance.c()).map(|(k, c)| k * c).collect();
    let (offer_prices, restricted_objectives) = vcg_offer_prices(&problem, alloc.objective_value, &own, config)?;
    let schedule = PriceSchedule {
        publisher_revenue: offer_prices.iter().sum(),
        per_ad_call: per_call(&offer_prices, &alloc),
        per_response: vec![None; offer_prices.len()],
        offer_prices,
        risk_charge: None,
        restricted_objectives,
        risk_neutral_objective: None,
    };
    Ok((alloc, schedule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::QmapForm;
    use crate::market::{CovarianceMatrix, Offer};
    use approx::assert_abs_diff_eq;

    fn config() -> SolverConfig {
        SolverConfig::default()
    }

    fn derived() -> MarketInstance {
        MarketInstance::from_values(&[1.0, 0.8], CovarianceMatrix::identity(2), 0.5, 1000).unwrap()
    }

    #[test]
    fn derived_offer_prices() {
        // h_1 = 0.8 - 0.5 = 0.3, others' value 0.66 - 0.6 = 0.06
        // h_2 = 1.0 - 0.5 = 0.5, others' value 0.66 - 0.32 = 0.34
        let m = derived();
        let a = allocate(&m, &config()).unwrap();
        assert_abs_diff_eq!(price_offer(&m, &a, 0, &config()).unwrap(), 0.24, epsilon = 1e-12);
        assert_abs_diff_eq!(price_offer(&m, &a, 1, &config()).unwrap(), 0.16, epsilon = 1e-12);
        assert_abs_diff_eq!(price_risk_participant(&m, &a, &config()).unwrap(), 0.08, epsilon = 1e-12);
        assert!(matches!(price_offer(&m, &a, 2, &config()), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn derived_schedule_with_conversions() {
        let offers = vec![Offer::per_response("a", 10.0, 0.1), Offer::per_ad_call("b", 0.8)];
        let m = MarketInstance::new(offers, CovarianceMatrix::identity(2), 0.5, 1000).unwrap();
        let s = price_schedule(&m, &config()).unwrap();
        assert_abs_diff_eq!(s.offer_prices[0], 0.24, epsilon = 1e-12);
        assert_abs_diff_eq!(s.offer_prices[1], 0.16, epsilon = 1e-12);
        assert_abs_diff_eq!(s.risk_charge.unwrap(), 0.08, epsilon = 1e-12);
        assert_abs_diff_eq!(s.publisher_revenue, 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(s.per_ad_call[0].unwrap(), 0.0004, epsilon = 1e-15);
        assert_abs_diff_eq!(s.per_ad_call[1].unwrap(), 0.0004, epsilon = 1e-15);
        assert_abs_diff_eq!(s.per_response[0].unwrap(), 0.004, epsilon = 1e-14);
        assert_eq!(s.per_response[1], None);
        assert_abs_diff_eq!(s.restricted_objectives[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.restricted_objectives[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn risk_neutral_second_price() {
        let m = MarketInstance::from_values(&[2.0, 1.0], CovarianceMatrix::identity(2), 0.0, 10).unwrap();
        let s = price_schedule(&m, &config()).unwrap();
        assert_eq!(s.offer_prices, vec![1.0, 0.0]);
        assert_eq!(s.risk_charge, Some(0.0));
        assert_eq!(s.publisher_revenue, 1.0);
        assert_eq!(s.per_ad_call[1], None);
    }

    #[test]
    fn equal_values_forgo_nothing() {
        let m = MarketInstance::from_values(&[1.0, 1.0], CovarianceMatrix::identity(2), 3.0, 10).unwrap();
        let a = allocate(&m, &config()).unwrap();
        assert_abs_diff_eq!(price_risk_participant(&m, &a, &config()).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn irrelevant_offer_pays_nothing() {
        let m = MarketInstance::from_values(&[5.0, 4.0, 0.0], CovarianceMatrix::identity(3), 0.0, 10).unwrap();
        let s = price_schedule(&m, &config()).unwrap();
        assert_eq!(s.offer_prices, vec![4.0, 0.0, 0.0]);
    }

    #[test]
    fn hedging_offer_gets_paid() {
        // offer 2 is worth little but moves against offer 1
        let s = CovarianceMatrix::from_rows(&[vec![1.0, -0.9], vec![-0.9, 1.0]]).unwrap();
        let m = MarketInstance::from_values(&[1.0, 0.2], s, 2.0, 100).unwrap();
        let a = allocate(&m, &config()).unwrap();
        let s = price_schedule_for(&m, &a, &config()).unwrap();
        assert!(s.offer_prices[1] < 0.0, "{s:?}");
        assert!(a.weights[1] * m.mu()[1] - s.offer_prices[1] >= 0.0);
    }

    #[test]
    fn caps_enter_the_risk_neutral_benchmark() {
        let offers = vec![
            Offer::per_ad_call("a", 2.0).with_cap(0.5),
            Offer::per_ad_call("b", 1.0),
            Offer::per_ad_call("c", 0.5),
        ];
        let m = MarketInstance::new(offers, CovarianceMatrix::identity(3), 0.0, 10).unwrap();
        let s = price_schedule(&m, &config()).unwrap();
        assert_eq!(s.risk_neutral_objective, Some(1.5));
        assert_eq!(s.risk_charge, Some(0.0));
        // h_a = 1.0 vs others' 0.5; h_b = 0.5 * 2 + 0.5 * 0.5 = 1.25 vs others' 1.0
        assert_eq!(s.offer_prices, vec![0.5, 0.25, 0.0]);
    }

    #[test]
    fn pivot_without_enough_capacity_is_infeasible() {
        let offers = vec![Offer::per_ad_call("a", 2.0).with_cap(0.5), Offer::per_ad_call("b", 1.0)];
        let m = MarketInstance::new(offers, CovarianceMatrix::identity(2), 0.0, 10).unwrap();
        assert!(matches!(price_schedule(&m, &config()), Err(Error::Infeasible(_))));
    }

    fn qmap(a: &[Vec<f64>], b: &[f64], c: &[f64], q: f64, m: f64) -> QmapInstance {
        QmapInstance::new(a, b.to_vec(), c.to_vec(), q, m, QmapForm::Max).unwrap()
    }

    #[test]
    fn qmap_linear_second_price() {
        let inst = qmap(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.0, 0.0], &[2.0, 1.0], 1.0, 1.0);
        let (_, s) = qmap_prices(&inst, &config()).unwrap();
        assert_eq!(s.offer_prices, vec![1.0, 0.0]);
        assert_eq!(s.risk_charge, None);
    }

    #[test]
    fn qmap_matches_portfolio_prices() {
        let inst = qmap(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0], &[1.0, 0.8], 0.5, 1.0);
        let (_, s) = qmap_prices(&inst, &config()).unwrap();
        assert_abs_diff_eq!(s.offer_prices[0], 0.24, epsilon = 1e-12);
        assert_abs_diff_eq!(s.offer_prices[1], 0.16, epsilon = 1e-12);
    }

    #[test]
    fn qmap_affine_term_belongs_to_the_risk_participant() {
        // max (c - qb)'k = 1.9 k1 + 0.9 k2 -> k* = (1, 0), objective 1.9
        // h_1 = 0.9; others' value = 1.9 - 2 = -0.1 -> p_1 = 1.0
        let inst = qmap(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.1, 0.1], &[2.0, 1.0], 1.0, 1.0);
        let (alloc, s) = qmap_prices(&inst, &config()).unwrap();
        assert_eq!(alloc.call_counts, vec![1.0, 0.0]);

        // grid oracle for h_1 and the full optimum
        let problem = qmap_transform(&inst).unwrap();
        let (mut full, mut pinned) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..=10_000 {
            let k1 = i as f64 * 1e-4;
            let v = problem.objective(&[k1, 1.0 - k1]);
            full = full.max(v);
            if k1 == 0.0 {
                pinned = v;
            }
        }
        let oracle = pinned - (full - 2.0);
        assert_abs_diff_eq!(oracle, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.offer_prices[0], oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(s.offer_prices[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_offer_qmap_cannot_be_priced() {
        let inst = qmap(&[vec![1.0]], &[0.0], &[1.0], 1.0, 1.0);
        assert!(matches!(qmap_prices(&inst, &config()), Err(Error::Validation(_))));
    }
}
