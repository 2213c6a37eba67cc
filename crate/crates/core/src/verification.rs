//! Empirical checks of the mechanism's properties against independent
//! computations: truthful reporting is a dominant strategy, participation
//! never loses money in expectation, a risk-neutral publisher reduces to a
//! second-price auction, and the solver matches exhaustive lattice search.
//!
//! Every randomized suite is reproducible from `(seed, trials, config)`.
//! Trial `t` draws from a ChaCha stream selected by `t`, trials run in
//! parallel, and results are folded in trial order.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::allocation::{allocate, market_problem, qmap_allocate, qmap_transform, Allocation, QmapForm, QmapInstance};
use crate::error::{Error, Result};
use crate::market::{CovarianceMatrix, MarketInstance};
use crate::pricing::{price_offer, price_schedule_for, qmap_prices, PriceSchedule};
use crate::qp::{check_kkt, SolverConfig};

/// Slack separating solver noise from genuine property violations.
pub const EPS_PRICE: f64 = 1e-6;
/// Allowed gap between the solver and lattice search at step 1e-3.
pub const ORACLE_TOL: f64 = 1e-4;
pub const ORACLE_STEP: f64 = 1e-3;
const MAX_COUNTEREXAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub eps_price: f64,
    pub solver: SolverConfig,
    /// Largest market drawn by the randomized suites.
    pub max_offers: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { eps_price: EPS_PRICE, solver: SolverConfig::default(), max_offers: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Truthfulness,
    IndividualRationality,
    SecondPrice,
    Oracle,
    QmapConsistency,
}

impl Property {
    pub fn name(self) -> &'static str {
        match self {
            Property::Truthfulness => "truthfulness",
            Property::IndividualRationality => "ir",
            Property::SecondPrice => "second_price",
            Property::Oracle => "oracle",
            Property::QmapConsistency => "qmap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub trial: usize,
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub property: Property,
    pub trials: usize,
    pub violations: usize,
    /// Trials whose preconditions did not hold (ties, negative reports).
    pub skipped: usize,
    /// Most negative slack seen; `None` when nothing was checked.
    pub worst_margin: Option<f64>,
    pub seed: Option<u64>,
    pub counterexamples: Vec<Counterexample>,
    /// Side check: the full optimum dominates every pinned optimum.
    pub restriction_checks: usize,
    pub restriction_violations: usize,
}

impl PropertyReport {
    fn new(property: Property, seed: Option<u64>) -> Self {
        PropertyReport {
            property,
            trials: 0,
            violations: 0,
            skipped: 0,
            worst_margin: None,
            seed,
            counterexamples: Vec::new(),
            restriction_checks: 0,
            restriction_violations: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.restriction_violations == 0
    }

    /// Records one slack value; negative beyond `eps` is a violation.
    fn record(&mut self, trial: usize, margin: f64, eps: f64, detail: impl FnOnce() -> String) {
        self.worst_margin = Some(self.worst_margin.map_or(margin, |w| w.min(margin)));
        if margin.is_nan() || margin < -eps {
            self.violations += 1;
            if self.counterexamples.len() < MAX_COUNTEREXAMPLES {
                self.counterexamples.push(Counterexample { trial, margin, detail: detail() });
            }
        }
    }

    fn record_error(&mut self, trial: usize, err: &Error) {
        self.violations += 1;
        if self.counterexamples.len() < MAX_COUNTEREXAMPLES {
            self.counterexamples.push(Counterexample {
                trial,
                margin: f64::NEG_INFINITY,
                detail: format!("solver error: {err}"),
            });
        }
    }

    fn record_restriction(&mut self, full: f64, pivots: &[f64], eps: f64) {
        for &h in pivots {
            self.restriction_checks += 1;
            if (full - h).is_nan() || full - h < -eps {
                self.restriction_violations += 1;
            }
        }
    }

    fn merge(&mut self, other: PropertyReport) {
        self.trials += other.trials;
        self.violations += other.violations;
        self.skipped += other.skipped;
        self.worst_margin = match (self.worst_margin, other.worst_margin) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let room = MAX_COUNTEREXAMPLES.saturating_sub(self.counterexamples.len());
        self.counterexamples.extend(other.counterexamples.into_iter().take(room));
        self.restriction_checks += other.restriction_checks;
        self.restriction_violations += other.restriction_violations;
    }
}

/// Bidder `index`'s realized utility: true value of its share minus its price.
pub fn utility(market: &MarketInstance, alloc: &Allocation, schedule: &PriceSchedule, index: usize) -> Result<f64> {
    if index >= market.len() {
        return Err(Error::IndexOutOfRange { index, len: market.len() });
    }
    Ok(alloc.weights[index] * market.mu()[index] - schedule.offer_prices[index])
}

fn check_truthfulness_into(
    report: &mut PropertyReport,
    trial: usize,
    market: &MarketInstance,
    index: usize,
    deltas: &[f64],
    config: &VerifyConfig,
) -> Result<()> {
    let solver = &config.solver;
    let truth = allocate(market, solver)?;
    let true_value = market.mu()[index];
    let u_truth = truth.weights[index] * true_value - price_offer(market, &truth, index, solver)?;
    for &delta in deltas {
        let reported = true_value + delta;
        if reported.is_nan() || reported < 0.0 {
            report.skipped += 1;
            continue;
        }
        let deviated = market.with_reported_value(index, reported)?;
        let alloc = allocate(&deviated, solver)?;
        let price = price_offer(&deviated, &alloc, index, solver)?;
        let u_dev = alloc.weights[index] * true_value - price;
        report.trials += 1;
        report.record(trial, u_truth - u_dev, config.eps_price, || {
            format!("offer {index}, delta {delta}: truthful utility {u_truth}, deviating utility {u_dev}")
        });
    }
    Ok(())
}

/// Compares bidder `index`'s truthful utility with its true utility after
/// misreporting `mu[index] + delta` for each delta. Negative reports are skipped.
pub fn check_truthfulness(
    market: &MarketInstance,
    index: usize,
    deltas: &[f64],
    config: &VerifyConfig,
) -> Result<PropertyReport> {
    if index >= market.len() {
        return Err(Error::IndexOutOfRange { index, len: market.len() });
    }
    let mut report = PropertyReport::new(Property::Truthfulness, None);
    check_truthfulness_into(&mut report, 0, market, index, deltas, config)?;
    Ok(report)
}

fn check_ir_into(report: &mut PropertyReport, trial: usize, market: &MarketInstance, config: &VerifyConfig) -> Result<()> {
    let alloc = allocate(market, &config.solver)?;
    let schedule = price_schedule_for(market, &alloc, &config.solver)?;
    report.trials += 1;
    for i in 0..market.len() {
        let margin = utility(market, &alloc, &schedule, i)?;
        report.record(trial, margin, config.eps_price, || {
            format!("offer {i}: value {} but price {}", alloc.weights[i] * market.mu()[i], schedule.offer_prices[i])
        });
    }
    let risk = schedule.risk_charge.unwrap_or(0.0);
    report.record(trial, risk, config.eps_price, || format!("risk charge {risk} is negative"));
    report.record_restriction(alloc.objective_value, &schedule.restricted_objectives, config.eps_price);
    Ok(())
}

/// Every offer's utility is nonnegative and the risk charge is nonnegative.
pub fn check_individual_rationality(market: &MarketInstance, config: &VerifyConfig) -> Result<PropertyReport> {
    let mut report = PropertyReport::new(Property::IndividualRationality, None);
    check_ir_into(&mut report, 0, market, config)?;
    Ok(report)
}

/// Winner and runner-up by expected value; `None` on a tie for first.
fn top_two(mu: &[f64]) -> Option<(usize, f64)> {
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]));
    (mu[order[0]] > mu[order[1]]).then(|| (order[0], mu[order[1]]))
}

fn check_second_price_into(
    report: &mut PropertyReport,
    trial: usize,
    market: &MarketInstance,
    config: &VerifyConfig,
) -> Result<()> {
    if market.q() != 0.0 {
        return Err(Error::Precondition(format!("second-price check needs q = 0, got {}", market.q())));
    }
    let Some((winner, second)) = top_two(market.mu()) else {
        report.trials += 1;
        report.skipped += 1;
        return Ok(());
    };
    let alloc = allocate(market, &config.solver)?;
    let schedule = price_schedule_for(market, &alloc, &config.solver)?;
    report.trials += 1;
    let eps = config.eps_price;
    for i in 0..market.len() {
        let (want_w, want_p) = if i == winner { (1.0, second) } else { (0.0, 0.0) };
        let (w, p) = (alloc.weights[i], schedule.offer_prices[i]);
        report.record(trial, -(w - want_w).abs(), eps, || format!("offer {i}: weight {w}, expected {want_w}"));
        report.record(trial, -(p - want_p).abs(), eps, || format!("offer {i}: price {p}, expected {want_p}"));
    }
    let risk = schedule.risk_charge.unwrap_or(0.0);
    report.record(trial, -risk.abs(), eps, || format!("risk charge {risk}, expected 0"));
    report.record_restriction(alloc.objective_value, &schedule.restricted_objectives, eps);
    Ok(())
}

/// With a risk-neutral publisher and a unique top offer, the winner takes
/// the pool and pays the second-highest expected value; all else is zero.
pub fn check_second_price_limit(market: &MarketInstance, config: &VerifyConfig) -> Result<PropertyReport> {
    let mut report = PropertyReport::new(Property::SecondPrice, None);
    check_second_price_into(&mut report, 0, market, config)?;
    Ok(report)
}

/// Best point of the simplex lattice with spacing `step`. Respects caps.
pub fn brute_force_allocate(market: &MarketInstance, step: f64) -> Result<Allocation> {
    let n = market.len();
    if n > 4 {
        return Err(Error::Precondition(format!("lattice search supports at most 4 offers, got {n}")));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Precondition(format!("lattice step {step} must lie in (0, 1]")));
    }
    let problem = market_problem(market);
    let caps = market.caps();
    let mu = market.mu();
    let q = market.q();
    let sigma: Vec<f64> = market.sigma().matrix().transpose().iter().copied().collect();
    let objective = |w: &[f64]| -> f64 {
        let mut lin = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            lin += mu[i] * w[i];
            let row = &sigma[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * w[j];
            }
            quad += w[i] * acc;
        }
        lin - q * quad
    };
    let divisions = (1.0 / step).round() as usize;
    let h = 1.0 / divisions as f64;

    let mut best_value = f64::NEG_INFINITY;
    let mut best = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let mut w = vec![0.0; n];
    // enumerate compositions of `divisions` into n nonnegative parts
    loop {
        let used: usize = counts[..n - 1].iter().sum();
        if used <= divisions {
            counts[n - 1] = divisions - used;
            for (wi, &c) in w.iter_mut().zip(&counts) {
                *wi = c as f64 * h;
            }
            let within_caps = caps.as_ref().is_none_or(|u| w.iter().zip(u).all(|(a, b)| *a <= *b));
            if within_caps {
                let v = objective(&w);
                if v > best_value {
                    best_value = v;
                    best.clone_from(&w);
                }
            }
        }
        // odometer over the first n-1 parts
        let mut k = 0;
        loop {
            if k == n - 1 {
                return finish_lattice(market, &problem, best, best_value);
            }
            counts[k] += 1;
            if counts[..n - 1].iter().sum::<usize>() <= divisions {
                break;
            }
            counts[k] = 0;
            k += 1;
        }
    }
}

fn finish_lattice(
    market: &MarketInstance,
    problem: &crate::qp::QpProblem,
    weights: Vec<f64>,
    value: f64,
) -> Result<Allocation> {
    if !value.is_finite() {
        return Err(Error::Precondition("no lattice point satisfies the caps".into()));
    }
    let pool = market.pool_size() as f64;
    let call_counts: Vec<f64> = weights.iter().map(|w| w * pool).collect();
    let kkt = check_kkt(problem, &weights, 0.0)?;
    Ok(Allocation {
        rounded_calls: crate::allocation::apportion(&call_counts, market.pool_size()),
        call_counts,
        weights,
        objective_value: value,
        degenerate: false,
        iterations: 0,
        kkt_residual: kkt.residual,
    })
}

/// Random PSD covariance `G'G + delta I` with standard normal `G`.
pub fn random_covariance<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CovarianceMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = g.transpose() * &g + DMatrix::identity(n, n) * 1e-6;
    // exact symmetry so validation sees no rounding asymmetry
    let s = DMatrix::from_fn(n, n, |i, j| if i <= j { s[(i, j)] } else { s[(j, i)] });
    CovarianceMatrix::new(s).expect("Gram matrix plus ridge is PSD")
}

/// Risk parameter log-uniform on [1e-3, 10].
pub fn random_risk<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    10f64.powf(rng.random_range(-3.0..=1.0))
}

/// Random market: values uniform on [0, 5], random covariance, given q.
pub fn random_market<R: Rng + ?Sized>(rng: &mut R, n: usize, q: f64) -> MarketInstance {
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    let sigma = random_covariance(rng, n);
    MarketInstance::from_values(&mu, sigma, q, 1000).expect("generated market is valid")
}

/// Deterministic per-trial generator.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn run_suite<F>(property: Property, seed: u64, trials: usize, trial: F) -> PropertyReport
where
    F: Fn(&mut PropertyReport, usize, &mut ChaCha8Rng) -> Result<()> + Sync,
{
    let parts: Vec<PropertyReport> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut part = PropertyReport::new(property, Some(seed));
            let mut rng = trial_rng(seed, t);
            if let Err(e) = trial(&mut part, t, &mut rng) {
                part.trials += 1;
                part.record_error(t, &e);
            }
            part
        })
        .collect();
    let mut report = PropertyReport::new(property, Some(seed));
    for part in parts {
        report.merge(part);
    }
    report
}

fn draw_n(rng: &mut ChaCha8Rng, config: &VerifyConfig) -> usize {
    rng.random_range(2..=config.max_offers.max(2))
}

/// `trials` random (market, bidder, delta) samples, delta uniform on [-mu_i, 5].
pub fn truthfulness_suite(seed: u64, trials: usize, config: &VerifyConfig) -> PropertyReport {
    run_suite(Property::Truthfulness, seed, trials, |report, t, rng| {
        let n = draw_n(rng, config);
        let q = random_risk(rng);
        let market = random_market(rng, n, q);
        let index = rng.random_range(0..n);
        let mu = market.mu()[index];
        let delta = rng.random_range(-mu..=5.0);
        check_truthfulness_into(report, t, &market, index, &[delta], config)?;
        let alloc = allocate(&market, &config.solver)?;
        let schedule = price_schedule_for(&market, &alloc, &config.solver)?;
        report.record_restriction(alloc.objective_value, &schedule.restricted_objectives, config.eps_price);
        Ok(())
    })
}

pub fn individual_rationality_suite(seed: u64, trials: usize, config: &VerifyConfig) -> PropertyReport {
    run_suite(Property::IndividualRationality, seed, trials, |report, t, rng| {
        let n = draw_n(rng, config);
        let q = 5.0 * rng.random::<f64>();
        let market = random_market(rng, n, q);
        check_ir_into(report, t, &market, config)
    })
}

pub fn second_price_suite(seed: u64, trials: usize, config: &VerifyConfig) -> PropertyReport {
    run_suite(Property::SecondPrice, seed, trials, |report, t, rng| {
        let n = draw_n(rng, config);
        let market = random_market(rng, n, 0.0);
        check_second_price_into(report, t, &market, config)
    })
}

/// Solver against lattice search at step 1e-3 for markets of 2 and 3 offers.
pub fn oracle_suite(seed: u64, trials: usize, config: &VerifyConfig) -> PropertyReport {
    run_suite(Property::Oracle, seed, trials, |report, t, rng| {
        let n = 2 + t % 2;
        let q = random_risk(rng);
        let market = random_market(rng, n, q);
        let alloc = allocate(&market, &config.solver)?;
        let grid = brute_force_allocate(&market, ORACLE_STEP)?;
        let gap = (alloc.objective_value - grid.objective_value).abs();
        report.trials += 1;
        report.record(t, ORACLE_TOL - gap, 0.0, || {
            format!("solver objective {} vs lattice {}", alloc.objective_value, grid.objective_value)
        });
        let schedule = price_schedule_for(&market, &alloc, &config.solver)?;
        report.record_restriction(alloc.objective_value, &schedule.restricted_objectives, config.eps_price);
        Ok(())
    })
}

/// Call-count formulation with `A = Σ, b = 0, m = 1` against the portfolio
/// path, plus min/max-form agreement on a shared lattice.
pub fn qmap_consistency_suite(seed: u64, trials: usize, config: &VerifyConfig) -> PropertyReport {
    run_suite(Property::QmapConsistency, seed, trials, |report, t, rng| {
        let n = draw_n(rng, config);
        let q = random_risk(rng);
        let market = random_market(rng, n, q);
        let eps = config.eps_price;
        let rows = market.sigma().to_rows();
        let inst = QmapInstance::new(&rows, vec![0.0; n], market.mu().to_vec(), q, 1.0, QmapForm::Max)?;
        let alloc = allocate(&market, &config.solver)?;
        let schedule = price_schedule_for(&market, &alloc, &config.solver)?;
        let (k_alloc, k_schedule) = qmap_prices(&inst, &config.solver)?;
        report.trials += 1;
        for i in 0..n {
            let dw = (alloc.weights[i] - k_alloc.call_counts[i]).abs();
            let dp = (schedule.offer_prices[i] - k_schedule.offer_prices[i]).abs();
            report.record(t, -dw, eps, || format!("offer {i}: weight {} vs {}", alloc.weights[i], k_alloc.call_counts[i]));
            report.record(t, -dp, eps, || {
                format!("offer {i}: price {} vs {}", schedule.offer_prices[i], k_schedule.offer_prices[i])
            });
        }
        report.record_restriction(alloc.objective_value, &schedule.restricted_objectives, eps);

        // min form with parameter 1/q must pick the same lattice point
        let min_form = QmapInstance::new(&rows, vec![0.0; n], market.mu().to_vec(), 1.0 / q, 1.0, QmapForm::Min)?;
        let max_problem = qmap_transform(&min_form)?;
        let (argmin, argmax) = lattice_extremes(n.min(3), 0.02, |k| {
            let mut full = vec![0.0; n];
            full[..k.len()].copy_from_slice(k);
            (min_form.min_objective(&full), max_problem.objective(&full))
        });
        let pad = |k: &[f64]| {
            let mut full = vec![0.0; n];
            full[..k.len()].copy_from_slice(k);
            full
        };
        let (at_min, best) = (max_problem.objective(&pad(&argmin)), max_problem.objective(&pad(&argmax)));
        // a different lattice point is only acceptable as an exact-arithmetic tie
        let margin = if argmin == argmax { 0.0 } else { -(best - at_min).abs() / best.abs().max(1.0) };
        report.record(t, margin, 1e-12, || format!("min-form argmin {argmin:?} vs max-form argmax {argmax:?}"));
        let _ = qmap_allocate(&min_form, &config.solver)?;
        Ok(())
    })
}

/// Argmin of the first and argmax of the second objective over the simplex
/// lattice in `n` coordinates.
fn lattice_extremes<F>(n: usize, step: f64, f: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&[f64]) -> (f64, f64),
{
    let divisions = (1.0 / step).round() as usize;
    let mut lo = (f64::INFINITY, Vec::new());
    let mut hi = (f64::NEG_INFINITY, Vec::new());
    let mut visit = |k: &[f64]| {
        let (a, b) = f(k);
        if a < lo.0 {
            lo = (a, k.to_vec());
        }
        if b > hi.0 {
            hi = (b, k.to_vec());
        }
    };
    let h = 1.0 / divisions as f64;
    match n {
        2 => {
            for i in 0..=divisions {
                visit(&[i as f64 * h, (divisions - i) as f64 * h]);
            }
        }
        _ => {
            for i in 0..=divisions {
                for j in 0..=(divisions - i) {
                    visit(&[i as f64 * h, j as f64 * h, (divisions - i - j) as f64 * h]);
                }
            }
        }
    }
    (lo.1, hi.1)
}

/// Runs one named property suite.
pub fn run_property(property: Property, seed: u64, trials: usize, config: &VerifyConfig) -> PropertyReport {
    match property {
        Property::Truthfulness => truthfulness_suite(seed, trials, config),
        Property::IndividualRationality => individual_rationality_suite(seed, trials, config),
        Property::SecondPrice => second_price_suite(seed, trials, config),
        Property::Oracle => oracle_suite(seed, trials, config),
        Property::QmapConsistency => qmap_consistency_suite(seed, trials, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::price_schedule;
    use approx::assert_abs_diff_eq;

    fn config() -> VerifyConfig {
        VerifyConfig::default()
    }

    fn derived() -> MarketInstance {
        MarketInstance::from_values(&[1.0, 0.8], CovarianceMatrix::identity(2), 0.5, 1000).unwrap()
    }

    #[test]
    fn derived_utilities() {
        let m = derived();
        let a = allocate(&m, &SolverConfig::default()).unwrap();
        let s = price_schedule(&m, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(utility(&m, &a, &s, 0).unwrap(), 0.36, epsilon = 1e-12);
        assert_abs_diff_eq!(utility(&m, &a, &s, 1).unwrap(), 0.16, epsilon = 1e-12);
        assert!(utility(&m, &a, &s, 2).is_err());
    }

    #[test]
    fn overbid_example() {
        // mu(+0.2) = (1.2, 0.8): stationarity 0.4 - (2 w1 - 1) = 0 -> w1 = 0.7
        // true utility = -h_1 + w'mu - q w'w = -0.3 + 0.94 - 0.29 = 0.35
        let m = derived();
        let d = m.with_reported_value(0, 1.2).unwrap();
        let a = allocate(&d, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(a.weights[0], 0.7, epsilon = 1e-12);
        let p = price_offer(&d, &a, 0, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(a.weights[0] * 1.0 - p, 0.35, epsilon = 1e-12);

        let r = check_truthfulness(&m, 0, &[0.2, 0.0], &config()).unwrap();
        assert_eq!(r.trials, 2);
        assert_eq!(r.violations, 0);
        assert_abs_diff_eq!(r.worst_margin.unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn losing_bidder_gains_nothing_by_overbidding() {
        let m = MarketInstance::from_values(&[2.0, 1.0], CovarianceMatrix::identity(2), 0.0, 10).unwrap();
        let r = check_truthfulness(&m, 1, &[1.5, -2.0], &config()).unwrap();
        assert_eq!(r.trials, 1);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.violations, 0);
        // u_truth = 0, u_dev = 1 - 2 = -1
        assert_abs_diff_eq!(r.worst_margin.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ir_examples() {
        let r = check_individual_rationality(&derived(), &config()).unwrap();
        assert!(r.passed());
        let m = MarketInstance::from_values(&[2.0, 1.0], CovarianceMatrix::identity(2), 0.0, 10).unwrap();
        let r = check_individual_rationality(&m, &config()).unwrap();
        assert!(r.passed());
        assert_eq!(r.worst_margin, Some(0.0));
    }

    #[test]
    fn second_price_examples() {
        let m = MarketInstance::from_values(&[5.0, 4.0, 3.0], CovarianceMatrix::identity(3), 0.0, 10).unwrap();
        let s = price_schedule(&m, &SolverConfig::default()).unwrap();
        assert_eq!(s.offer_prices, vec![4.0, 0.0, 0.0]);
        assert!(check_second_price_limit(&m, &config()).unwrap().passed());

        let tie = MarketInstance::from_values(&[3.0, 3.0], CovarianceMatrix::identity(2), 0.0, 10).unwrap();
        assert_eq!(check_second_price_limit(&tie, &config()).unwrap().skipped, 1);
        assert!(check_second_price_limit(&derived(), &config()).is_err());
    }

    #[test]
    fn lattice_oracle_examples() {
        let g = brute_force_allocate(&derived(), 1e-4).unwrap();
        assert_abs_diff_eq!(g.objective_value, 0.66, epsilon = 1e-4);
        assert_abs_diff_eq!(g.weights[0], 0.6, epsilon = 1e-4);

        let m = MarketInstance::from_values(&[1.0, 3.0, 2.0], CovarianceMatrix::identity(3), 0.0, 10).unwrap();
        assert_eq!(brute_force_allocate(&m, 0.01).unwrap().weights, vec![0.0, 1.0, 0.0]);

        let m = MarketInstance::from_values(&[1.0, 1.0, 1.0], CovarianceMatrix::identity(3), 1.0, 10).unwrap();
        let g = brute_force_allocate(&m, 0.01).unwrap();
        for w in g.weights {
            assert!((w - 1.0 / 3.0).abs() < 0.01);
        }
        let big = MarketInstance::from_values(&[1.0; 5], CovarianceMatrix::identity(5), 1.0, 10).unwrap();
        assert!(brute_force_allocate(&big, 0.1).is_err());
    }

    #[test]
    fn suites_are_reproducible() {
        let a = truthfulness_suite(7, 20, &config());
        let b = truthfulness_suite(7, 20, &config());
        assert_eq!(a, b);
        assert!(a.passed(), "{a:?}");
        assert_eq!(a.trials + a.skipped, 20);
    }

    #[test]
    fn empty_suite_is_vacuous() {
        let r = individual_rationality_suite(1, 0, &config());
        assert_eq!(r.trials, 0);
        assert!(r.passed());
        assert_eq!(r.worst_margin, None);
    }

    #[test]
    fn small_suites_pass() {
        for p in [Property::IndividualRationality, Property::SecondPrice, Property::Oracle, Property::QmapConsistency] {
            let r = run_property(p, 3, 10, &config());
            assert!(r.passed(), "{r:?}");
        }
    }
}
