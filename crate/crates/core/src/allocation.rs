//! Outcome selection: the allocation that maximizes the sum of the offers'
//! linear valuations and the risk participant's `-q w'Σw`.
//!
//! Two formulations share the QP kernel. The portfolio form allocates
//! fractions `w` of the pool. The call-count form (`QmapInstance`) allocates
//! `k` ad calls out of `m` and maximizes `c'k - q(k'Ak + b'k)` literally, with
//! no rescaling in `m`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport, Violation};
use crate::linalg::{check_covariance, matrix_from_rows};
use crate::market::MarketInstance;
use crate::qp::{solve, QpProblem, QpSolution, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    /// Fractions of the pool; sum to 1.
    pub weights: Vec<f64>,
    /// Continuous ad-call counts, `weights * pool`.
    pub call_counts: Vec<f64>,
    /// Integer counts by largest-remainder apportionment; sum to the pool.
    pub rounded_calls: Vec<u64>,
    pub objective_value: f64,
    pub degenerate: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl Allocation {
    fn from_solution(sol: QpSolution, mass: f64, pool: f64) -> Self {
        let weights: Vec<f64> = sol.weights.iter().map(|k| k / mass).collect();
        let call_counts: Vec<f64> = weights.iter().map(|w| w * pool).collect();
        let rounded_calls = apportion(&call_counts, pool.round().max(0.0) as u64);
        Allocation {
            weights,
            call_counts,
            rounded_calls,
            objective_value: sol.objective_value,
            degenerate: sol.degenerate,
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
        }
    }
}

/// Largest-remainder rounding of nonnegative shares to an exact integer total.
/// Ties in the remainder go to the lowest index.
pub fn apportion(shares: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = shares.iter().map(|s| s.max(0.0)).sum();
    if shares.is_empty() || sum <= 0.0 {
        return vec![0; shares.len()];
    }
    let quotas: Vec<f64> = shares.iter().map(|s| s.max(0.0) / sum * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// The allocation QP for a market: `max w'mu - q w'Σw` on the unit simplex,
/// with any per-offer caps.
pub fn market_problem(market: &MarketInstance) -> QpProblem {
    let p = QpProblem::new(market.mu().to_vec(), market.sigma().matrix().clone(), market.q(), 1.0);
    match market.caps() {
        Some(caps) => p.with_caps(caps),
        None => p,
    }
}

pub fn allocate(market: &MarketInstance, config: &SolverConfig) -> Result<Allocation> {
    let sol = solve(&market_problem(market), config)?;
    Ok(Allocation::from_solution(sol, 1.0, market.pool_size() as f64))
}

/// Which way a call-count instance is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QmapForm {
    /// `min k'Ak + b'k - q c'k`
    Min,
    /// `max c'k - q(k'Ak + b'k)`
    #[default]
    Max,
}

/// Call-count formulation over `k` with `sum(k) = m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QmapInstance {
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    q: f64,
    m: f64,
    form: QmapForm,
}

impl QmapInstance {
    pub fn new(a_rows: &[Vec<f64>], b: Vec<f64>, c: Vec<f64>, q: f64, m: f64, form: QmapForm) -> Result<Self> {
        let n = c.len();
        let mut report = ValidationReport::default();
        if n < 1 {
            report.push(Violation::TooFewOffers { count: n });
        }
        let a = matrix_from_rows(a_rows, n, &mut report);
        if let Some(ref a) = a {
            check_covariance(a, crate::linalg::SYM_TOL, crate::linalg::PSD_TOL, &mut report);
        }
        for (name, v) in [("b", &b), ("c", &c)] {
            if v.len() != n {
                report.push(Violation::VectorLength { name, expected: n, found: v.len() });
            }
            for (index, x) in v.iter().enumerate() {
                if !x.is_finite() {
                    report.push(Violation::NonFiniteVector { name, index });
                }
            }
        }
        if !q.is_finite() {
            report.push(Violation::NonFiniteRisk);
        } else if q < 0.0 {
            report.push(Violation::NegativeRisk { q });
        }
        if !(m.is_finite() && m > 0.0) {
            report.push(Violation::NonPositiveMass { mass: m });
        }
        if !report.is_empty() {
            return Err(report.into());
        }
        Ok(QmapInstance { a: a.expect("checked"), b, c, q, m, form })
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn form(&self) -> QmapForm {
        self.form
    }

    /// Objective of the min form at `k`: `k'Ak + b'k - q c'k`.
    pub fn min_objective(&self, k: &[f64]) -> f64 {
        crate::linalg::quad_form(&self.a, k) + crate::linalg::dot(&self.b, k)
            - self.q * crate::linalg::dot(&self.c, k)
    }
}

/// Rewrites a call-count instance as the max-form QP.
///
/// A min-form instance with parameter `q` is equivalent to the max form with
/// risk weight `1/q`: divide the min objective by `q` and flip its sign.
pub fn qmap_transform(instance: &QmapInstance) -> Result<QpProblem> {
    let risk = match instance.form {
        QmapForm::Max => instance.q,
        QmapForm::Min if instance.q > 0.0 => 1.0 / instance.q,
        QmapForm::Min => return Err(Error::TransformUndefined { q: instance.q }),
    };
    Ok(QpProblem::new(instance.c.clone(), instance.a.clone(), risk, instance.m).with_affine(instance.b.clone()))
}

/// Allocation in call counts: `call_counts` holds `k*`, `weights` is `k*/m`.
pub fn qmap_allocate(instance: &QmapInstance, config: &SolverConfig) -> Result<Allocation> {
    let problem = qmap_transform(instance)?;
    let sol = solve(&problem, config)?;
    Ok(Allocation::from_solution(sol, instance.m, instance.m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::CovarianceMatrix;
    use approx::assert_abs_diff_eq;

    fn config() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn derived_market_allocation() {
        let m = MarketInstance::from_values(&[1.0, 0.8], CovarianceMatrix::identity(2), 0.5, 1000).unwrap();
        let a = allocate(&m, &config()).unwrap();
        assert_abs_diff_eq!(a.weights[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(a.weights[1], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(a.objective_value, 0.66, epsilon = 1e-12);
        assert_abs_diff_eq!(a.call_counts[0], 600.0, epsilon = 1e-9);
        assert_eq!(a.rounded_calls, vec![600, 400]);
    }

    #[test]
    fn risk_neutral_is_winner_take_all() {
        let s = CovarianceMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 0.5]]).unwrap();
        let m = MarketInstance::from_values(&[2.0, 1.0], s, 0.0, 10).unwrap();
        assert_eq!(allocate(&m, &config()).unwrap().weights, vec![1.0, 0.0]);
    }

    #[test]
    fn equal_values_split_evenly() {
        let m = MarketInstance::from_values(&[1.0, 1.0], CovarianceMatrix::identity(2), 1.0, 10).unwrap();
        let a = allocate(&m, &config()).unwrap();
        assert_abs_diff_eq!(a.weights[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn apportion_preserves_total() {
        assert_eq!(apportion(&[599.9999999, 400.0000001], 1000), vec![600, 400]);
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[0.0, 0.0], 5), vec![0, 0]);
        assert_eq!(apportion(&[0.2, 0.3, 0.5], 1).iter().sum::<u64>(), 1);
    }

    fn qmap(a: &[Vec<f64>], b: &[f64], c: &[f64], q: f64, m: f64, form: QmapForm) -> QmapInstance {
        QmapInstance::new(a, b.to_vec(), c.to_vec(), q, m, form).unwrap()
    }

    #[test]
    fn max_form_transform_keeps_coefficients() {
        let inst = qmap(&[vec![1.0, 0.2], vec![0.2, 2.0]], &[0.1, 0.3], &[1.0, 2.0], 0.7, 5.0, QmapForm::Max);
        let p = qmap_transform(&inst).unwrap();
        assert_eq!(p.linear, vec![1.0, 2.0]);
        assert_eq!(p.affine_linear, Some(vec![0.1, 0.3]));
        assert_eq!(p.risk, 0.7);
        assert_eq!(p.mass, 5.0);
    }

    #[test]
    fn min_form_inverts_the_risk_weight() {
        let inst = qmap(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0], &[1.0, 0.8], 2.0, 1.0, QmapForm::Min);
        assert_eq!(qmap_transform(&inst).unwrap().risk, 0.5);
        let zero = qmap(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0], &[1.0, 0.8], 0.0, 1.0, QmapForm::Min);
        assert!(matches!(qmap_transform(&zero), Err(Error::TransformUndefined { .. })));
    }

    #[test]
    fn linear_qmap_fills_the_best_offer() {
        let inst = qmap(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.0, 0.0], &[2.0, 1.0], 1.0, 100.0, QmapForm::Max);
        let a = qmap_allocate(&inst, &config()).unwrap();
        assert_eq!(a.call_counts, vec![100.0, 0.0]);
        assert_eq!(a.rounded_calls, vec![100, 0]);
    }

    #[test]
    fn unit_pool_qmap_matches_the_portfolio() {
        let inst = qmap(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0], &[1.0, 0.8], 0.5, 1.0, QmapForm::Max);
        let a = qmap_allocate(&inst, &config()).unwrap();
        assert_abs_diff_eq!(a.call_counts[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(a.call_counts[1], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn literal_qmap_at_large_pool_spreads_calls() {
        // k1 - k2 = 0.2 from stationarity, k1 + k2 = 1000
        let inst = qmap(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0], &[1.0, 0.8], 0.5, 1000.0, QmapForm::Max);
        let a = qmap_allocate(&inst, &config()).unwrap();
        assert_abs_diff_eq!(a.call_counts[0], 500.1, epsilon = 1e-9);
        assert_abs_diff_eq!(a.call_counts[1], 499.9, epsilon = 1e-9);
        let p = qmap_transform(&inst).unwrap();
        assert!(crate::qp::check_kkt(&p, &a.call_counts, 1e-8).unwrap().satisfied);
    }

    #[test]
    fn min_and_max_forms_share_an_optimizer_on_a_grid() {
        let a_rows = [vec![2.0, 0.5], vec![0.5, 1.0]];
        let (b, c, q_min, m) = ([0.2, 0.1], [1.5, 1.0], 4.0, 3.0);
        let min_form = qmap(&a_rows, &b, &c, q_min, m, QmapForm::Min);
        let max_problem = qmap_transform(&min_form).unwrap();
        let (mut argmin, mut argmax) = ((f64::INFINITY, 0.0), (f64::NEG_INFINITY, 0.0));
        for i in 0..=3000 {
            let k1 = i as f64 * 1e-3;
            let k = [k1, m - k1];
            let lo = min_form.min_objective(&k);
            let hi = max_problem.objective(&k);
            if lo < argmin.0 {
                argmin = (lo, k1);
            }
            if hi > argmax.0 {
                argmax = (hi, k1);
            }
        }
        assert_eq!(argmin.1, argmax.1);
        let sol = qmap_allocate(&min_form, &config()).unwrap();
        assert_abs_diff_eq!(sol.call_counts[0], argmax.1, epsilon = 1e-3);
    }

    #[test]
    fn objective_falls_as_risk_rises() {
        let s = CovarianceMatrix::from_rows(&[vec![1.0, 0.3, 0.0], vec![0.3, 2.0, -0.4], vec![0.0, -0.4, 0.5]]).unwrap();
        let base = MarketInstance::from_values(&[1.0, 1.4, 0.6], s, 0.0, 100).unwrap();
        let mut last = f64::INFINITY;
        for q in [0.0, 0.1, 0.5, 1.0, 3.0, 10.0] {
            let v = allocate(&base.with_risk(q).unwrap(), &config()).unwrap().objective_value;
            assert!(v <= last + 1e-12);
            last = v;
        }
    }
}
