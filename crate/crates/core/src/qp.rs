//! Concave quadratic maximization over a scaled, optionally capped simplex.
//!
//! Every allocation and every pricing subproblem goes through [`solve`]:
//!
//! ```text
//!     maximize    c'w - q (w'Qw + b'w)
//!     subject to  sum(w) = M,  0 <= w_i <= u_i,  w_i = 0 for i in zero_set
//! ```
//!
//! Pinned coordinates are removed before solving. Purely linear problems
//! (`q = 0` or a vanishing quadratic block) are solved exactly by a greedy
//! fill in descending coefficient order; ties go to the lowest index.
//! Otherwise an accelerated projected-gradient ascent with adaptive restart
//! runs until its support settles, and the equality-constrained KKT system on
//! that support is solved directly to polish the iterate to machine precision.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Infeasibility, Result, ValidationReport, Violation};
use crate::linalg::{check_covariance, dot, mat_vec, quad_form, symmetric_eigenvalues, PSD_TOL, SYM_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Stationarity residual at which a point counts as optimal.
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Allowed violation of the mass and bound constraints.
    pub feas_tol: f64,
    pub sym_tol: f64,
    pub psd_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { kkt_tol: 1e-9, max_iter: 100_000, feas_tol: 1e-9, sym_tol: SYM_TOL, psd_tol: PSD_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub linear: Vec<f64>,
    pub quadratic: DMatrix<f64>,
    pub risk: f64,
    pub mass: f64,
    pub zero_set: BTreeSet<usize>,
    pub caps: Option<Vec<f64>>,
    /// Extra linear term `b` entering the objective as `-q b'w`.
    pub affine_linear: Option<Vec<f64>>,
}

impl QpProblem {
    pub fn new(linear: Vec<f64>, quadratic: DMatrix<f64>, risk: f64, mass: f64) -> Self {
        QpProblem {
            linear,
            quadratic,
            risk,
            mass,
            zero_set: BTreeSet::new(),
            caps: None,
            affine_linear: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Same problem with coordinate `index` forced to zero.
    pub fn pinned(&self, index: usize) -> Self {
        let mut p = self.clone();
        p.zero_set.insert(index);
        p
    }

    pub fn with_caps(mut self, caps: Vec<f64>) -> Self {
        self.caps = Some(caps);
        self
    }

    pub fn with_affine(mut self, b: Vec<f64>) -> Self {
        self.affine_linear = Some(b);
        self
    }

    /// Objective value at `w` (full dimension).
    pub fn objective(&self, w: &[f64]) -> f64 {
        let mut penalty = quad_form(&self.quadratic, w);
        if let Some(b) = &self.affine_linear {
            penalty += dot(b, w);
        }
        // q = 0 must not turn an infinite penalty into NaN
        let risk_term = if self.risk == 0.0 { 0.0 } else { self.risk * penalty };
        dot(&self.linear, w) - risk_term
    }

    fn effective_linear(&self) -> Vec<f64> {
        match &self.affine_linear {
            Some(b) if self.risk != 0.0 => {
                self.linear.iter().zip(b).map(|(c, b)| c - self.risk * b).collect()
            }
            _ => self.linear.clone(),
        }
    }

    fn validate(&self, config: &SolverConfig) -> Result<()> {
        let n = self.dim();
        let mut report = ValidationReport::default();
        if self.quadratic.nrows() != n || self.quadratic.ncols() != n {
            report.push(Violation::VectorLength { name: "quadratic", expected: n, found: self.quadratic.nrows() });
        } else {
            check_covariance(&self.quadratic, config.sym_tol, config.psd_tol, &mut report);
        }
        check_vector("linear", &self.linear, n, &mut report);
        if let Some(b) = &self.affine_linear {
            check_vector("affine_linear", b, n, &mut report);
        }
        if let Some(caps) = &self.caps {
            if caps.len() != n {
                report.push(Violation::VectorLength { name: "caps", expected: n, found: caps.len() });
            }
            for (index, &u) in caps.iter().enumerate() {
                if u.is_nan() || u < 0.0 {
                    report.push(Violation::NonFiniteVector { name: "caps", index });
                }
            }
        }
        if !self.risk.is_finite() {
            report.push(Violation::NonFiniteRisk);
        } else if self.risk < 0.0 {
            report.push(Violation::NegativeRisk { q: self.risk });
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            report.push(Violation::NonPositiveMass { mass: self.mass });
        }
        if let Some(&bad) = self.zero_set.iter().find(|&&i| i >= n) {
            report.push(Violation::VectorLength { name: "zero_set", expected: n, found: bad + 1 });
        }
        report.into_result(()).map_err(Error::from)
    }
}

fn check_vector(name: &'static str, v: &[f64], n: usize, report: &mut ValidationReport) {
    if v.len() != n {
        report.push(Violation::VectorLength { name, expected: n, found: v.len() });
    }
    for (index, x) in v.iter().enumerate() {
        if !x.is_finite() {
            report.push(Violation::NonFiniteVector { name, index });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub weights: Vec<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// The optimum is not unique; the returned point is a deterministic pick.
    pub degenerate: bool,
}

/// Feasibility and optimality residuals of a candidate point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// `|sum(w) - M|`.
    pub mass_violation: f64,
    /// Largest `max(0, -w_i)`.
    pub bound_violation: f64,
    /// Largest `max(0, w_i - u_i)`.
    pub cap_violation: f64,
    /// Largest `|w_i|` over pinned coordinates.
    pub pin_violation: f64,
    /// Sup-norm of `w - P(w + grad f(w))` over free coordinates.
    pub stationarity: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub satisfied: bool,
}

/// Measures how far `candidate` is from a KKT point of `problem`.
pub fn check_kkt(problem: &QpProblem, candidate: &[f64], tol: f64) -> Result<KktReport> {
    let n = problem.dim();
    if candidate.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: candidate.len() });
    }
    let sum: f64 = candidate.iter().sum();
    let mass_violation = (sum - problem.mass).abs();
    let bound_violation = candidate.iter().map(|&w| (-w).max(0.0)).fold(0.0, f64::max);
    let cap_violation = match &problem.caps {
        Some(caps) => candidate.iter().zip(caps).map(|(w, u)| (w - u).max(0.0)).fold(0.0, f64::max),
        None => 0.0,
    };
    let pin_violation = problem.zero_set.iter().map(|&i| candidate[i].abs()).fold(0.0, f64::max);

    let reduced = Reduced::new(problem);
    let x: Vec<f64> = reduced.idx.iter().map(|&i| candidate[i]).collect();
    // gradient sees the pinned coordinates as they are, even if nonzero
    let mut qw = vec![0.0; n];
    mat_vec(&problem.quadratic, candidate, &mut qw);
    let g: Vec<f64> = reduced
        .idx
        .iter()
        .zip(&reduced.c)
        .map(|(&i, c)| c - 2.0 * problem.risk * qw[i])
        .collect();
    let stationarity = if x.is_empty() { 0.0 } else { reduced.natural_residual_with(&x, &g) };

    let residual = mass_violation
        .max(bound_violation)
        .max(cap_violation)
        .max(pin_violation)
        .max(stationarity);
    Ok(KktReport {
        mass_violation,
        bound_violation,
        cap_violation,
        pin_violation,
        stationarity,
        residual,
        tolerance: tol,
        satisfied: residual <= tol,
    })
}

/// Euclidean projection onto `{w >= 0, sum(w) = mass}` by the sort-based
/// threshold rule. `mass` must be positive.
pub fn project_to_simplex(point: &[f64], mass: f64) -> Vec<f64> {
    assert!(mass > 0.0, "simplex mass must be positive");
    if point.is_empty() {
        return Vec::new();
    }
    if already_feasible(point, None, mass) {
        return point.to_vec();
    }
    let mut sorted = point.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - mass) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    point.iter().map(|&y| (y - theta).max(0.0)).collect()
}

/// Euclidean projection onto `{0 <= w <= caps, sum(w) = mass}`; requires
/// `sum(caps) >= mass`.
pub fn project_to_capped_simplex(point: &[f64], caps: &[f64], mass: f64) -> Vec<f64> {
    assert_eq!(point.len(), caps.len());
    assert!(mass > 0.0, "simplex mass must be positive");
    if point.is_empty() {
        return Vec::new();
    }
    if already_feasible(point, Some(caps), mass) {
        return point.to_vec();
    }
    let fill = |tau: f64| -> f64 {
        point.iter().zip(caps).map(|(&y, &u)| (y - tau).clamp(0.0, u)).sum()
    };
    // fill(tau) is continuous, piecewise linear and nonincreasing with
    // breakpoints at y_i and y_i - u_i
    let mut breaks: Vec<f64> = point.to_vec();
    breaks.extend(point.iter().zip(caps).filter(|(_, u)| u.is_finite()).map(|(y, u)| y - u));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // walk from the largest breakpoint (fill = 0) downward
    let mut hi = *breaks.last().expect("nonempty");
    let mut fill_hi = fill(hi);
    let mut tau = hi;
    for &lo in breaks.iter().rev().skip(1) {
        let fill_lo = fill(lo);
        if fill_lo >= mass {
            tau = if fill_lo == fill_hi { lo } else { hi + (mass - fill_hi) * (lo - hi) / (fill_lo - fill_hi) };
            return clamp_all(point, caps, tau);
        }
        hi = lo;
        fill_hi = fill_lo;
        tau = lo;
    }
    // below every breakpoint only uncapped coordinates keep growing
    let open = caps.iter().filter(|u| u.is_infinite()).count();
    if open > 0 {
        tau -= (mass - fill_hi) / open as f64;
    }
    clamp_all(point, caps, tau)
}

fn clamp_all(point: &[f64], caps: &[f64], tau: f64) -> Vec<f64> {
    point.iter().zip(caps).map(|(&y, &u)| (y - tau).clamp(0.0, u)).collect()
}

fn already_feasible(point: &[f64], caps: Option<&[f64]>, mass: f64) -> bool {
    let in_bounds = match caps {
        Some(caps) => point.iter().zip(caps).all(|(&w, &u)| w >= 0.0 && w <= u),
        None => point.iter().all(|&w| w >= 0.0),
    };
    in_bounds && point.iter().sum::<f64>() == mass
}

/// The problem restricted to its free coordinates, written as
/// `max c'x - x'Hx/2` with `H = 2qQ`.
struct Reduced {
    idx: Vec<usize>,
    c: Vec<f64>,
    h: DMatrix<f64>,
    caps: Option<Vec<f64>>,
    mass: f64,
}

impl Reduced {
    fn new(problem: &QpProblem) -> Self {
        let idx: Vec<usize> = (0..problem.dim()).filter(|i| !problem.zero_set.contains(i)).collect();
        let full_c = problem.effective_linear();
        let c = idx.iter().map(|&i| full_c[i]).collect();
        let k = idx.len();
        let h = DMatrix::from_fn(k, k, |a, b| 2.0 * problem.risk * problem.quadratic[(idx[a], idx[b])]);
        let caps = problem.caps.as_ref().map(|u| idx.iter().map(|&i| u[i]).collect());
        Reduced { idx, c, h, caps, mass: problem.mass }
    }

    fn dim(&self) -> usize {
        self.idx.len()
    }

    fn cap(&self, i: usize) -> f64 {
        self.caps.as_ref().map_or(f64::INFINITY, |u| u[i])
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        match &self.caps {
            Some(caps) => project_to_capped_simplex(y, caps, self.mass),
            None => project_to_simplex(y, self.mass),
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        mat_vec(&self.h, x, out);
        for (o, c) in out.iter_mut().zip(&self.c) {
            *o = c - *o;
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        dot(&self.c, x) - 0.5 * quad_form(&self.h, x)
    }

    fn natural_residual(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.gradient(x, &mut g);
        self.natural_residual_with(x, &g)
    }

    fn natural_residual_with(&self, x: &[f64], g: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
        let p = self.project(&y);
        x.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn is_linear(&self) -> bool {
        self.h.iter().all(|&v| v == 0.0)
    }

    fn check_feasible(&self) -> Result<()> {
        if self.idx.is_empty() {
            return Err(Error::Infeasible(Infeasibility::AllCoordinatesPinned));
        }
        if let Some(caps) = &self.caps {
            let total: f64 = caps.iter().sum();
            if total < self.mass {
                return Err(Error::Infeasible(Infeasibility::CapsBelowMass { total, mass: self.mass }));
            }
        }
        Ok(())
    }

    /// Exact maximizer of a linear objective: fill coordinates in descending
    /// coefficient order, lowest index first among equals.
    fn greedy(&self) -> (Vec<f64>, bool) {
        let k = self.dim();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| self.c[b].total_cmp(&self.c[a]));
        let mut x = vec![0.0; k];
        let mut remaining = self.mass;
        for &i in &order {
            if remaining <= 0.0 {
                break;
            }
            let take = remaining.min(self.cap(i));
            x[i] = take;
            remaining -= take;
        }
        // another optimum exists iff a coordinate with room ties a used one
        let degenerate = (0..k).any(|i| {
            x[i] < self.cap(i) && (0..k).any(|j| j != i && x[j] > 0.0 && self.c[j] == self.c[i])
        });
        (x, degenerate)
    }

    /// Solves the KKT system with the bound pattern of `x` held fixed.
    fn polish(&self, x: &[f64], feas_tol: f64) -> Option<Vec<f64>> {
        let k = self.dim();
        let mut free = Vec::new();
        let mut out = x.to_vec();
        let mut fixed_mass = 0.0;
        for i in 0..k {
            if x[i] <= 0.0 {
                out[i] = 0.0;
            } else if x[i] >= self.cap(i) {
                out[i] = self.cap(i);
                fixed_mass += out[i];
            } else {
                free.push(i);
            }
        }
        if free.is_empty() {
            return Some(out);
        }
        let f = free.len();
        // [H_FF 1; 1' 0] [x_F; lambda] = [c_F - H_FU u_U; M - sum u_U]
        let mut kkt = DMatrix::zeros(f + 1, f + 1);
        let mut rhs = DVector::zeros(f + 1);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = self.h[(i, j)];
            }
            kkt[(a, f)] = 1.0;
            kkt[(f, a)] = 1.0;
            let mut r = self.c[i];
            for (j, &x) in out.iter().enumerate() {
                if !free.contains(&j) && x != 0.0 {
                    r -= self.h[(i, j)] * x;
                }
            }
            rhs[a] = r;
        }
        rhs[f] = self.mass - fixed_mass;
        let lu = kkt.clone().lu();
        let mut sol = lu.solve(&rhs)?;
        // one step of iterative refinement
        let resid = &rhs - &kkt * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
        for (a, &i) in free.iter().enumerate() {
            let v = sol[a];
            if !v.is_finite() || v < -feas_tol || v > self.cap(i) + feas_tol {
                return None;
            }
            out[i] = v.clamp(0.0, self.cap(i));
        }
        Some(out)
    }

    /// True when the Hessian is singular along the face spanned by the
    /// strictly interior coordinates of `x`.
    fn flat_face(&self, x: &[f64]) -> bool {
        let interior: Vec<usize> = (0..self.dim()).filter(|&i| x[i] > 0.0 && x[i] < self.cap(i)).collect();
        let f = interior.len();
        if f < 2 {
            return false;
        }
        // basis of {d : sum(d) = 0} on the interior coordinates
        let z = DMatrix::from_fn(f, f - 1, |r, col| {
            if r == col {
                1.0
            } else if r == f - 1 {
                -1.0
            } else {
                0.0
            }
        });
        let h_ff = DMatrix::from_fn(f, f, |a, b| self.h[(interior[a], interior[b])]);
        let zhz = z.transpose() * h_ff * &z;
        let eig = symmetric_eigenvalues(&zhz);
        let top = eig.last().copied().unwrap_or(0.0).abs();
        eig.first().is_some_and(|&lo| lo <= 1e-12 * top.max(f64::MIN_POSITIVE))
    }
}

/// Maximizes the concave quadratic objective of `problem` over its feasible set.
pub fn solve(problem: &QpProblem, config: &SolverConfig) -> Result<QpSolution> {
    problem.validate(config)?;
    let reduced = Reduced::new(problem);
    reduced.check_feasible()?;

    let (x, iterations, degenerate) = if reduced.is_linear() {
        let (x, degenerate) = reduced.greedy();
        (x, 0, degenerate)
    } else {
        let (x, iterations) = ascend(&reduced, config)?;
        let degenerate = reduced.flat_face(&x);
        (x, iterations, degenerate)
    };
    let kkt_residual = reduced.natural_residual(&x);
    if kkt_residual > config.kkt_tol {
        return Err(Error::NotConverged { iterations, residual: kkt_residual });
    }

    let mut weights = vec![0.0; problem.dim()];
    for (&i, &v) in reduced.idx.iter().zip(&x) {
        weights[i] = v;
    }
    Ok(QpSolution {
        objective_value: problem.objective(&weights),
        weights,
        kkt_residual,
        iterations,
        degenerate,
    })
}

/// Accelerated projected-gradient ascent with gradient-based restart and
/// active-set polishing. Returns the best point found and the iteration count.
fn ascend(r: &Reduced, config: &SolverConfig) -> Result<(Vec<f64>, usize)> {
    let k = r.dim();
    let lipschitz = symmetric_eigenvalues(&r.h).last().copied().unwrap_or(0.0);
    let step = 1.0 / lipschitz;

    let start = match &r.caps {
        Some(caps) => {
            let uniform: Vec<f64> = caps.iter().map(|u| (r.mass / k as f64).min(*u)).collect();
            r.project(&uniform)
        }
        None => vec![r.mass / k as f64; k],
    };
    let mut best = start.clone();
    let mut best_res = r.natural_residual(&best);
    if let Some(p) = r.polish(&start, config.feas_tol) {
        let res = r.natural_residual(&p);
        if res < best_res {
            best = p;
            best_res = res;
        }
    }
    if best_res <= config.kkt_tol {
        return Ok((best, 0));
    }

    let pattern = |x: &[f64]| -> Vec<u8> {
        (0..k).map(|i| if x[i] <= 0.0 { 0 } else if x[i] >= r.cap(i) { 2 } else { 1 }).collect()
    };
    let mut x = start;
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut g = vec![0.0; k];
    let mut last_pattern = pattern(&x);
    let mut polished_pattern: Option<Vec<u8>> = None;
    let mut stable = 0usize;

    for it in 1..=config.max_iter {
        r.gradient(&y, &mut g);
        let trial: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a + step * b).collect();
        let x_new = r.project(&trial);

        let progress: f64 = g.iter().zip(x_new.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
        if progress < 0.0 {
            t = 1.0;
            y.clone_from(&x_new);
        } else {
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_new;
            for i in 0..k {
                y[i] = x_new[i] + beta * (x_new[i] - x[i]);
            }
            t = t_new;
        }
        x = x_new;

        let p = pattern(&x);
        if p == last_pattern {
            stable += 1;
        } else {
            stable = 0;
            last_pattern = p.clone();
        }
        if stable >= 2 && polished_pattern.as_ref() != Some(&p) {
            polished_pattern = Some(p);
            if let Some(candidate) = r.polish(&x, config.feas_tol) {
                let res = r.natural_residual(&candidate);
                if res < best_res {
                    best = candidate;
                    best_res = res;
                }
                if best_res <= config.kkt_tol {
                    return Ok((best, it));
                }
            }
        }
        if it % 16 == 0 || it == config.max_iter {
            let res = r.natural_residual(&x);
            if res < best_res {
                best.clone_from(&x);
                best_res = res;
            }
            if best_res <= config.kkt_tol {
                return Ok((best, it));
            }
        }
    }
    if r.value(&x) > r.value(&best) && r.natural_residual(&x) <= best_res {
        best = x;
    }
    Ok((best, config.max_iter))
}
