//! Small dense helpers shared by the model and the solver.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ValidationReport, Violation};

/// Absolute tolerance for `|S_ij - S_ji|`.
pub const SYM_TOL: f64 = 1e-10;
/// Allowed negative eigenvalue, relative to the largest diagonal entry.
pub const PSD_TOL: f64 = 1e-8;

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `x' S x` for a square matrix `S`.
pub(crate) fn quad_form(s: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        if x[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += s[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

pub(crate) fn mat_vec(s: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..n {
            acc += s[(i, j)] * x[j];
        }
        *o = acc;
    }
}

pub(crate) fn symmetric_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    if s.nrows() == 0 {
        return Vec::new();
    }
    // symmetrize so tiny asymmetries inside SYM_TOL do not leak into the spectrum
    let sym = (s + s.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Checks a square matrix for finiteness, symmetry and positive
/// semidefiniteness, appending one violation per failed invariant.
pub(crate) fn check_covariance(
    s: &DMatrix<f64>,
    sym_tol: f64,
    psd_tol: f64,
    report: &mut ValidationReport,
) {
    let n = s.nrows();
    let mut finite = true;
    for i in 0..n {
        for j in 0..n {
            if !s[(i, j)].is_finite() {
                report.push(Violation::NonFiniteEntry { row: i, col: j });
                finite = false;
            }
        }
    }
    if !finite {
        return;
    }
    let mut symmetric = true;
    for i in 0..n {
        for j in (i + 1)..n {
            let (upper, lower) = (s[(i, j)], s[(j, i)]);
            if (upper - lower).abs() > sym_tol {
                report.push(Violation::Asymmetric { row: i, col: j, upper, lower });
                symmetric = false;
            }
        }
    }
    if !symmetric {
        return;
    }
    let scale = (0..n).map(|i| s[(i, i)].abs()).fold(0.0, f64::max);
    let tolerance = psd_tol * scale;
    if let Some(&min) = symmetric_eigenvalues(s).first() {
        if min < -tolerance {
            report.push(Violation::NotPositiveSemidefinite { min_eigenvalue: min, tolerance });
        }
    }
}

/// Rows of a dense row-major matrix, rejecting ragged input.
pub(crate) fn matrix_from_rows(
    rows: &[Vec<f64>],
    expected: usize,
    report: &mut ValidationReport,
) -> Option<DMatrix<f64>> {
    let ragged = rows.iter().any(|r| r.len() != expected);
    if rows.len() != expected || ragged {
        report.push(Violation::DimensionMismatch {
            offers: expected,
            rows: rows.len(),
            cols: rows.iter().map(Vec::len).collect(),
        });
        return None;
    }
    Some(DMatrix::from_fn(expected, expected, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_eigenvalues_match_closed_form() {
        // [[a, b], [b, d]]: (a+d)/2 ± sqrt(((a-d)/2)^2 + b^2)
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let eig = symmetric_eigenvalues(&s);
        assert!((eig[0] + 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn psd_tolerance_is_relative_to_diagonal() {
        let s = DMatrix::from_row_slice(2, 2, &[1e6, 1e6, 1e6, 1e6 - 1e-3]);
        let mut report = ValidationReport::default();
        check_covariance(&s, SYM_TOL, PSD_TOL, &mut report);
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn quad_form_of_identity_is_squared_norm() {
        let s = DMatrix::<f64>::identity(3, 3);
        assert_eq!(quad_form(&s, &[1.0, 2.0, 3.0]), 14.0);
    }
}
