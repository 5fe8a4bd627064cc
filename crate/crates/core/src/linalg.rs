//! Small dense solves behind the integrator and morphism rank checks.

use nalgebra::{DMatrix, DVector, RealField};

use crate::scalar::{Real, Scalar};

/// Solves `A z = rhs` (row-major square `A`) by LU with partial pivoting and
/// returns the solution together with the 1-norm condition number. `None` if
/// the matrix is exactly singular.
pub(crate) fn solve_with_condition<R: Real + RealField>(
    mat: &[R],
    rhs: &[R],
    dim: usize,
) -> Option<(Vec<R>, R)> {
    debug_assert_eq!(mat.len(), dim * dim);
    debug_assert_eq!(rhs.len(), dim);
    let a = DMatrix::from_row_slice(dim, dim, mat);
    let norm_a = one_norm(&a);
    let lu = a.lu();
    let sol = lu.solve(&DVector::from_column_slice(rhs))?;
    let inv = lu.try_inverse()?;
    let cond = norm_a * one_norm(&inv);
    Some((sol.iter().copied().collect(), cond))
}

/// Smallest singular value of a row-major `rows x cols` matrix.
pub(crate) fn min_singular_value<R: Real + RealField>(
    mat: &[R],
    rows: usize,
    cols: usize,
) -> R {
    let a = DMatrix::from_row_slice(rows, cols, mat);
    let svd = a.svd(false, false);
    svd.singular_values
        .iter()
        .copied()
        .fold(None, |acc: Option<R>, v| {
            Some(match acc {
                Some(a) => a.min_by_val(v),
                None => v,
            })
        })
        .unwrap_or_else(R::zero)
}

fn one_norm<R: Real + RealField>(a: &DMatrix<R>) -> R {
    let mut max = R::zero();
    for j in 0..a.ncols() {
        let mut col = R::zero();
        for i in 0..a.nrows() {
            col += Scalar::abs(a[(i, j)]);
        }
        max = max.max_by_val(col);
    }
    max
}
