//! Recovery metrics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::Scalar;

/// Expressed variance of the ground truth `U` captured by `span(L)`:
/// `tr(P_L UUᵀ) / tr(UUᵀ)`, where `P_L` projects onto the column span of `L`.
///
/// The span is taken from the left singular vectors of `L`, so the value is
/// independent of how `L`'s columns are scaled or mixed and lies in `[0, 1]`.
pub fn expressed_variance<T: Scalar>(truth: &DMatrix<T>, learned: &DMatrix<T>) -> Result<T> {
    if truth.nrows() != learned.nrows() {
        return Err(Error::DimensionMismatch {
            what: "basis rows",
            expected: truth.nrows(),
            got: learned.nrows(),
        });
    }
    let total = truth.norm_squared();
    if total == T::zero() {
        return Err(Error::InvalidParameter("ground-truth basis is zero".into()));
    }
    let span = orthonormal_span(learned);
    if span.ncols() == 0 {
        return Ok(T::zero());
    }
    Ok(span.tr_mul(truth).norm_squared() / total)
}

/// Orthonormal basis of the column span of `m` (numerical rank from the SVD).
pub fn orthonormal_span<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    if m.ncols() == 0 || m.norm_squared() == T::zero() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let cutoff = top * T::eps() * T::lit(m.nrows().max(m.ncols()) as f64);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// `‖P(X̂ − X)‖_F / ‖P(X)‖_F` over the entries where `select` is true.
pub fn relative_error_on<T: Scalar>(
    estimate: &DMatrix<T>,
    truth: &DMatrix<T>,
    select: impl Fn(usize, usize) -> bool,
) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    for j in 0..truth.ncols() {
        for i in 0..truth.nrows() {
            if select(i, j) {
                let diff = estimate[(i, j)] - truth[(i, j)];
                num += diff * diff;
                den += truth[(i, j)] * truth[(i, j)];
            }
        }
    }
    (num / den).sqrt()
}
