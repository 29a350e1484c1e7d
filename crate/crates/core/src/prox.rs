//! Closed-form proximal operators for the column-separable noise penalties.
//!
//! Every operator here solves `argmin_e ½‖v − e‖² + θ(e)` for one penalty `θ`.
//! They are pure functions of their inputs.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::Scalar;

/// Which noise penalty is active, with its weight.
///
/// `MaskedL1` is the completion-mode penalty `‖m ∘ e‖₁` where `m_i = c` on
/// observed coordinates and `1/c` elsewhere; the mask is borrowed from the
/// sample it belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegularizerSpec<'a, T> {
    L1 { lambda2: T },
    L2Column { lambda2: T },
    MaskedL1 { c: T, mask: &'a [bool] },
}

impl<'a, T: Scalar> RegularizerSpec<'a, T> {
    /// Checks the weights and, for `MaskedL1`, that the mask has length `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        match *self {
            Self::L1 { lambda2 } | Self::L2Column { lambda2 } => {
                if !(lambda2 >= T::zero()) {
                    return Err(Error::InvalidParameter(format!(
                        "lambda2 must be nonnegative, got {lambda2}"
                    )));
                }
            }
            Self::MaskedL1 { c, mask } => {
                if !(c > T::zero()) {
                    return Err(Error::InvalidParameter(format!(
                        "mask weight c must be positive, got {c}"
                    )));
                }
                if mask.len() != p {
                    return Err(Error::DimensionMismatch {
                        what: "observation mask",
                        expected: p,
                        got: mask.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Applies the matching proximal operator to `v`.
    pub fn prox(&self, v: &DVector<T>) -> Result<DVector<T>> {
        match *self {
            Self::L1 { lambda2 } => Ok(soft_threshold(v, lambda2)),
            Self::L2Column { lambda2 } => Ok(l2_column_shrink(v, lambda2)),
            Self::MaskedL1 { c, mask } => masked_soft_threshold(v, c, mask),
        }
    }

    /// Penalty value `λ₂θ(e)` (or `‖m ∘ e‖₁` in masked mode).
    pub fn value(&self, e: &DVector<T>) -> T {
        match *self {
            Self::L1 { lambda2 } => lambda2 * e.lp_norm(1),
            Self::L2Column { lambda2 } => lambda2 * e.norm(),
            Self::MaskedL1 { c, mask } => {
                let inv_c = T::one() / c;
                e.iter()
                    .zip(mask)
                    .map(|(&x, &obs)| if obs { c * x.abs() } else { inv_c * x.abs() })
                    .fold(T::zero(), |acc, x| acc + x)
            }
        }
    }
}

#[inline]
fn shrink_scalar<T: Scalar>(x: T, tau: T) -> T {
    let mag = x.abs() - tau;
    if mag > T::zero() {
        if x > T::zero() {
            mag
        } else {
            -mag
        }
    } else {
        T::zero()
    }
}

/// Entrywise soft-thresholding `sign(vᵢ)·max(|vᵢ| − tau, 0)`, the prox of `tau‖·‖₁`.
pub fn soft_threshold<T: Scalar>(v: &DVector<T>, tau: T) -> DVector<T> {
    if tau == T::zero() {
        return v.clone();
    }
    v.map(|x| shrink_scalar(x, tau))
}

/// Group shrinkage, the prox of `tau‖·‖₂`: zero when `‖v‖₂ ≤ tau`, otherwise
/// `v` scaled by `(‖v‖₂ − tau)/‖v‖₂`.
pub fn l2_column_shrink<T: Scalar>(v: &DVector<T>, tau: T) -> DVector<T> {
    if tau == T::zero() {
        return v.clone();
    }
    let norm = v.norm();
    if norm <= tau {
        DVector::zeros(v.len())
    } else {
        v * ((norm - tau) / norm)
    }
}

/// Soft-thresholding at `c` on observed coordinates and at `1/c` on the rest.
pub fn masked_soft_threshold<T: Scalar>(v: &DVector<T>, c: T, mask: &[bool]) -> Result<DVector<T>> {
    if mask.len() != v.len() {
        return Err(Error::DimensionMismatch {
            what: "observation mask",
            expected: v.len(),
            got: mask.len(),
        });
    }
    let inv_c = T::one() / c;
    Ok(DVector::from_iterator(
        v.len(),
        v.iter()
            .zip(mask)
            .map(|(&x, &obs)| shrink_scalar(x, if obs { c } else { inv_c })),
    ))
}
