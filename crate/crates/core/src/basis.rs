//! Basis state and the surrogate minimization step.
//!
//! The surrogate after `t` samples is
//!
//! ```text
//! g_t(L) = (1/t)·[½ tr(LᵀL A) − tr(LᵀB) + c_t] + (λ₁/2t)·‖L‖²_{2,∞}
//! ```
//!
//! with `A = Σ rᵢrᵢᵀ`, `B = Σ (zᵢ − eᵢ)rᵢᵀ` and `c_t = Σ ½‖zᵢ − eᵢ‖² + θ(eᵢ)`.
//! It is minimized column by column.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::coeff::SolverConfig;
use crate::error::{Error, Result};
use crate::Scalar;

/// Columns whose coefficient energy `A_jj` falls below this are left alone.
pub const MIN_COLUMN_ENERGY: f64 = 1e-12;

/// Relative tolerance used to detect ties among the largest row norms.
pub const ROW_TIE_RTOL: f64 = 1e-10;

/// Everything the stream keeps between samples: `O(pd + d²)` numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisState<T: Scalar> {
    /// The `p × d` basis `L`.
    pub basis: DMatrix<T>,
    /// `A = Σ rᵢrᵢᵀ`, `d × d`.
    pub acc_a: DMatrix<T>,
    /// `B = Σ (zᵢ − eᵢ)rᵢᵀ`, `p × d`.
    pub acc_b: DMatrix<T>,
    /// Samples absorbed so far.
    pub t: u64,
    /// Running `Σ ½‖zᵢ − eᵢ‖² + θ(eᵢ)`, the `L`-free part of the surrogate.
    pub loss_const: T,
}

impl<T: Scalar> BasisState<T> {
    /// State with the given basis and zero accumulators.
    pub fn new(basis: DMatrix<T>) -> Self {
        let (p, d) = basis.shape();
        Self {
            basis,
            acc_a: DMatrix::zeros(d, d),
            acc_b: DMatrix::zeros(p, d),
            t: 0,
            loss_const: T::zero(),
        }
    }

    pub fn p(&self) -> usize {
        self.basis.nrows()
    }

    pub fn d(&self) -> usize {
        self.basis.ncols()
    }

    /// Adds one sample's contribution: `A += rrᵀ`, `B += (z − e)rᵀ`,
    /// `c += loss_term`, `t += 1`.
    pub fn accumulate(&mut self, z: &DVector<T>, e: &DVector<T>, r: &DVector<T>, loss_term: T) {
        let clean = z - e;
        self.acc_a.ger(T::one(), r, r, T::one());
        self.acc_b.ger(T::one(), &clean, r, T::one());
        self.loss_const += loss_term;
        self.t += 1;
    }

    /// Bytes held by the state, including matrix storage.
    pub fn resident_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + (self.basis.len() + self.acc_a.len() + self.acc_b.len()) * std::mem::size_of::<T>()
    }

    /// Smallest eigenvalue of `A/t`; the surrogate is strongly convex when positive.
    pub fn strong_convexity_margin(&self) -> T {
        if self.t == 0 {
            return T::zero();
        }
        let scaled = &self.acc_a / T::lit(self.t as f64);
        SymmetricEigen::new(scaled)
            .eigenvalues
            .iter()
            .copied()
            .fold(T::max_value().unwrap(), |a, b| a.min(b))
    }
}

/// Squared row norms of `m`.
pub fn row_norms_squared<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    (0..m.nrows()).map(|i| m.row(i).norm_squared()).collect()
}

/// `‖L‖²_{2,∞}`, the largest squared row norm.
pub fn max_row_norm_squared<T: Scalar>(m: &DMatrix<T>) -> T {
    row_norms_squared(m).into_iter().fold(T::zero(), |a, b| a.max(b))
}

/// Indices of rows attaining the largest row norm (relative tolerance
/// [`ROW_TIE_RTOL`] on the norms).
pub fn max_row_set<T: Scalar>(m: &DMatrix<T>) -> Vec<usize> {
    let norms: Vec<T> = row_norms_squared(m).into_iter().map(|x| x.sqrt()).collect();
    let top = norms.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if top == T::zero() {
        return Vec::new();
    }
    let cutoff = top * (T::one() - T::lit(ROW_TIE_RTOL));
    norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n >= cutoff)
        .map(|(i, _)| i)
        .collect()
}

/// Subgradient `QL` of `½‖L‖²_{2,∞}` with `Q` diagonal, unit trace, and
/// weight `1/|I|` on each row of the maximal set `I`.
pub fn max_row_norm_subgradient<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    let rows = max_row_set(m);
    if rows.is_empty() {
        return out;
    }
    let w = T::one() / T::lit(rows.len() as f64);
    for i in rows {
        out.set_row(i, &(m.row(i) * w));
    }
    out
}

/// `½ tr(LᵀL A) − tr(LᵀB)`, the `L`-dependent data term of `t·g_t`.
pub fn data_term<T: Scalar>(basis: &DMatrix<T>, acc_a: &DMatrix<T>, acc_b: &DMatrix<T>) -> T {
    let gram = basis.tr_mul(basis);
    gram.dot(acc_a) / T::lit(2.0) - basis.dot(acc_b)
}

/// Full surrogate `g_t(L)` at the state's current basis, computed from the
/// accumulators and the running constant only. Requires `t ≥ 1`.
pub fn surrogate_value<T: Scalar>(state: &BasisState<T>, lambda1: T) -> T {
    surrogate_at(state, &state.basis, lambda1)
}

/// `g_t` evaluated at an arbitrary basis using the state's accumulators.
pub fn surrogate_at<T: Scalar>(state: &BasisState<T>, basis: &DMatrix<T>, lambda1: T) -> T {
    let t = T::lit(state.t.max(1) as f64);
    let two = T::lit(2.0);
    (data_term(basis, &state.acc_a, &state.acc_b) + state.loss_const) / t
        + lambda1 * max_row_norm_squared(basis) / (two * t)
}

/// Column subproblem `h(x) = ½a‖x‖² + ⟨c, x⟩ + (λ/2)·maxᵢ(sᵢ + xᵢ²)`, where
/// `sᵢ` is the squared norm of row `i` without the column being updated.
struct ColumnProblem<'a, T> {
    a: T,
    c: &'a DVector<T>,
    rest: &'a [T],
    lambda: T,
}

impl<'a, T: Scalar> ColumnProblem<'a, T> {
    fn value(&self, x: &DVector<T>) -> T {
        let two = T::lit(2.0);
        let top = self
            .rest
            .iter()
            .zip(x.iter())
            .map(|(&s, &xi)| s + xi * xi)
            .fold(T::zero(), |a, b| a.max(b));
        self.a * x.norm_squared() / two + self.c.dot(x) + self.lambda * top / two
    }

    /// Exact minimizer. For a fixed level `M ≥ maxᵢ sᵢ` the rows decouple and
    /// each coordinate is the unconstrained optimum `−cᵢ/a` clipped to
    /// `|xᵢ| ≤ √(M − sᵢ)`; the optimal level solves a monotone 1-D equation.
    fn minimize(&self) -> DVector<T> {
        let zero = T::zero();
        let two = T::lit(2.0);
        let free = self.c.map(|ci| -ci / self.a);
        if self.lambda == zero {
            return free;
        }
        let floor = self.rest.iter().copied().fold(zero, |a, b| a.max(b));
        let ceil = self
            .rest
            .iter()
            .zip(free.iter())
            .map(|(&s, &x)| s + x * x)
            .fold(zero, |a, b| a.max(b));
        // derivative of the partially minimized objective in M
        let slope = |m: T| -> T {
            let mut g = self.lambda / two;
            for (i, &s) in self.rest.iter().enumerate() {
                let room = m - s;
                let xi = free[i];
                if xi * xi > room {
                    if room <= zero {
                        return -T::max_value().unwrap();
                    }
                    g += self.a / two - self.c[i].abs() / (two * room.sqrt());
                }
            }
            g
        };
        let level = if ceil <= floor {
            floor
        } else {
            let (mut lo, mut hi) = (floor, ceil);
            for _ in 0..200 {
                let mid = (lo + hi) / two;
                if mid <= lo || mid >= hi {
                    break;
                }
                if slope(mid) < zero {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        DVector::from_iterator(
            free.len(),
            free.iter().zip(self.rest).map(|(&x, &s)| {
                let radius = (level - s).max(zero).sqrt();
                x.max(-radius).min(radius)
            }),
        )
    }
}

/// Counters from one call to [`update_basis`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BasisUpdateStats {
    pub passes: usize,
    /// Columns updated with the subgradient step.
    pub subgradient_steps: usize,
    /// Columns where the subgradient step would have increased the surrogate
    /// and the exact column minimizer was used instead.
    pub exact_steps: usize,
    /// Columns skipped because `A_jj` was negligible.
    pub skipped: usize,
}

/// Number of passes [`update_basis`] runs at sample count `t`.
pub fn passes_for<T: Scalar>(t: u64, config: &SolverConfig<T>) -> usize {
    if t <= config.basis_burn_in {
        config.basis_burn_in_passes
    } else {
        config.basis_passes
    }
}

/// Column-wise block coordinate descent on `g_t`.
///
/// Each pass computes the subgradient `U` of `½‖L‖²_{2,∞}` and then updates
/// the columns in order with `l_j ← l_j − (La_j − b_j + λ₁u_j)/A_jj`. A step
/// that would raise the column objective is replaced by the exact column
/// minimizer, so `g_t` never increases. Multi-pass runs stop early once the
/// largest entry change falls below `basis_tol`.
pub fn update_basis<T: Scalar>(
    state: &mut BasisState<T>,
    config: &SolverConfig<T>,
) -> Result<BasisUpdateStats> {
    let passes = passes_for(state.t, config);
    update_basis_passes(state, config.lambda1, passes, config.basis_tol)
}

/// [`update_basis`] with an explicit pass budget.
pub fn update_basis_passes<T: Scalar>(
    state: &mut BasisState<T>,
    lambda1: T,
    passes: usize,
    tol: T,
) -> Result<BasisUpdateStats> {
    if state.t == 0 {
        return Err(Error::InvalidParameter("basis update needs at least one sample".into()));
    }
    let d = state.d();
    let min_energy = T::lit(MIN_COLUMN_ENERGY);
    let mut stats = BasisUpdateStats::default();
    let mut row_sq = row_norms_squared(&state.basis);

    for _ in 0..passes {
        stats.passes += 1;
        let sub = max_row_norm_subgradient(&state.basis);
        let mut largest_change = T::zero();
        for j in 0..d {
            let a_jj = state.acc_a[(j, j)];
            if a_jj < min_energy {
                stats.skipped += 1;
                continue;
            }
            let old = state.basis.column(j).into_owned();
            let la_j = &state.basis * state.acc_a.column(j);
            let grad = &la_j - state.acc_b.column(j) + sub.column(j) * lambda1;
            let step = &old - grad / a_jj;

            let c = la_j - &old * a_jj - state.acc_b.column(j);
            let rest: Vec<T> = row_sq.iter().zip(old.iter()).map(|(&s, &x)| s - x * x).collect();
            let problem = ColumnProblem { a: a_jj, c: &c, rest: &rest, lambda: lambda1 };
            let new = if problem.value(&step) <= problem.value(&old) {
                stats.subgradient_steps += 1;
                step
            } else {
                stats.exact_steps += 1;
                problem.minimize()
            };

            largest_change = largest_change.max((&new - &old).amax());
            for (i, s) in row_sq.iter_mut().enumerate() {
                *s = rest[i] + new[i] * new[i];
            }
            state.basis.set_column(j, &new);
        }
        if largest_change < tol {
            break;
        }
    }
    Ok(stats)
}

/// Prox of `(τ/2)‖·‖²_{2,∞}`: rows longer than a common level `m` are scaled
/// down to length `m`, where `τm = Σᵢ (‖vᵢ‖ − m)₊`.
pub fn prox_max_row_norm<T: Scalar>(v: &DMatrix<T>, tau: T) -> DMatrix<T> {
    if tau <= T::zero() {
        return v.clone();
    }
    let norms: Vec<T> = row_norms_squared(v).into_iter().map(|x| x.sqrt()).collect();
    let mut sorted = norms.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite row norms"));
    let mut level = T::zero();
    let mut partial = T::zero();
    for k in 0..sorted.len() {
        partial += sorted[k];
        let m = partial / (tau + T::lit((k + 1) as f64));
        let next = sorted.get(k + 1).copied().unwrap_or(T::zero());
        if m >= next {
            level = m;
            break;
        }
    }
    let mut out = v.clone();
    for (i, &n) in norms.iter().enumerate() {
        if n > level {
            let scaled = out.row(i) * (level / n);
            out.set_row(i, &scaled);
        }
    }
    out
}

/// Minimizes `g_t` to convergence: column passes as in [`update_basis`],
/// then accelerated proximal gradient on the whole basis.
///
/// Column descent alone can stop short of the minimum because the max-row
/// term couples the columns; the proximal phase is exact for that term.
/// Returns the number of proximal iterations used.
pub fn minimize_surrogate<T: Scalar>(
    state: &mut BasisState<T>,
    lambda1: T,
    max_iters: usize,
    tol: T,
) -> Result<usize> {
    update_basis_passes(state, lambda1, 50, tol)?;
    let lip = SymmetricEigen::new(state.acc_a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b));
    if lip <= T::lit(MIN_COLUMN_ENERGY) {
        return Ok(0);
    }
    let step = T::one() / lip;
    let objective = |l: &DMatrix<T>| data_term(l, &state.acc_a, &state.acc_b) + lambda1 * max_row_norm_squared(l) / T::lit(2.0);

    let mut x = state.basis.clone();
    let mut y = x.clone();
    let mut momentum = T::one();
    let mut best = objective(&x);
    let mut best_x = x.clone();
    let mut used = 0;
    for _ in 0..max_iters {
        used += 1;
        let grad = &y * &state.acc_a - &state.acc_b;
        let next = prox_max_row_norm(&(&y - grad * step), step * lambda1);
        let value = objective(&next);
        let change = (&next - &x).amax();
        if value > best {
            // restart the momentum from the best point
            y = best_x.clone();
            x = best_x.clone();
            momentum = T::one();
            if change < tol {
                break;
            }
            continue;
        }
        let m_next = (T::one() + (T::one() + T::lit(4.0) * momentum * momentum).sqrt()) / T::lit(2.0);
        y = &next + (&next - &x) * ((momentum - T::one()) / m_next);
        x = next;
        momentum = m_next;
        best = value;
        best_x = x.clone();
        if change < tol {
            break;
        }
    }
    state.basis = best_x;
    Ok(used)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, p: usize, d: usize, t: u64) -> BasisState<f64> {
        let mut s = BasisState::new(DMatrix::from_fn(p, d, |_, _| rng.random::<f64>() - 0.5));
        for _ in 0..t {
            let r = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5).normalize() * 0.9;
            let z = DVector::from_fn(p, |_, _| 3.0 * (rng.random::<f64>() - 0.5));
            let e = DVector::zeros(p);
            s.accumulate(&z, &e, &r, 0.5 * z.norm_squared());
        }
        s
    }

    #[test]
    fn subgradient_unique_max_row() {
        let l = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 3.0, 4.0, 0.5, 0.5]);
        let u = max_row_norm_subgradient(&l);
        let expected = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
        assert_eq!(u, expected);
    }

    #[test]
    fn subgradient_of_zero_is_zero() {
        let l = DMatrix::<f64>::zeros(4, 3);
        assert_eq!(max_row_norm_subgradient(&l), l);
    }

    #[test]
    fn subgradient_ties_split_evenly() {
        let l = DMatrix::from_row_slice(3, 2, &[3.0, 4.0, 0.0, 1.0, 5.0, 0.0]);
        let u = max_row_norm_subgradient(&l);
        assert_eq!(u.row(0), l.row(0) * 0.5);
        assert_eq!(u.row(2), l.row(2) * 0.5);
        assert_eq!(u.row(1).norm(), 0.0);
        assert_abs_diff_eq!(u.dot(&l), max_row_norm_squared(&l), epsilon = 1e-12);
    }

    #[test]
    fn accumulate_is_exact_rank_one_update() {
        let mut s = BasisState::new(DMatrix::<f64>::zeros(3, 2));
        let r = DVector::from_column_slice(&[0.5, -0.25]);
        let z = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let e = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
        s.accumulate(&z, &e, &r, 1.5);
        assert_eq!(s.acc_a, &r * r.transpose());
        assert_eq!(s.acc_b, (&z - &e) * r.transpose());
        assert_eq!((s.t, s.loss_const), (1, 1.5));
    }

    #[test]
    fn surrogate_at_zero_basis_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = random_state(&mut rng, 5, 2, 4);
        s.basis.fill(0.0);
        assert_abs_diff_eq!(surrogate_value(&s, 0.3), s.loss_const / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn unregularized_fixed_point_is_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (p, d) = (6, 3);
        let mut s = BasisState::new(DMatrix::from_fn(p, d, |_, _| rng.random::<f64>()));
        s.acc_a = DMatrix::identity(d, d);
        s.acc_b = DMatrix::from_fn(p, d, |_, _| rng.random::<f64>() - 0.5);
        s.t = 1;
        update_basis_passes(&mut s, 0.0, 3, 1e-14).unwrap();
        assert_abs_diff_eq!(s.basis, s.acc_b, epsilon = 1e-14);
    }

    #[test]
    fn update_never_increases_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..300 {
            let (p, d) = (4 + trial % 7, 1 + trial % 4);
            let mut s = random_state(&mut rng, p, d, 1 + (trial as u64 % 9));
            if trial % 5 == 0 {
                s.basis *= 20.0;
            }
            let lambda1 = [0.0, 0.05, 0.5, 5.0][trial % 4];
            let before = surrogate_value(&s, lambda1);
            update_basis_passes(&mut s, lambda1, 1 + trial % 3, 1e-9).unwrap();
            let after = surrogate_value(&s, lambda1);
            assert!(after <= before + 1e-12 * before.abs().max(1.0), "trial {trial}: {before} -> {after}");
        }
    }

    #[test]
    fn negligible_energy_columns_are_skipped() {
        let mut s = BasisState::new(DMatrix::from_element(3, 2, 1.0));
        s.acc_a[(0, 0)] = 1.0;
        s.acc_b = DMatrix::from_element(3, 2, 2.0);
        s.t = 1;
        let stats = update_basis_passes(&mut s, 0.1, 1, 1e-9).unwrap();
        assert_eq!(stats.skipped, 1);
        assert_eq!(s.basis.column(1), DMatrix::from_element(3, 1, 1.0));
    }

    #[test]
    fn column_minimizer_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let p = 5;
            let c = DVector::from_fn(p, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
            let rest: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 2.0).collect();
            let prob = ColumnProblem { a: 0.5 + rng.random::<f64>(), c: &c, rest: &rest, lambda: 3.0 * rng.random::<f64>() };
            let x = prob.minimize();
            let fx = prob.value(&x);
            for _ in 0..50 {
                let dx = DVector::from_fn(p, |_, _| 1e-3 * (rng.random::<f64>() - 0.5));
                assert!(fx <= prob.value(&(&x + dx)) + 1e-12);
            }
        }
    }

    #[test]
    fn update_requires_a_sample() {
        let mut s = BasisState::new(DMatrix::<f64>::zeros(2, 2));
        assert!(update_basis(&mut s, &SolverConfig::for_dimension(2)).is_err());
    }

    #[test]
    fn resident_bytes_depends_only_on_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_state(&mut rng, 7, 3, 1);
        let b = random_state(&mut rng, 7, 3, 50);
        assert_eq!(a.resident_bytes(), b.resident_bytes());
        assert_eq!(a.resident_bytes(), std::mem::size_of::<BasisState<f64>>() + (21 + 9 + 21) * 8);
    }

    #[test]
    fn max_row_prox_single_row_closed_form() {
        // one row: min ½‖x − v‖² + (τ/2)‖x‖² gives v/(1 + τ)
        let v = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let out = prox_max_row_norm(&v, 0.5);
        assert_abs_diff_eq!(out, &v / 1.5, epsilon = 1e-14);
        assert_eq!(prox_max_row_norm(&v, 0.0), v);
    }

    #[test]
    fn max_row_prox_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let v = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let tau = rng.random::<f64>() * 3.0;
            let f = |x: &DMatrix<f64>| 0.5 * (x - &v).norm_squared() + 0.5 * tau * max_row_norm_squared(x);
            let x = prox_max_row_norm(&v, tau);
            let fx = f(&x);
            for _ in 0..50 {
                let dx = DMatrix::from_fn(5, 3, |_, _| (rng.random::<f64>() - 0.5) * 1e-3);
                assert!(fx <= f(&(&x + dx)) + 1e-15);
            }
        }
    }

}
