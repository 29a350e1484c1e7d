//! Per-sample coefficient and noise solver.
//!
//! Solves `min ½‖z − Lr − e‖² + θ(e)` subject to `‖r‖₂ ≤ 1` by alternating
//! between an `r`-step (ridge candidate, or a bisection on the Lagrange
//! multiplier of the norm constraint when the candidate is infeasible) and an
//! `e`-step (the penalty's proximal operator applied to `z − Lr`).
//!
//! `LᵀL` is eigendecomposed once per call, so each evaluation of
//! `r(η) = (LᵀL + ηI)⁻¹Lᵀ(z − e)` inside the bisection costs `O(d²)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::prox::RegularizerSpec;
use crate::Scalar;

/// Tunable parameters of the per-sample and basis solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig<T> {
    /// Weight of the squared max row norm of the basis.
    pub lambda1: T,
    /// Weight of the noise penalty.
    pub lambda2: T,
    /// Ridge jitter `ε` added to `LᵀL` when forming the unconstrained candidate.
    pub epsilon_jitter: T,
    pub bcd_tol: T,
    pub bcd_max_iters: usize,
    pub bisection_tol: T,
    pub bisection_max_iters: usize,
    /// Number of samples during which the basis update runs extra passes.
    pub basis_burn_in: u64,
    /// Pass cap while `t ≤ basis_burn_in`.
    pub basis_burn_in_passes: usize,
    /// Pass count once `t > basis_burn_in`.
    pub basis_passes: usize,
    /// Early exit for multi-pass basis updates (max absolute column change).
    pub basis_tol: T,
}

impl<T: Scalar> SolverConfig<T> {
    /// Defaults for ambient dimension `p`: `λ₁ = λ₂ = 1/√p`, `ε = 0.01`,
    /// BCD stops at an iterate change below `1e-6` or after 100 iterations.
    pub fn for_dimension(p: usize) -> Self {
        let lambda = T::one() / T::lit(p.max(1) as f64).sqrt();
        Self {
            lambda1: lambda,
            lambda2: lambda,
            epsilon_jitter: T::lit(0.01),
            bcd_tol: T::lit(1e-6),
            bcd_max_iters: 100,
            bisection_tol: T::lit(1e-10).max(T::eps() * T::lit(64.0)),
            bisection_max_iters: 200,
            basis_burn_in: 100,
            basis_burn_in_passes: 5,
            basis_passes: 1,
            basis_tol: T::lit(1e-6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("bcd_tol", self.bcd_tol),
            ("bisection_tol", self.bisection_tol),
            ("basis_tol", self.basis_tol),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.epsilon_jitter >= T::zero()) {
            return Err(Error::InvalidParameter("epsilon_jitter must be nonnegative".into()));
        }
        if self.bcd_max_iters == 0
            || self.bisection_max_iters == 0
            || self.basis_passes == 0
            || self.basis_burn_in_passes == 0
        {
            return Err(Error::InvalidParameter("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Solution of one per-sample subproblem.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffNoisePair<T> {
    pub r: DVector<T>,
    pub e: DVector<T>,
    /// Multiplier of the norm constraint at the last `r`-step; zero when the
    /// ridge candidate was feasible.
    pub eta: T,
    pub iterations: usize,
    /// Sup-norm of the `r`-block stationarity residual at the returned pair
    /// (the `e`-block holds exactly after the final prox step).
    pub kkt_residual: T,
    /// Set when a bisection ran out of iterations before reaching tolerance.
    pub bisection_stalled: bool,
}

/// Result of the constrained `r`-step.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstrainedCoeff<T> {
    pub r: DVector<T>,
    pub eta: T,
    pub stalled: bool,
}

/// Spectral form of `LᵀL` used to evaluate `(LᵀL + ηI)⁻¹ b` for many `η`.
#[derive(Clone, Debug)]
pub struct GramSpectrum<T: Scalar> {
    eigenvalues: DVector<T>,
    eigenvectors: DMatrix<T>,
}

impl<T: Scalar> GramSpectrum<T> {
    pub fn new(basis: &DMatrix<T>) -> Self {
        let gram = basis.tr_mul(basis);
        let eig = SymmetricEigen::new(gram);
        Self {
            eigenvalues: eig.eigenvalues.map(|x| x.max(T::zero())),
            eigenvectors: eig.eigenvectors,
        }
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b))
    }

    pub fn max_eigenvalue(&self) -> T {
        self.eigenvalues.iter().copied().fold(T::zero(), |a, b| a.max(b))
    }

    /// Whether `LᵀL + shift·I` is numerically singular.
    pub fn is_singular(&self, shift: T) -> bool {
        let d = T::lit(self.eigenvalues.len() as f64);
        self.min_eigenvalue() + shift <= T::eps() * d * self.max_eigenvalue().max(T::one())
    }

    /// Coordinates of `b` in the eigenbasis.
    pub fn rotate(&self, b: &DVector<T>) -> DVector<T> {
        self.eigenvectors.tr_mul(b)
    }

    /// `‖(LᵀL + ηI)⁻¹ b‖₂` given the rotated right-hand side `w = Vᵀb`.
    pub fn norm_at(&self, w: &DVector<T>, eta: T) -> T {
        w.iter()
            .zip(self.eigenvalues.iter())
            .map(|(&wi, &li)| {
                let x = wi / (li + eta);
                x * x
            })
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    /// `(LᵀL + ηI)⁻¹ b` given `w = Vᵀb`.
    pub fn solve_at(&self, w: &DVector<T>, eta: T) -> DVector<T> {
        let scaled = DVector::from_iterator(
            w.len(),
            w.iter().zip(self.eigenvalues.iter()).map(|(&wi, &li)| wi / (li + eta)),
        );
        &self.eigenvectors * scaled
    }
}

fn check_dims<T: Scalar>(basis: &DMatrix<T>, z: &DVector<T>, e: Option<&DVector<T>>) -> Result<()> {
    let p = basis.nrows();
    if z.len() != p {
        return Err(Error::DimensionMismatch { what: "sample length", expected: p, got: z.len() });
    }
    if let Some(e) = e {
        if e.len() != p {
            return Err(Error::DimensionMismatch { what: "noise length", expected: p, got: e.len() });
        }
    }
    Ok(())
}

/// Unconstrained minimizer `(LᵀL + εI)⁻¹ Lᵀ(z − e)` via a Cholesky solve.
///
/// Returns [`Error::SingularSystem`] when the shifted Gram matrix is not
/// positive definite (ε = 0 with rank-deficient `L`).
pub fn ridge_candidate<T: Scalar>(
    basis: &DMatrix<T>,
    z: &DVector<T>,
    e: &DVector<T>,
    epsilon: T,
) -> Result<DVector<T>> {
    check_dims(basis, z, Some(e))?;
    let d = basis.ncols();
    let mut gram = basis.tr_mul(basis);
    for i in 0..d {
        gram[(i, i)] += epsilon;
    }
    let rhs = basis.tr_mul(&(z - e));
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    let r = chol.solve(&rhs);
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(r)
}

/// Bisection for the multiplier `η > 0` with `‖r(η)‖₂ = 1`.
///
/// The bracket starts at `[0, 1]`; the upper end is doubled until
/// `‖r(η₂)‖ ≤ 1`. `norm(η)` is strictly decreasing, so the bracket always
/// contains the root. On a stall the feasible upper end is returned.
pub fn bisect_multiplier<T: Scalar>(
    spectrum: &GramSpectrum<T>,
    w: &DVector<T>,
    tol: T,
    max_iters: usize,
) -> ConstrainedCoeff<T> {
    let one = T::one();
    let two = T::lit(2.0);
    let mut lo = T::zero();
    let mut hi = one;
    while spectrum.norm_at(w, hi) > one {
        lo = hi;
        hi *= two;
    }
    for _ in 0..max_iters {
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        let norm = spectrum.norm_at(w, mid);
        if (norm - one).abs() <= tol {
            return ConstrainedCoeff { r: spectrum.solve_at(w, mid), eta: mid, stalled: false };
        }
        if norm < one {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let stalled = (spectrum.norm_at(w, hi) - one).abs() > tol;
    if stalled {
        log::warn!("multiplier bisection stalled at bracket [{lo}, {hi}]");
    }
    ConstrainedCoeff { r: spectrum.solve_at(w, hi), eta: hi, stalled }
}

/// Minimizes `½‖z − Lr − e‖²` over the unit ball when the ridge candidate is
/// infeasible. Returns `r(η)` on the sphere with its multiplier `η`.
pub fn constrained_r<T: Scalar>(
    basis: &DMatrix<T>,
    z: &DVector<T>,
    e: &DVector<T>,
    config: &SolverConfig<T>,
) -> Result<ConstrainedCoeff<T>> {
    check_dims(basis, z, Some(e))?;
    let spectrum = GramSpectrum::new(basis);
    let w = spectrum.rotate(&basis.tr_mul(&(z - e)));
    Ok(bisect_multiplier(&spectrum, &w, config.bisection_tol, config.bisection_max_iters))
}

/// Objective the BCD iteration decreases: `½‖z − Lr − e‖² + θ(e) + (ε/2)‖r‖²`.
pub fn jittered_objective<T: Scalar>(
    basis: &DMatrix<T>,
    z: &DVector<T>,
    r: &DVector<T>,
    e: &DVector<T>,
    spec: &RegularizerSpec<'_, T>,
    epsilon: T,
) -> T {
    sample_loss(basis, z, r, e, spec) + epsilon * r.norm_squared() / T::lit(2.0)
}

/// Per-sample loss `½‖z − Lr − e‖² + θ(e)`.
pub fn sample_loss<T: Scalar>(
    basis: &DMatrix<T>,
    z: &DVector<T>,
    r: &DVector<T>,
    e: &DVector<T>,
    spec: &RegularizerSpec<'_, T>,
) -> T {
    let resid = z - basis * r - e;
    resid.norm_squared() / T::lit(2.0) + spec.value(e)
}

/// Optional per-iteration observer, used by tests to check monotonicity.
pub type IterationHook<'h, T> = dyn FnMut(usize, &DVector<T>, &DVector<T>) + 'h;

/// Block coordinate descent for one sample. Starts from `e = 0`.
pub fn solve_coeff_noise<T: Scalar>(
    basis: &DMatrix<T>,
    z: &DVector<T>,
    spec: &RegularizerSpec<'_, T>,
    config: &SolverConfig<T>,
) -> Result<CoeffNoisePair<T>> {
    solve_coeff_noise_observed(basis, z, spec, config, None)
}

/// [`solve_coeff_noise`] with a hook called after every `(r, e)` update.
pub fn solve_coeff_noise_observed<T: Scalar>(
    basis: &DMatrix<T>,
    z: &DVector<T>,
    spec: &RegularizerSpec<'_, T>,
    config: &SolverConfig<T>,
    mut hook: Option<&mut IterationHook<'_, T>>,
) -> Result<CoeffNoisePair<T>> {
    check_dims(basis, z, None)?;
    let (p, d) = basis.shape();
    spec.validate(p)?;
    if let RegularizerSpec::MaskedL1 { mask, .. } = spec {
        if !mask.iter().any(|&m| m) {
            log::warn!("sample has no observed coordinates");
        }
    }

    let spectrum = GramSpectrum::new(basis);
    let eps = config.epsilon_jitter;
    if spectrum.is_singular(eps) {
        return Err(Error::SingularSystem);
    }

    let mut r = DVector::zeros(d);
    let mut e = DVector::zeros(p);
    let mut eta = T::zero();
    let mut stalled = false;
    let mut iterations = 0;

    while iterations < config.bcd_max_iters {
        iterations += 1;
        let w = spectrum.rotate(&basis.tr_mul(&(z - &e)));
        let candidate = spectrum.solve_at(&w, eps);
        let r_next = if candidate.norm() <= T::one() {
            eta = T::zero();
            candidate
        } else {
            let c = bisect_multiplier(&spectrum, &w, config.bisection_tol, config.bisection_max_iters);
            stalled |= c.stalled;
            eta = c.eta;
            c.r
        };
        let e_next = spec.prox(&(z - basis * &r_next))?;
        let change = (&r_next - &r).amax().max((&e_next - &e).amax());
        r = r_next;
        e = e_next;
        if let Some(h) = hook.as_deref_mut() {
            h(iterations, &r, &e);
        }
        if change < config.bcd_tol {
            break;
        }
    }

    let shift = if eta > T::zero() { eta } else { eps };
    let grad = basis.tr_mul(&(basis * &r + &e - z)) + &r * shift;
    Ok(CoeffNoisePair {
        r,
        e,
        eta,
        iterations,
        kkt_residual: grad.amax(),
        bisection_stalled: stalled,
    })
}
