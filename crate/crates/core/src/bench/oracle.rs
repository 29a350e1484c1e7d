//! Brute-force reference solvers for small instances.
//!
//! None of these call into `prox`, `coeff` or `basis`; they solve the same
//! problems by grid search, projected/proximal gradient, or subgradient
//! descent so the production routines can be checked against them.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest `p` / `d` an oracle accepts.
pub const MAX_P: usize = 10;
pub const MAX_D: usize = 4;

/// Noise penalty as seen by the oracles.
#[derive(Clone, Copy, Debug)]
pub enum OraclePenalty<'a> {
    L1(f64),
    L2(f64),
    Masked { c: f64, mask: &'a [bool] },
}

impl OraclePenalty<'_> {
    fn value(&self, e: &DVector<f64>) -> f64 {
        match *self {
            OraclePenalty::L1(lam) => lam * e.iter().map(|x| x.abs()).sum::<f64>(),
            OraclePenalty::L2(lam) => lam * e.norm(),
            OraclePenalty::Masked { c, mask } => e
                .iter()
                .zip(mask)
                .map(|(x, &m)| if m { c * x.abs() } else { x.abs() / c })
                .sum(),
        }
    }

    /// `argmin_e ½‖v − e‖² + step·θ(e)`, written out independently.
    fn prox(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        let shrink = |x: f64, t: f64| x.signum() * (x.abs() - t).max(0.0);
        match *self {
            OraclePenalty::L1(lam) => v.map(|x| shrink(x, step * lam)),
            OraclePenalty::L2(lam) => {
                let n = v.norm();
                let t = step * lam;
                if n <= t {
                    DVector::zeros(v.len())
                } else {
                    v * (1.0 - t / n)
                }
            }
            OraclePenalty::Masked { c, mask } => DVector::from_iterator(
                v.len(),
                v.iter().zip(mask).map(|(&x, &m)| shrink(x, step * if m { c } else { 1.0 / c })),
            ),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum OracleProblem<'a> {
    /// `min ½‖v − e‖² + τ‖e‖₁`.
    SoftThreshold { v: &'a [f64], tau: f64 },
    /// `min ½‖v − e‖² + τ‖e‖₂`.
    L2Shrink { v: &'a [f64], tau: f64 },
    /// `min ½‖v − e‖² + ‖m ∘ e‖₁`.
    MaskedSoftThreshold { v: &'a [f64], c: f64, mask: &'a [bool] },
    /// `min ½‖z − e − Lr‖²` over `‖r‖₂ ≤ 1`.
    ConstrainedCoeff { basis: &'a DMatrix<f64>, z: &'a DVector<f64>, e: &'a DVector<f64> },
    /// `min ½‖z − Lr − e‖² + θ(e) + (ε/2)‖r‖²` over `‖r‖₂ ≤ 1`, jointly in `(r, e)`.
    CoeffNoise {
        basis: &'a DMatrix<f64>,
        z: &'a DVector<f64>,
        penalty: OraclePenalty<'a>,
        epsilon: f64,
        restarts: usize,
        iterations: usize,
        seed: u64,
    },
    /// `min (1/t)(½tr(LᵀLA) − tr(LᵀB)) + (λ₁/2t)‖L‖²_{2,∞}` by subgradient
    /// descent with diminishing steps, started at `start`.
    BasisSubgradient {
        acc_a: &'a DMatrix<f64>,
        acc_b: &'a DMatrix<f64>,
        t: u64,
        lambda1: f64,
        start: &'a DMatrix<f64>,
        iterations: usize,
    },
    /// Same problem solved through its row decomposition: for a fixed level
    /// `M` each row is an independent trust-region problem, and the optimal
    /// level is found by golden-section search.
    BasisByRows { acc_a: &'a DMatrix<f64>, acc_b: &'a DMatrix<f64>, t: u64, lambda1: f64 },
}

/// Reference answer with its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    /// Primary variable: `e` for prox problems, `r` for coefficient problems,
    /// `L` for basis problems (vectors are returned as one column).
    pub point: DMatrix<f64>,
    /// `e` for the joint coefficient/noise problem.
    pub noise: Option<DVector<f64>>,
    /// Multiplier for the constrained coefficient problem.
    pub eta: Option<f64>,
    pub objective: f64,
}

struct Budget {
    start: Instant,
    limit: Duration,
}

impl Budget {
    fn check(&self) -> Result<()> {
        if self.start.elapsed() > self.limit {
            Err(Error::TimeBudgetExceeded)
        } else {
            Ok(())
        }
    }
}

fn check_size(p: usize, d: usize) -> Result<()> {
    if p > MAX_P || d > MAX_D {
        return Err(Error::InvalidParameter(format!(
            "oracle instances are limited to p ≤ {MAX_P}, d ≤ {MAX_D}; got p = {p}, d = {d}"
        )));
    }
    Ok(())
}

/// Solves `problem` by brute force within `budget`.
pub fn oracle_small_instance(problem: OracleProblem<'_>, budget: Duration) -> Result<OracleSolution> {
    let budget = Budget { start: Instant::now(), limit: budget };
    match problem {
        OracleProblem::SoftThreshold { v, tau } => {
            check_size(v.len(), 0)?;
            Ok(separable_grid(v, |_| tau))
        }
        OracleProblem::MaskedSoftThreshold { v, c, mask } => {
            check_size(v.len(), 0)?;
            if mask.len() != v.len() {
                return Err(Error::DimensionMismatch { what: "observation mask", expected: v.len(), got: mask.len() });
            }
            Ok(separable_grid(v, |i| if mask[i] { c } else { 1.0 / c }))
        }
        OracleProblem::L2Shrink { v, tau } => {
            check_size(v.len(), 0)?;
            Ok(l2_dual_projected_gradient(v, tau))
        }
        OracleProblem::ConstrainedCoeff { basis, z, e } => {
            check_size(basis.nrows(), basis.ncols())?;
            constrained_coeff(basis, z, e, &budget)
        }
        OracleProblem::CoeffNoise { basis, z, penalty, epsilon, restarts, iterations, seed } => {
            check_size(basis.nrows(), basis.ncols())?;
            coeff_noise(basis, z, penalty, epsilon, restarts, iterations, seed, &budget)
        }
        OracleProblem::BasisSubgradient { acc_a, acc_b, t, lambda1, start, iterations } => {
            check_size(acc_b.nrows(), acc_b.ncols())?;
            basis_subgradient(acc_a, acc_b, t, lambda1, start, iterations, &budget)
        }
        OracleProblem::BasisByRows { acc_a, acc_b, t, lambda1 } => {
            check_size(acc_b.nrows(), acc_b.ncols())?;
            basis_by_rows(acc_a, acc_b, t, lambda1, &budget)
        }
    }
}

/// Minimizes `f` (convex on `[lo, hi]`) by ternary search.
fn ternary(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mid = 0.5 * (lo + hi);
    [lo, mid, hi].into_iter().min_by(|x, y| f(*x).total_cmp(&f(*y))).unwrap()
}

/// Per coordinate: grid at step 1e-3 over `[−|v|−h, |v|+h]`, then ternary
/// refinement inside the best cell.
fn separable_grid(v: &[f64], tau: impl Fn(usize) -> f64) -> OracleSolution {
    const H: f64 = 1e-3;
    let mut e = DVector::zeros(v.len());
    let mut objective = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        let t = tau(i);
        let f = |x: f64| 0.5 * (vi - x) * (vi - x) + t * x.abs();
        let half = (vi.abs() / H).ceil() as i64 + 1;
        let best = (-half..=half)
            .map(|k| k as f64 * H)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        let x = ternary(best - H, best + H, f);
        let x = if f(0.0) <= f(x) { 0.0 } else { x };
        e[i] = x;
        objective += f(x);
    }
    OracleSolution { point: DMatrix::from_column_slice(v.len(), 1, e.as_slice()), noise: None, eta: None, objective }
}

/// The prox of `τ‖·‖₂` is `v − y*` with `y*` the projection of `v` onto the
/// `τ`-ball; `y*` is found by projected gradient on `½‖v − y‖²`.
fn l2_dual_projected_gradient(v: &[f64], tau: f64) -> OracleSolution {
    let v = DVector::from_column_slice(v);
    let project = |y: DVector<f64>| {
        let n = y.norm();
        if n > tau {
            y * (tau / n)
        } else {
            y
        }
    };
    let mut y = DVector::zeros(v.len());
    for _ in 0..2000 {
        let next = project(&y - (&y - &v) * 0.5);
        if (&next - &y).norm() == 0.0 {
            break;
        }
        y = next;
    }
    let objective = |e: &DVector<f64>| 0.5 * (&v - e).norm_squared() + tau * e.norm();
    let e = &v - &y;
    let zero = DVector::zeros(v.len());
    let e = if objective(&zero) <= objective(&e) { zero } else { e };
    OracleSolution {
        objective: objective(&e),
        point: DMatrix::from_column_slice(v.len(), 1, e.as_slice()),
        noise: None,
        eta: None,
    }
}

fn power_iteration(m: &DMatrix<f64>) -> f64 {
    let mut x = DVector::from_element(m.ncols(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..500 {
        let y = m * &x;
        let n = y.norm();
        if n == 0.0 {
            return 0.0;
        }
        lambda = n / x.norm();
        x = y / n;
    }
    lambda * 1.01
}

fn project_ball(r: DVector<f64>) -> DVector<f64> {
    let n = r.norm();
    if n > 1.0 {
        r / n
    } else {
        r
    }
}

/// 10⁴ log-spaced multipliers solved by LU, then projected-gradient polish.
fn constrained_coeff(
    basis: &DMatrix<f64>,
    z: &DVector<f64>,
    e: &DVector<f64>,
    budget: &Budget,
) -> Result<OracleSolution> {
    let d = basis.ncols();
    let target = z - e;
    let f = |r: &DVector<f64>| 0.5 * (&target - basis * r).norm_squared();
    let gram = basis.transpose() * basis;
    let rhs = basis.transpose() * &target;

    let hi = (rhs.norm() * 2.0).max(1.0);
    let lo = 1e-10;
    let steps = 10_000;
    let mut best_r = DVector::zeros(d);
    let mut best_f = f(&best_r);
    let mut best_eta = None;
    let mut closest = f64::INFINITY;
    for k in 0..steps {
        let eta = lo * (hi / lo).powf(k as f64 / (steps - 1) as f64);
        let shifted = &gram + DMatrix::identity(d, d) * eta;
        let Some(r) = shifted.lu().solve(&rhs) else { continue };
        let n = r.norm();
        if (n - 1.0).abs() < closest {
            closest = (n - 1.0).abs();
            best_eta = Some(eta);
        }
        let r = project_ball(r);
        let fr = f(&r);
        if fr < best_f {
            best_f = fr;
            best_r = r;
        }
    }
    budget.check()?;

    let step = 1.0 / power_iteration(&gram).max(1e-12);
    let mut r = best_r.clone();
    for k in 0..100_000 {
        let grad = &gram * &r - &rhs;
        let next = project_ball(&r - grad * step);
        let done = (&next - &r).amax() < 1e-16;
        r = next;
        let fr = f(&r);
        if fr < best_f {
            best_f = fr;
            best_r = r.clone();
        }
        if done {
            break;
        }
        if k % 1000 == 0 {
            budget.check()?;
        }
    }
    Ok(OracleSolution {
        point: DMatrix::from_column_slice(d, 1, best_r.as_slice()),
        noise: None,
        eta: best_eta,
        objective: best_f,
    })
}

/// FISTA with adaptive restart on the joint variable, from several random
/// starting points; the best objective found wins.
#[allow(clippy::too_many_arguments)]
fn coeff_noise(
    basis: &DMatrix<f64>,
    z: &DVector<f64>,
    penalty: OraclePenalty<'_>,
    epsilon: f64,
    restarts: usize,
    iterations: usize,
    seed: u64,
    budget: &Budget,
) -> Result<OracleSolution> {
    let (p, d) = basis.shape();
    let objective = |r: &DVector<f64>, e: &DVector<f64>| {
        0.5 * (z - basis * r - e).norm_squared() + penalty.value(e) + 0.5 * epsilon * r.norm_squared()
    };
    // Lipschitz constant of the smooth part's gradient in (r, e)
    let lip = basis.norm_squared() + 1.0 + epsilon;
    let step = 1.0 / lip;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let mut r = project_ball(DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0));
        let mut e = DVector::from_fn(p, |_, _| z.amax() * (rng.random::<f64>() * 2.0 - 1.0));
        let (mut yr, mut ye) = (r.clone(), e.clone());
        let mut momentum = 1.0f64;
        let mut prev = objective(&r, &e);
        for k in 0..iterations {
            let resid = basis * &yr + &ye - z;
            let gr = basis.transpose() * &resid + &yr * epsilon;
            let r_next = project_ball(&yr - gr * step);
            let e_next = penalty.prox(&(&ye - &resid * step), step);
            let val = objective(&r_next, &e_next);
            if val > prev {
                // restart momentum from the last accepted point
                yr = r.clone();
                ye = e.clone();
                momentum = 1.0;
                continue;
            }
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / m_next;
            yr = &r_next + (&r_next - &r) * beta;
            ye = &e_next + (&e_next - &e) * beta;
            r = r_next;
            e = e_next;
            momentum = m_next;
            prev = val;
            if k % 1000 == 0 {
                budget.check()?;
            }
        }
        if best.as_ref().is_none_or(|(b, _, _)| prev < *b) {
            best = Some((prev, r, e));
        }
    }
    let (objective, r, e) = best.expect("at least one restart");
    Ok(OracleSolution { point: DMatrix::from_column_slice(d, 1, r.as_slice()), noise: Some(e), eta: None, objective })
}

fn basis_objective(acc_a: &DMatrix<f64>, acc_b: &DMatrix<f64>, t: f64, lambda1: f64, l: &DMatrix<f64>) -> f64 {
    let quad = 0.5 * (l.transpose() * l).component_mul(acc_a).sum();
    let lin = l.component_mul(acc_b).sum();
    let top = (0..l.nrows()).map(|i| l.row(i).norm_squared()).fold(0.0, f64::max);
    (quad - lin) / t + lambda1 * top / (2.0 * t)
}

fn basis_subgradient(
    acc_a: &DMatrix<f64>,
    acc_b: &DMatrix<f64>,
    t: u64,
    lambda1: f64,
    start: &DMatrix<f64>,
    iterations: usize,
    budget: &Budget,
) -> Result<OracleSolution> {
    let t = t as f64;
    let smooth = power_iteration(acc_a) / t + lambda1 / t;
    let base = 1.0 / smooth.max(1e-12);
    let mut l = start.clone();
    let mut best = (basis_objective(acc_a, acc_b, t, lambda1, &l), l.clone());
    for k in 0..iterations {
        let mut g = (&l * acc_a - acc_b) / t;
        let top = (0..l.nrows())
            .max_by(|&i, &j| l.row(i).norm_squared().total_cmp(&l.row(j).norm_squared()))
            .unwrap();
        let row = l.row(top) * (lambda1 / t);
        let updated = g.row(top) + row;
        g.set_row(top, &updated);
        let step = base / (1.0 + k as f64 / 1000.0).sqrt();
        l -= g * step;
        let val = basis_objective(acc_a, acc_b, t, lambda1, &l);
        if val < best.0 {
            best = (val, l.clone());
        }
        if k % 10_000 == 0 {
            budget.check()?;
        }
    }
    Ok(OracleSolution { objective: best.0, point: best.1, noise: None, eta: None })
}

/// `min ½xᵀAx − bᵀx` over `‖x‖² ≤ level` for PSD `A` given by its eigenpairs.
fn trust_region(eig: &SymmetricEigen<f64, nalgebra::Dyn>, b: &DVector<f64>, level: f64) -> DVector<f64> {
    let w = eig.eigenvectors.transpose() * b;
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|x| x.max(0.0)).collect();
    let tiny = 1e-13 * vals.iter().copied().fold(1.0, f64::max);
    let norm_at = |mu: f64| -> f64 {
        w.iter()
            .zip(&vals)
            .map(|(wi, li)| if li + mu > tiny { (wi / (li + mu)).powi(2) } else { 0.0 })
            .sum::<f64>()
            .sqrt()
    };
    let solve = |mu: f64| -> DVector<f64> {
        let scaled = DVector::from_iterator(
            w.len(),
            w.iter().zip(&vals).map(|(wi, li)| if li + mu > tiny { wi / (li + mu) } else { 0.0 }),
        );
        &eig.eigenvectors * scaled
    };
    let radius = level.max(0.0).sqrt();
    if norm_at(0.0) <= radius {
        return solve(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while norm_at(hi) > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_at(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    solve(hi)
}

fn basis_by_rows(
    acc_a: &DMatrix<f64>,
    acc_b: &DMatrix<f64>,
    t: u64,
    lambda1: f64,
    budget: &Budget,
) -> Result<OracleSolution> {
    let tf = t as f64;
    let eig = SymmetricEigen::new(acc_a.clone());
    let rows: Vec<DVector<f64>> = (0..acc_b.nrows()).map(|i| acc_b.row(i).transpose()).collect();
    let assemble = |level: f64| -> DMatrix<f64> {
        let mut l = DMatrix::zeros(acc_b.nrows(), acc_b.ncols());
        for (i, b) in rows.iter().enumerate() {
            l.set_row(i, &trust_region(&eig, b, level).transpose());
        }
        l
    };
    let value = |level: f64| basis_objective(acc_a, acc_b, tf, lambda1, &assemble(level));
    let free_top = (0..rows.len())
        .map(|i| trust_region(&eig, &rows[i], f64::INFINITY).norm_squared())
        .fold(0.0, f64::max);
    let level = ternary(0.0, free_top * 1.0001 + 1e-12, value);
    budget.check()?;
    let l = assemble(level);
    Ok(OracleSolution { objective: basis_objective(acc_a, acc_b, tf, lambda1, &l), point: l, noise: None, eta: None })
}
