use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use omrmd::basis::{minimize_surrogate, surrogate_at, update_basis_passes};
use omrmd::bench::{expressed_variance, oracle_small_instance, OraclePenalty, OracleProblem};
use omrmd::coeff::{ridge_candidate, solve_coeff_noise, SolverConfig};
use omrmd::{constrained_r, l2_column_shrink, masked_soft_threshold, soft_threshold, BasisState, RegularizerSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const BUDGET: Duration = Duration::from_secs(120);

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        scale * x
    })
}

fn vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        scale * x
    })
}

fn prox_objective(v: &DVector<f64>, e: &DVector<f64>, penalty: f64) -> f64 {
    0.5 * (v - e).norm_squared() + penalty
}

#[test]
fn soft_threshold_matches_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let v = vector(&mut rng, n, 2.0);
        let tau = rng.random::<f64>() * 2.0;
        let e = soft_threshold(&v, tau);
        let ours = prox_objective(&v, &e, tau * e.lp_norm(1));
        let oracle = oracle_small_instance(OracleProblem::SoftThreshold { v: v.as_slice(), tau }, BUDGET).unwrap();
        assert!((ours - oracle.objective).abs() <= 1e-6, "{ours} vs {}", oracle.objective);
        assert!(ours <= oracle.objective + 1e-12);
    }
}

#[test]
fn group_shrink_matches_projection_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let v = vector(&mut rng, n, 1.5);
        let tau = rng.random::<f64>() * 4.0;
        let e = l2_column_shrink(&v, tau);
        let ours = prox_objective(&v, &e, tau * e.norm());
        let oracle = oracle_small_instance(OracleProblem::L2Shrink { v: v.as_slice(), tau }, BUDGET).unwrap();
        assert!((ours - oracle.objective).abs() <= 1e-6);
    }
}

#[test]
fn masked_threshold_matches_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(1..=10);
        let v = vector(&mut rng, n, 3.0);
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let c = 0.5 + 2.0 * rng.random::<f64>();
        let e = masked_soft_threshold(&v, c, &mask).unwrap();
        let penalty: f64 = e.iter().zip(&mask).map(|(x, &m)| if m { c * x.abs() } else { x.abs() / c }).sum();
        let ours = prox_objective(&v, &e, penalty);
        let oracle =
            oracle_small_instance(OracleProblem::MaskedSoftThreshold { v: v.as_slice(), c, mask: &mask }, BUDGET)
                .unwrap();
        assert!((ours - oracle.objective).abs() <= 1e-6);
    }
}

#[test]
fn ridge_candidate_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let l = gaussian(&mut rng, 8, 4, 1.0);
        let z = vector(&mut rng, 8, 1.0);
        let e = vector(&mut rng, 8, 0.1);
        let r = ridge_candidate(&l, &z, &e, 0.01).unwrap();
        let lhs = l.transpose() * &l + DMatrix::identity(4, 4) * 0.01;
        let rhs = l.transpose() * (&z - &e);
        assert!((&lhs * &r - &rhs).norm() <= 1e-10);
        let direct = lhs.lu().solve(&rhs).unwrap();
        assert!((&r - direct).amax() <= 1e-10);
    }
}

#[test]
fn constrained_coefficients_match_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SolverConfig::<f64>::for_dimension(8);
    let mut checked = 0;
    while checked < 30 {
        let l = gaussian(&mut rng, 8, 4, 0.5);
        let z = vector(&mut rng, 8, 3.0);
        let e = DVector::zeros(8);
        if ridge_candidate(&l, &z, &e, cfg.epsilon_jitter).unwrap().norm() <= 1.0 {
            continue;
        }
        checked += 1;
        let c = constrained_r(&l, &z, &e, &cfg).unwrap();
        assert!((c.r.norm() - 1.0).abs() <= 1e-4);
        assert!(c.eta > 0.0);
        let ours = 0.5 * (&z - &e - &l * &c.r).norm_squared();
        let oracle = oracle_small_instance(OracleProblem::ConstrainedCoeff { basis: &l, z: &z, e: &e }, BUDGET).unwrap();
        assert!((ours - oracle.objective).abs() <= 1e-6, "{ours} vs {}", oracle.objective);
        let grid_eta = oracle.eta.unwrap();
        assert!((grid_eta - c.eta).abs() <= 2e-3 * c.eta.max(1.0), "{grid_eta} vs {}", c.eta);
    }
}

#[test]
fn identity_instance_multiplier() {
    let l = DMatrix::<f64>::identity(2, 2);
    let z = DVector::from_column_slice(&[2.0, 0.0]);
    let e = DVector::zeros(2);
    let cfg = SolverConfig::<f64>::for_dimension(2);
    let c = constrained_r(&l, &z, &e, &cfg).unwrap();
    assert!((c.eta - 1.0).abs() <= 1e-9);
    let oracle = oracle_small_instance(OracleProblem::ConstrainedCoeff { basis: &l, z: &z, e: &e }, BUDGET).unwrap();
    assert!((oracle.eta.unwrap() - 1.0).abs() <= 1e-3);
}

#[test]
fn coefficient_noise_pair_matches_restart_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = SolverConfig::<f64>::for_dimension(6);
    for trial in 0..5 {
        let l = gaussian(&mut rng, 6, 3, 1.0);
        let mut z = vector(&mut rng, 6, 1.5);
        z[trial] += 8.0;
        let mask: Vec<bool> = (0..6).map(|i| i % 2 == 0).collect();
        let cases: [(RegularizerSpec<'_, f64>, OraclePenalty<'_>); 3] = [
            (RegularizerSpec::L1 { lambda2: 0.4 }, OraclePenalty::L1(0.4)),
            (RegularizerSpec::L2Column { lambda2: 0.8 }, OraclePenalty::L2(0.8)),
            (RegularizerSpec::MaskedL1 { c: 4.0, mask: &mask }, OraclePenalty::Masked { c: 4.0, mask: &mask }),
        ];
        for (spec, penalty) in cases {
            let ours = solve_coeff_noise(&l, &z, &spec, &cfg).unwrap();
            let ours = if matches!(spec, RegularizerSpec::MaskedL1 { .. }) {
                // the alternation is slow here; 100 iterations is not always enough
                let mut long = cfg.clone();
                long.bcd_max_iters = 5000;
                solve_coeff_noise(&l, &z, &spec, &long).unwrap()
            } else {
                ours
            };
            let obj = 0.5 * (&z - &l * &ours.r - &ours.e).norm_squared()
                + spec.value(&ours.e)
                + 0.5 * cfg.epsilon_jitter * ours.r.norm_squared();
            let oracle = oracle_small_instance(
                OracleProblem::CoeffNoise {
                    basis: &l,
                    z: &z,
                    penalty,
                    epsilon: cfg.epsilon_jitter,
                    restarts: 20,
                    iterations: 10_000,
                    seed: trial as u64,
                },
                BUDGET,
            )
            .unwrap();
            assert!((obj - oracle.objective).abs() <= 1e-4, "{spec:?}: {obj} vs {}", oracle.objective);
        }
    }
}

#[test]
fn basis_update_reaches_certified_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (p, d, t) = (10, 3, 5u64);
    let lambda1 = 0.5;
    let mut acc_a = DMatrix::zeros(d, d);
    let mut acc_b = DMatrix::zeros(p, d);
    for _ in 0..t {
        let mut r = vector(&mut rng, d, 1.0);
        r /= r.norm().max(1.0);
        let z = vector(&mut rng, p, 1.0);
        acc_a += &r * r.transpose();
        acc_b += &z * r.transpose();
    }
    let start = gaussian(&mut rng, p, d, 0.3);
    let mut state = BasisState { basis: start.clone(), acc_a: acc_a.clone(), acc_b: acc_b.clone(), t, loss_const: 0.0 };
    minimize_surrogate(&mut state, lambda1, 100_000, 1e-13).unwrap();
    let ours = surrogate_at(&state, &state.basis, lambda1);

    let mut columns_only = BasisState { basis: start.clone(), ..state.clone() };
    update_basis_passes(&mut columns_only, lambda1, 5000, 0.0).unwrap();
    let stalled = surrogate_at(&columns_only, &columns_only.basis, lambda1);
    assert!(ours <= stalled + 1e-12);

    let rows = oracle_small_instance(OracleProblem::BasisByRows { acc_a: &acc_a, acc_b: &acc_b, t, lambda1 }, BUDGET)
        .unwrap();
    let sub = oracle_small_instance(
        OracleProblem::BasisSubgradient { acc_a: &acc_a, acc_b: &acc_b, t, lambda1, start: &start, iterations: 1_000_000 },
        BUDGET,
    )
    .unwrap();
    // the oracles report the surrogate without the constant term, which is zero here
    assert!((ours - sub.objective).abs() <= 1e-5, "{ours} vs {}", sub.objective);
    assert!((ours - rows.objective).abs() <= 1e-5, "{ours} vs {}", rows.objective);
}

#[test]
fn expressed_variance_matches_qr_projector() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let u = gaussian(&mut rng, 5, 2, 1.0);
        let l = gaussian(&mut rng, 5, 2, 1.0);
        let q = l.clone().qr().q();
        let projector = &q * q.transpose();
        let direct = (&projector * &u * u.transpose()).trace() / (&u * u.transpose()).trace();
        assert!((expressed_variance(&u, &l).unwrap() - direct).abs() <= 1e-10);
    }
}

#[test]
fn expressed_variance_depends_on_span_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let u = gaussian(&mut rng, 9, 3, 1.0);
        let l = gaussian(&mut rng, 9, 4, 1.0);
        let mix = gaussian(&mut rng, 4, 4, 1.0) + DMatrix::identity(4, 4) * 3.0;
        let a = expressed_variance(&u, &l).unwrap();
        let b = expressed_variance(&u, &(&l * mix)).unwrap();
        assert!((a - b).abs() <= 1e-10);
        assert!((0.0..=1.0 + 1e-12).contains(&a));
    }
}
