mod common;

use common::*;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;

use sflqg::sim::{self, Policy, SystemModel};
use sflqg::sysid::{
    gram, ml_batch, neg_loglik, rls_init, rls_run, sigma_hat, GramAccumulator, RlsState,
    SufficientStats,
};

fn random_input(m: usize) -> Policy {
    Policy::RandomGaussian {
        cov: DMatrix::identity(m, m),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn recursive_matches_batch_at_every_step(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=2) {
        let model = SystemModel::random_stable(n, m, &mut rng(seed)).unwrap();
        let traj = sim::simulate_seeded(&model, &random_input(m), 300, seed).unwrap();
        let mut acc = GramAccumulator::new(n, m);
        let mut state: Option<RlsState> = None;
        for (t, (xi, next)) in traj.transitions().enumerate() {
            match state.as_mut() {
                Some(s) => s.update(&xi, next).unwrap(),
                None => {
                    acc.push(&xi, next);
                    if acc.is_well_posed() {
                        state = Some(RlsState::from_gram(&acc).unwrap());
                    }
                }
            }
            let Some(s) = &state else { continue };
            let prefix = traj.prefix(t + 1);
            let batch = ml_batch(&prefix).unwrap();
            let mut stacked = DMatrix::zeros(n + m, n);
            stacked.view_mut((0, 0), (n, n)).copy_from(&batch.a_hat.transpose());
            stacked.view_mut((n, 0), (m, n)).copy_from(&batch.b_hat.transpose());
            prop_assert!(rel_err(s.estimate(), &stacked) < 1e-8, "t={t}");

            let (u, v) = gram(&prefix);
            let u_inv = u.clone().try_inverse().unwrap();
            prop_assert!(rel_err(s.inv_gram(), &u_inv) < 1e-8, "t={t}");
            prop_assert!(rel_err(&(&u * s.estimate()), &v) < 1e-9, "t={t}");
        }
        prop_assert!(state.is_some());
    }

    #[test]
    fn ml_estimate_is_stationary_and_optimal(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=2) {
        let model = SystemModel::random_stable(n, m, &mut rng(seed)).unwrap();
        let traj = sim::simulate_seeded(&model, &random_input(m), 400, seed).unwrap();
        let est = ml_batch(&traj).unwrap();
        let stats = SufficientStats::from_trajectory(&traj);
        let g = nll_gradient_scale(&est.a_hat, &est.b_hat, &est.sigma_hat, &stats);
        prop_assert!(g <= 1e-5, "{g}");
        let at_ml = neg_loglik(&est.a_hat, &est.b_hat, &est.sigma_hat, &traj).unwrap();
        let at_truth = neg_loglik(model.a(), model.b(), model.sigma(), &traj).unwrap();
        prop_assert!(at_ml <= at_truth);
    }

    #[test]
    fn noise_free_data_is_interpolated(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=2) {
        let plant = SystemModel::random_stable(n, m, &mut rng(seed)).unwrap();
        let model = SystemModel::noise_free(plant.a().clone(), plant.b().clone()).unwrap();
        let traj = sim::simulate_seeded(&model, &random_input(m), 4 * (n + m), seed).unwrap();
        // exactness is only meaningful when U_T is well conditioned
        let (lo, hi) = sflqg::matops::eigen_range(&gram(&traj).0);
        prop_assume!(lo > 1e-5 * hi);
        let est = ml_batch(&traj).unwrap();
        prop_assert!((&est.a_hat - model.a()).amax() < 1e-10, "{}", (&est.a_hat - model.a()).amax());
        prop_assert!((&est.b_hat - model.b()).amax() < 1e-10);
        prop_assert!(est.sigma_hat.amax() < 1e-10);
    }
}

#[test]
fn initialization_times() {
    let scalar = SystemModel::new(dmatrix![0.5], dmatrix![1.0], dmatrix![0.1]).unwrap();
    let traj = sim::simulate_seeded(&scalar, &random_input(1), 50, 4).unwrap();
    assert_eq!(rls_init(&traj).unwrap().tau(), 2);

    let (model, _) = hagen();
    let traj = sim::simulate_seeded(&model, &random_input(1), 50, 4).unwrap();
    let state = rls_init(&traj).unwrap();
    assert_eq!(state.tau(), 3);
    let batch = ml_batch(&traj.prefix(3)).unwrap();
    assert!((state.a_hat() - &batch.a_hat).norm() < 1e-8 * batch.a_hat.norm());
}

#[test]
fn zero_regressor_leaves_state_unchanged() {
    let (model, _) = hagen();
    let traj = sim::simulate_seeded(&model, &random_input(1), 50, 4).unwrap();
    let mut state = rls_run(&traj).unwrap();
    let before = state.clone();
    state.update(&DVector::zeros(3), &dvector![0.3, -0.2]).unwrap();
    assert_eq!(state.estimate(), before.estimate());
    assert_eq!(state.inv_gram(), before.inv_gram());
}

#[test]
fn single_degenerate_sample_does_not_crash() {
    let traj = sim::Trajectory::from_parts(
        vec![dvector![1.0, 0.0], dvector![0.5, 0.0]],
        vec![dvector![0.0]],
    )
    .unwrap();
    let est = ml_batch(&traj).unwrap();
    // minimum-norm solution puts all weight on the only excited coordinate
    assert!((est.a_hat[(0, 0)] - 0.5).abs() < 1e-12);
    assert_eq!(est.b_hat[(0, 0)], 0.0);
    assert!(rls_init(&traj).is_err());
}

#[test]
fn unit_noise_likelihood_is_residual_trace() {
    let (model, _) = hagen();
    let traj = sim::simulate_seeded(&model, &random_input(1), 200, 8).unwrap();
    let w = sigma_hat(model.a(), model.b(), &traj).unwrap();
    let v = neg_loglik(model.a(), model.b(), &DMatrix::identity(2, 2), &traj).unwrap();
    assert!((v - w.trace()).abs() < 1e-12);
}

#[test]
fn residual_covariance_converges_to_sigma() {
    let (model, _) = hagen();
    let traj = sim::simulate_seeded(&model, &random_input(1), 100_000, 21).unwrap();
    let w = sigma_hat(model.a(), model.b(), &traj).unwrap();
    assert!(rel_err(&w, model.sigma()) < 0.05, "{w}");
}

#[test]
fn estimation_error_median_decreases() {
    let (model, _) = hagen();
    let truth = stacked_truth(&model);
    let checkpoints = [100usize, 1000, 10_000];
    let mut errs = vec![Vec::new(); 3];
    for run in 0..100 {
        let mut r = sim::run_rng(17, run);
        let traj = sim::simulate(&model, &random_input(1), 10_000, &mut r, &mut sim::NoFeedback).unwrap();
        for (i, &t) in checkpoints.iter().enumerate() {
            let state = rls_run(&traj.prefix(t)).unwrap();
            errs[i].push((state.estimate() - &truth).norm());
        }
    }
    let med: Vec<f64> = errs.iter_mut().map(|e| sflqg::bench::median(e)).collect();
    assert!(med[0] > med[1] && med[1] > med[2], "{med:?}");
}
