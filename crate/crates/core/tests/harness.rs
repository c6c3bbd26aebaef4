use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ssp_core::estimator::GaussianBelief;
use ssp_core::harness::montecarlo::{run_montecarlo, summarize};
use ssp_core::harness::{draw_theta, Experiment, ExperimentConfig, Steering};
use ssp_core::sensing::SensorConfig;

fn experiment(steps: usize) -> Experiment {
    let mut cfg = ExperimentConfig::default();
    cfg.run.num_steps = steps;
    Experiment::new(cfg).unwrap()
}

fn small_planner(steps: usize) -> Experiment {
    let mut cfg = ExperimentConfig::default();
    cfg.run.num_steps = steps;
    cfg.planner.horizon = 6;
    cfg.planner.population = 8;
    cfg.planner.generations = 5;
    Experiment::new(cfg).unwrap()
}

#[test]
fn prior_draws_have_the_configured_spread() {
    let exp = experiment(1);
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let n = exp.prior.dim();
    let draws: Vec<DVector<f64>> = (0..10_000).map(|_| draw_theta(&exp.prior, &mut rng).unwrap()).collect();
    for k in 0..n {
        let m = draws.iter().map(|d| d[k]).sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d[k] - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((4.9..=5.1).contains(&sd), "coefficient {k}: std {sd}");
    }
}

#[test]
fn true_fields_repeat_per_run_and_differ_across_runs() {
    let exp = experiment(1);
    assert_eq!(
        exp.draw_true_field(3).unwrap().theta(),
        exp.draw_true_field(3).unwrap().theta()
    );
    assert_ne!(
        exp.draw_true_field(3).unwrap().theta(),
        exp.draw_true_field(4).unwrap().theta()
    );
}

#[test]
fn straight_protocol_holds_depth_and_closes_five_metres_per_step() {
    let exp = experiment(30);
    let rec = exp.run_episode(SensorConfig::Ctd, Steering::Straight, 0).unwrap();
    assert_eq!(rec.steps.len(), 31);
    for (t, s) in rec.steps.iter().enumerate() {
        let p = s.state.point();
        assert!((p.depth - 15.0).abs() < 1e-9, "step {t}: depth {}", p.depth);
        assert!(
            (p.range - (2000.0 - 5.0 * t as f64)).abs() < 1e-6,
            "step {t}: range {}",
            p.range
        );
    }
}

#[test]
fn zero_steps_hold_only_the_prior() {
    let exp = experiment(1);
    let rec = exp.run_steps(SensorConfig::Both, Steering::Planned, 0, 0).unwrap();
    assert_eq!(rec.steps.len(), 1);
    let s = &rec.steps[0];
    assert_eq!(s.rrmse, 1.0);
    assert!(s.measurement.is_none() && s.plan.is_none());
    assert_eq!(rec.final_belief, exp.prior);
}

#[test]
fn first_record_is_the_prior_with_unit_rrmse() {
    let exp = experiment(3);
    let rec = exp.run_episode(SensorConfig::Ctd, Steering::Straight, 5).unwrap();
    assert_eq!(rec.steps[0].rrmse, 1.0);
    assert_eq!(rec.steps[0].mean, exp.prior.mean);
    assert!(rec.steps[1..].iter().all(|s| s.measurement.is_some()));
}

#[test]
fn planned_episode_is_bit_identical_on_rerun() {
    let exp = small_planner(4);
    let a = exp.run_episode(SensorConfig::Both, Steering::Planned, 2).unwrap();
    let b = exp.run_episode(SensorConfig::Both, Steering::Planned, 2).unwrap();
    assert_eq!(a, b);
    for s in &a.steps[1..] {
        let p = s.plan.as_ref().unwrap();
        assert!(p.best_cost <= p.straight_cost);
        assert_eq!(p.evaluations, 8 * 6);
    }
}

#[test]
fn configurations_share_fields_and_noise() {
    let exp = experiment(5);
    let ctd = exp.run_episode(SensorConfig::Ctd, Steering::Straight, 1).unwrap();
    let both = exp.run_episode(SensorConfig::Both, Steering::Straight, 1).unwrap();
    assert_eq!(ctd.true_theta, both.true_theta);
    for (a, b) in ctd.steps.iter().zip(&both.steps).skip(1) {
        assert_eq!(a.measurement.unwrap().ctd, b.measurement.unwrap().ctd);
    }
}

#[test]
fn single_run_aggregate_equals_its_metrics() {
    let exp = experiment(10);
    let out = run_montecarlo(&exp, SensorConfig::Ctd, Steering::Straight, 0..1);
    assert_eq!(out.records.len(), 1);
    for (row, s) in out.summary.iter().zip(&out.records[0].steps) {
        assert_eq!(row.mean_rrmse, s.rrmse);
        assert_eq!(row.mean_ssim, s.ssim);
        assert_eq!(row.mean_total_variance, s.total_variance);
        assert_eq!(row.runs, 1);
    }
}

#[test]
fn mean_of_means_matches_pooled_mean() {
    let exp = experiment(10);
    let all = run_montecarlo(&exp, SensorConfig::Ctd, Steering::Straight, 0..50);
    let first = summarize(&all.records[..25]);
    let second = summarize(&all.records[25..]);
    for ((a, b), pooled) in first.iter().zip(&second).zip(&all.summary) {
        let m = (a.mean_rrmse + b.mean_rrmse) / 2.0;
        assert!((m - pooled.mean_rrmse).abs() <= 1e-12 * pooled.mean_rrmse.abs().max(1.0));
        let m = (a.mean_ssim + b.mean_ssim) / 2.0;
        assert!((m - pooled.mean_ssim).abs() <= 1e-12);
    }
}

/// Normalised estimation error squared of a CTD-only filter, averaged over
/// runs: a consistent filter gives about n.
#[test]
fn ctd_filter_is_consistent() {
    let exp = experiment(50);
    let out = run_montecarlo(&exp, SensorConfig::Ctd, Steering::Straight, 0..100);
    assert!(out.failures.is_empty());
    let n = exp.prior.dim() as f64;
    let nees: Vec<f64> = out
        .records
        .iter()
        .map(|r| {
            let b: &GaussianBelief = &r.final_belief;
            let e = &r.true_theta - &b.mean;
            let chol = b.covariance.clone().cholesky().unwrap();
            e.dot(&chol.solve(&e))
        })
        .collect();
    let mean = nees.iter().sum::<f64>() / nees.len() as f64;
    assert!((0.5 * n..=2.0 * n).contains(&mean), "mean NEES {mean}, n = {n}");
}
