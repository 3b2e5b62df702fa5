use gpassm::harness::{field_reference, field_rmse, run_experiment_with, ExperimentSetup, RunOptions};
use gpassm::ScenarioConfig;

/// Mean field error over runs should not grow from vehicle 5 onwards, allowing
/// up to 20% of single-step increases.
#[test]
fn field_error_decreases_as_vehicles_pass() {
    let cfg = ScenarioConfig {
        n_runs: 10,
        ..ScenarioConfig::default()
    };
    let setup = ExperimentSetup::new(&cfg).unwrap();
    let result = run_experiment_with(&setup, RunOptions::default()).unwrap();
    let reference = field_reference(&setup, false);
    let curve: Vec<f64> = (0..cfg.n_vehicles)
        .map(|i| {
            result
                .runs
                .iter()
                .map(|r| field_rmse(&r.field_means[i], &reference))
                .sum::<f64>()
                / result.runs.len() as f64
        })
        .collect();
    let tail = &curve[4..];
    let increases = tail.windows(2).filter(|w| w[1] > w[0]).count();
    let steps = tail.len() - 1;
    assert!(
        increases as f64 <= 0.2 * steps as f64,
        "{increases} increases in {steps} steps: {curve:?}"
    );
    assert!(curve[cfg.n_vehicles - 1] < curve[4]);
}

#[test]
fn baseline_is_identical_with_and_without_augmented_filter() {
    let cfg = ScenarioConfig {
        n_runs: 2,
        n_vehicles: 6,
        ..ScenarioConfig::default()
    };
    let setup = ExperimentSetup::new(&cfg).unwrap();
    let full = run_experiment_with(&setup, RunOptions::default()).unwrap();
    let base = run_experiment_with(
        &setup,
        RunOptions {
            baseline_only: true,
            ..RunOptions::default()
        },
    )
    .unwrap();
    for (a, b) in full.runs.iter().zip(&base.runs) {
        for (va, vb) in a.vehicles.iter().zip(&b.vehicles) {
            assert_eq!(va.cv_estimates, vb.cv_estimates);
            assert_eq!(va.rmse_cv, vb.rmse_cv);
            assert!(vb.rmse_gpassm.is_nan());
        }
    }
}
