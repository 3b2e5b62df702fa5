//! Experiment orchestration: vehicles pass through the intersection one after
//! another, sharing the learned field, while a plain CV filter tracks the same
//! measurements for comparison.

use nalgebra::{Matrix4, Vector2, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{predict, reinitialize_vehicle, update, AugmentedBelief, CvFilter};
use crate::gpfield::{
    build_grid, field_rows, means_at_inducing_points, prior_belief, FieldBelief, FieldRow, InducingGrid,
};
use crate::kernel::{KernelParams, Point2};
use crate::models::{cv_matrices, MotionModel, ObservationModel};
use crate::scenario::{
    build_paths, choose_path, generate_truth, road_region, simulate_measurements, split_point, vehicle_rng, PathLabel,
    PathSpec, ScenarioConfig, SegmentKind, TruthTrajectory,
};

/// Inducing points farther than this from every path are not scored.
pub const ON_PATH_RADIUS: f64 = 1.0;
/// Inducing points this close to the split point are excluded from field scoring.
pub const SPLIT_EXCLUSION_RADIUS: f64 = 2.0;

/// Everything derived once from a config and shared read-only by all runs.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub config: ScenarioConfig,
    pub params: KernelParams,
    pub grid: InducingGrid,
    pub model: MotionModel,
    pub obs: ObservationModel,
    pub left: PathSpec,
    pub right: PathSpec,
    pub prior: FieldBelief,
}

impl ExperimentSetup {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let params = config.kernel_params()?;
        let grid = build_grid(params, &road_region(config), config.grid_spacing)?;
        Self::with_grid(config, grid)
    }

    /// Use a caller-supplied grid instead of the road mask.
    pub fn with_grid(config: &ScenarioConfig, grid: InducingGrid) -> Result<Self> {
        config.validate()?;
        let model = cv_matrices(config.sampling_interval())?;
        let obs = ObservationModel::isotropic(config.filter_r)?;
        let (left, right) = build_paths(config)?;
        let prior = prior_belief(&grid).with_drift(config.drift_var);
        Ok(ExperimentSetup {
            config: config.clone(),
            params: *grid.params(),
            grid,
            model,
            obs,
            left,
            right,
            prior,
        })
    }

    pub fn path(&self, label: PathLabel) -> &PathSpec {
        match label {
            PathLabel::Left => &self.left,
            PathLabel::Right => &self.right,
        }
    }

    pub fn initial_covariance(&self) -> Matrix4<f64> {
        let c = &self.config;
        Matrix4::from_diagonal(&Vector4::new(
            c.init_pos_var,
            c.init_pos_var,
            c.init_vel_var,
            c.init_vel_var,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// When false the field block is held at its value from the start of each
    /// vehicle and never correlates with the kinematics.
    pub learn_field: bool,
    /// Skip the augmented filter entirely; its columns are reported as NaN.
    pub baseline_only: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            learn_field: true,
            baseline_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRunRecord {
    pub run: usize,
    pub vehicle: usize,
    pub path: PathLabel,
    pub truth: TruthTrajectory,
    pub measurements: Vec<Vector2<f64>>,
    pub gpassm_estimates: Vec<Vector4<f64>>,
    pub cv_estimates: Vec<Vector4<f64>>,
    /// Position error norms per step.
    pub gpassm_errors: Vec<f64>,
    pub cv_errors: Vec<f64>,
    pub rmse_gpassm: f64,
    pub rmse_cv: f64,
}

impl VehicleRunRecord {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// `sqrt(mean(e²))` over per-step position error norms.
pub fn compute_rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::invalid("cannot compute RMSE of an empty sequence"));
    }
    let ss: f64 = errors.iter().map(|e| e * e).sum();
    Ok((ss / errors.len() as f64).sqrt())
}

fn position_errors(truth: &TruthTrajectory, estimates: &[Vector4<f64>]) -> Vec<f64> {
    estimates
        .iter()
        .enumerate()
        .map(|(k, x)| (Point2::new(x[0], x[1]) - truth.position(k)).norm())
        .collect()
}

/// Track one vehicle with both filters. `belief` carries the shared field in
/// and the updated field out.
pub fn run_vehicle(
    belief: &mut AugmentedBelief,
    truth: &TruthTrajectory,
    measurements: &[Vector2<f64>],
    setup: &ExperimentSetup,
    options: RunOptions,
) -> Result<VehicleRunRecord> {
    if truth.is_empty() || truth.len() != measurements.len() {
        return Err(Error::invalid(format!(
            "truth has {} steps but {} measurements were given",
            truth.len(),
            measurements.len()
        )));
    }
    let x0 = truth.states[0];
    let p0 = setup.initial_covariance();
    let drift_var = setup.config.drift_var;

    let mut cv = CvFilter::new(&setup.model, setup.params.sigma_f_sq, x0, p0);
    let mut cv_estimates = Vec::with_capacity(truth.len());
    for (k, y) in measurements.iter().enumerate() {
        if k > 0 {
            cv.predict(&setup.model);
        }
        cv.update(&setup.obs, y)?;
        cv_estimates.push(cv.mean);
    }

    let gpassm_estimates = if options.baseline_only {
        vec![Vector4::repeat(f64::NAN); truth.len()]
    } else {
        reinitialize_vehicle(belief, &x0, &p0);
        let frozen = (!options.learn_field).then(|| belief.field(drift_var));
        let mut out = Vec::with_capacity(truth.len());
        for (k, y) in measurements.iter().enumerate() {
            if k > 0 {
                predict(belief, &setup.model, &setup.grid, drift_var)?;
            }
            update(belief, &setup.obs, y)?;
            if let Some(field) = &frozen {
                belief.set_field(field);
            }
            out.push(belief.kinematic_mean());
        }
        out
    };

    let gpassm_errors = position_errors(truth, &gpassm_estimates);
    let cv_errors = position_errors(truth, &cv_estimates);
    Ok(VehicleRunRecord {
        run: 0,
        vehicle: 0,
        path: truth.label,
        truth: truth.clone(),
        measurements: measurements.to_vec(),
        rmse_gpassm: compute_rmse(&gpassm_errors)?,
        rmse_cv: compute_rmse(&cv_errors)?,
        gpassm_estimates,
        cv_estimates,
        gpassm_errors,
        cv_errors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub vehicles: Vec<VehicleRunRecord>,
    /// Mean input at every inducing point after each vehicle.
    pub field_means: Vec<Vec<Vector2<f64>>>,
}

/// One simulation: a fresh field, then vehicles in order. Stops after
/// `stop_after` vehicles when given. Returns the final belief as well.
pub fn run_single(
    setup: &ExperimentSetup,
    run: usize,
    options: RunOptions,
    stop_after: Option<usize>,
) -> Result<(RunResult, AugmentedBelief)> {
    let n = stop_after.unwrap_or(setup.config.n_vehicles);
    let mut belief = AugmentedBelief::from_field(&setup.prior);
    let mut vehicles = Vec::with_capacity(n);
    let mut field_means = Vec::with_capacity(n);
    for vehicle in 0..n {
        let mut rng = vehicle_rng(setup.config.rng_seed, run, vehicle);
        let label = choose_path(&mut rng);
        let truth = generate_truth(setup.path(label), &setup.config, &mut rng);
        let ys = simulate_measurements(&truth, setup.config.meas_noise_var, &mut rng);
        let mut record =
            run_vehicle(&mut belief, &truth, &ys, setup, options).map_err(|e| e.in_vehicle(Some(run), vehicle))?;
        record.run = run;
        record.vehicle = vehicle;
        vehicles.push(record);
        field_means.push(means_at_inducing_points(&setup.grid, &belief.field_mean()));
    }
    Ok((
        RunResult {
            run,
            vehicles,
            field_means,
        },
        belief,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ScenarioConfig,
    pub runs: Vec<RunResult>,
    /// Field posterior at the end of the first run.
    pub field: Vec<FieldRow>,
}

/// All `n_runs` simulations, in parallel; results are in run order.
pub fn run_experiment(config: &ScenarioConfig) -> Result<ExperimentResult> {
    let setup = ExperimentSetup::new(config)?;
    run_experiment_with(&setup, RunOptions::default())
}

pub fn run_experiment_with(setup: &ExperimentSetup, options: RunOptions) -> Result<ExperimentResult> {
    let results: Vec<(RunResult, Option<FieldBelief>)> = (0..setup.config.n_runs)
        .into_par_iter()
        .map(|run| {
            let (result, belief) = run_single(setup, run, options, None)?;
            let field = (run == 0).then(|| belief.field(setup.config.drift_var));
            Ok((result, field))
        })
        .collect::<Result<_>>()?;
    let mut runs = Vec::with_capacity(results.len());
    let mut field = Vec::new();
    for (result, final_field) in results {
        if let Some(f) = final_field {
            field = field_rows(&setup.grid, &f)?;
        }
        runs.push(result);
    }
    Ok(ExperimentResult {
        config: setup.config.clone(),
        runs,
        field,
    })
}

/// Field posterior of run 0 after `vehicles` vehicles (0 gives the prior).
pub fn field_after(setup: &ExperimentSetup, vehicles: usize) -> Result<Vec<FieldRow>> {
    let n = setup.config.n_vehicles;
    if vehicles > n {
        return Err(Error::invalid(format!(
            "cannot export the field after vehicle {vehicles}: only {n} vehicles are simulated"
        )));
    }
    let (_, belief) = run_single(setup, 0, RunOptions::default(), Some(vehicles))?;
    field_rows(&setup.grid, &belief.field(setup.config.drift_var))
}

/// First and last vehicle on each path within one run.
pub fn path_cohorts(run: &RunResult) -> (Vec<&VehicleRunRecord>, Vec<&VehicleRunRecord>) {
    let mut first = Vec::new();
    let mut last = Vec::new();
    for label in PathLabel::ALL {
        let mut on_path = run.vehicles.iter().filter(|v| v.path == label);
        if let Some(f) = on_path.next() {
            first.push(f);
        }
        if let Some(l) = run.vehicles.iter().rev().find(|v| v.path == label) {
            last.push(l);
        }
    }
    (first, last)
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Aggregate RMSE statistics over a whole experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub mean_rmse_gpassm: f64,
    pub mean_rmse_cv: f64,
    pub first_cohort_gpassm: f64,
    pub first_cohort_cv: f64,
    pub last_cohort_gpassm: f64,
    pub last_cohort_cv: f64,
    /// Runs whose last-vehicle cohort is tracked better by the augmented model.
    pub runs_last_cohort_improved: usize,
}

pub fn summarize(result: &ExperimentResult) -> Summary {
    let all = || result.runs.iter().flat_map(|r| r.vehicles.iter());
    let mut first_gp = Vec::new();
    let mut first_cv = Vec::new();
    let mut last_gp = Vec::new();
    let mut last_cv = Vec::new();
    let mut improved = 0;
    for run in &result.runs {
        let (first, last) = path_cohorts(run);
        let fg = mean(first.iter().map(|v| v.rmse_gpassm));
        let fc = mean(first.iter().map(|v| v.rmse_cv));
        let lg = mean(last.iter().map(|v| v.rmse_gpassm));
        let lc = mean(last.iter().map(|v| v.rmse_cv));
        if lg < lc {
            improved += 1;
        }
        first_gp.push(fg);
        first_cv.push(fc);
        last_gp.push(lg);
        last_cv.push(lc);
    }
    Summary {
        runs: result.runs.len(),
        mean_rmse_gpassm: mean(all().map(|v| v.rmse_gpassm)),
        mean_rmse_cv: mean(all().map(|v| v.rmse_cv)),
        first_cohort_gpassm: mean(first_gp),
        first_cohort_cv: mean(first_cv),
        last_cohort_gpassm: mean(last_gp),
        last_cohort_cv: mean(last_cv),
        runs_last_cohort_improved: improved,
    }
}

/// Mean RMSE per vehicle index across runs: `(vehicle, gpassm, cv)`.
pub fn rmse_by_vehicle(result: &ExperimentResult) -> Vec<(usize, f64, f64)> {
    let n = result.runs.iter().map(|r| r.vehicles.len()).max().unwrap_or(0);
    (0..n)
        .map(|i| {
            let recs = || result.runs.iter().filter_map(|r| r.vehicles.get(i));
            (i, mean(recs().map(|v| v.rmse_gpassm)), mean(recs().map(|v| v.rmse_cv)))
        })
        .collect()
}

/// Inducing points scored against the true acceleration, with that truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldReference {
    pub indices: Vec<usize>,
    pub truth: Vec<Vector2<f64>>,
}

/// Points within [`ON_PATH_RADIUS`] of a path centreline, optionally without
/// those within [`SPLIT_EXCLUSION_RADIUS`] of the split. Truth is the path's
/// acceleration at the nearest arc length.
pub fn field_reference(setup: &ExperimentSetup, exclude_split: bool) -> FieldReference {
    let v2 = setup.config.speed * setup.config.speed;
    let mut indices = Vec::new();
    let mut truth = Vec::new();
    for (i, xi) in setup.grid.points().iter().enumerate() {
        if exclude_split && (xi - split_point()).norm() < SPLIT_EXCLUSION_RADIUS {
            continue;
        }
        let best = [&setup.left, &setup.right]
            .into_iter()
            .map(|p| (p, p.closest(xi)))
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .expect("two paths");
        let (path, (s, d)) = best;
        if d <= ON_PATH_RADIUS {
            indices.push(i);
            truth.push(path.sample(s).curvature * v2);
        }
    }
    FieldReference { indices, truth }
}

/// RMSE of the field mean against the reference accelerations.
pub fn field_rmse(means: &[Vector2<f64>], reference: &FieldReference) -> f64 {
    let ss: f64 = reference
        .indices
        .iter()
        .zip(&reference.truth)
        .map(|(&i, t)| (means[i] - t).norm_squared())
        .sum();
    (ss / reference.indices.len().max(1) as f64).sqrt()
}

/// Mean signed offset from the turn centreline over steps on the arc,
/// for the augmented filter and the baseline. Positive means outside the turn.
pub fn turn_bias(setup: &ExperimentSetup, records: &[&VehicleRunRecord]) -> (f64, f64) {
    let mut gp = Vec::new();
    let mut cv = Vec::new();
    for rec in records {
        let path = setup.path(rec.path);
        for k in 0..rec.len() {
            if rec.truth.kinds[k] != SegmentKind::Turn {
                continue;
            }
            let g = rec.gpassm_estimates[k];
            let c = rec.cv_estimates[k];
            if let Some(o) = path.turn_offset(&Point2::new(g[0], g[1])) {
                gp.push(o);
            }
            if let Some(o) = path.turn_offset(&Point2::new(c[0], c[1])) {
                cv.push(o);
            }
        }
    }
    (mean(gp), mean(cv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpfield::InducingGrid;
    use crate::scenario::truth_along;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            n_runs: 2,
            n_vehicles: 3,
            approach_length: 6.0,
            exit_length: 4.0,
            mask_half_width: 1.5,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn rmse_definition() {
        assert_eq!(compute_rmse(&[1.0; 7]).unwrap(), 1.0);
        assert_eq!(compute_rmse(&[5.0; 3]).unwrap(), 5.0);
        assert_eq!(compute_rmse(&[0.0; 4]).unwrap(), 0.0);
        assert!(compute_rmse(&[]).is_err());
    }

    #[test]
    fn rmse_of_three_four_offsets() {
        let c = small_config();
        let (left, _) = build_paths(&c).unwrap();
        let truth = truth_along(&left, &c, 0.0);
        let shifted: Vec<_> = truth
            .states
            .iter()
            .map(|x| x + Vector4::new(3.0, 4.0, 0.0, 0.0))
            .collect();
        let errs = position_errors(&truth, &shifted);
        assert!((compute_rmse(&errs).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn straight_noise_free_vehicle_matches_baseline() {
        let mut c = small_config();
        c.meas_noise_var = 0.0;
        let setup = ExperimentSetup::new(&c).unwrap();
        let (left, _) = build_paths(&c).unwrap();
        let truth = truth_along(&left, &c, 0.0);
        let ys: Vec<_> = (0..truth.len()).map(|k| truth.position(k)).collect();
        let mut belief = AugmentedBelief::from_field(&setup.prior);
        let rec = run_vehicle(&mut belief, &truth, &ys, &setup, RunOptions::default()).unwrap();
        for k in 0..rec.len() {
            if truth.kinds[k] != SegmentKind::Straight {
                break;
            }
            assert!(
                (rec.gpassm_estimates[k] - rec.cv_estimates[k]).amax() < 1e-8,
                "step {k}"
            );
        }
    }

    #[test]
    fn single_vehicle_experiment_reduces_to_run_vehicle() {
        let mut c = small_config();
        c.n_runs = 1;
        c.n_vehicles = 1;
        let setup = ExperimentSetup::new(&c).unwrap();
        let result = run_experiment_with(&setup, RunOptions::default()).unwrap();
        assert_eq!(result.runs.len(), 1);
        assert_eq!(result.runs[0].vehicles.len(), 1);

        let mut rng = vehicle_rng(c.rng_seed, 0, 0);
        let label = choose_path(&mut rng);
        let truth = generate_truth(setup.path(label), &c, &mut rng);
        let ys = simulate_measurements(&truth, c.meas_noise_var, &mut rng);
        let mut belief = AugmentedBelief::from_field(&setup.prior);
        let rec = run_vehicle(&mut belief, &truth, &ys, &setup, RunOptions::default()).unwrap();
        assert_eq!(result.runs[0].vehicles[0], rec);
        assert_eq!(result.field, field_rows(&setup.grid, &belief.field(0.0)).unwrap());
    }

    #[test]
    fn runs_do_not_depend_on_each_other() {
        let c = small_config();
        let setup = ExperimentSetup::new(&c).unwrap();
        let all = run_experiment_with(&setup, RunOptions::default()).unwrap();
        let (second, _) = run_single(&setup, 1, RunOptions::default(), None).unwrap();
        assert_eq!(all.runs[1], second);
        assert_eq!(all.runs.len(), 2);
        assert!(all
            .runs
            .iter()
            .all(|r| r.vehicles.len() == 3 && r.field_means.len() == 3));
    }

    #[test]
    fn baseline_is_unaffected_by_the_augmented_filter() {
        let c = small_config();
        let setup = ExperimentSetup::new(&c).unwrap();
        let full = run_experiment_with(&setup, RunOptions::default()).unwrap();
        let only = run_experiment_with(
            &setup,
            RunOptions {
                baseline_only: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        for (a, b) in full.runs.iter().zip(&only.runs) {
            for (va, vb) in a.vehicles.iter().zip(&b.vehicles) {
                assert_eq!(va.cv_estimates, vb.cv_estimates);
                assert_eq!(va.rmse_cv, vb.rmse_cv);
                assert!(vb.rmse_gpassm.is_nan());
            }
        }
    }

    #[test]
    fn mismatched_measurements_are_rejected() {
        let c = small_config();
        let setup = ExperimentSetup::new(&c).unwrap();
        let truth = truth_along(&setup.left, &c, 0.0);
        let mut belief = AugmentedBelief::from_field(&setup.prior);
        let err = run_vehicle(&mut belief, &truth, &[], &setup, RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn cohorts_pick_first_and_last_per_path() {
        let c = ScenarioConfig {
            n_vehicles: 8,
            ..small_config()
        };
        let setup = ExperimentSetup::new(&c).unwrap();
        let (run, _) = run_single(&setup, 0, RunOptions::default(), None).unwrap();
        let (first, last) = path_cohorts(&run);
        for label in PathLabel::ALL {
            let idx: Vec<_> = run
                .vehicles
                .iter()
                .filter(|v| v.path == label)
                .map(|v| v.vehicle)
                .collect();
            if let (Some(f), Some(l)) = (idx.first(), idx.last()) {
                assert!(first.iter().any(|v| v.vehicle == *f));
                assert!(last.iter().any(|v| v.vehicle == *l));
            }
        }
    }

    #[test]
    fn field_reference_points_are_near_paths() {
        let c = small_config();
        let setup = ExperimentSetup::new(&c).unwrap();
        let all = field_reference(&setup, false);
        let excl = field_reference(&setup, true);
        assert!(!all.indices.is_empty());
        assert!(excl.indices.len() < all.indices.len());
        let v2 = c.speed * c.speed / c.turn_radius;
        for t in &all.truth {
            let n = t.norm();
            assert!(n == 0.0 || (n - v2).abs() < 1e-9);
        }
        let zeros = vec![Vector2::zeros(); setup.grid.len()];
        let rmse = field_rmse(&zeros, &all);
        assert!(rmse > 0.0 && rmse <= v2);
    }

    #[test]
    fn prior_field_has_no_turn_bias_difference_on_straights() {
        let c = small_config();
        let setup = ExperimentSetup::new(&c).unwrap();
        let (run, _) = run_single(&setup, 0, RunOptions::default(), None).unwrap();
        let recs: Vec<_> = run.vehicles.iter().collect();
        let (gp, cv) = turn_bias(&setup, &recs);
        assert!(gp.is_finite() && cv.is_finite());
    }

    #[test]
    fn custom_grid_setup() {
        let c = small_config();
        let params = c.kernel_params().unwrap();
        let grid = InducingGrid::from_points(params, vec![Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)], 1.0).unwrap();
        let setup = ExperimentSetup::with_grid(&c, grid).unwrap();
        assert_eq!(setup.prior.dim(), 4);
        let (run, belief) = run_single(&setup, 0, RunOptions::default(), Some(2)).unwrap();
        assert_eq!(run.vehicles.len(), 2);
        assert_eq!(belief.field_dim(), 4);
    }
}
