//! Tracking with a Gaussian-process augmented state-space model.
//!
//! A constant-velocity vehicle model is augmented with an unknown,
//! position-dependent acceleration field. The field is a sparse
//! inducing-point GP whose (whitened) inducing values are part of the EKF
//! state, so every tracked vehicle refines a field shared with the next one.

pub mod error;
pub mod export;
pub mod filter;
pub mod gpfield;
pub mod harness;
pub mod kernel;
pub mod models;
pub mod oracle;
pub mod scenario;

pub use error::{Error, Result};
pub use filter::{predict, reinitialize_vehicle, update, AugmentedBelief, CvFilter};
pub use gpfield::{
    build_grid, condition_on_input_observation, drift, fic_variance, field_rows, input_mean, prior_belief, FieldBelief,
    FieldRow, InducingGrid, Rect, Region,
};
pub use harness::{
    compute_rmse, field_after, run_experiment, run_experiment_with, run_single, run_vehicle, summarize,
    ExperimentResult, ExperimentSetup, RunOptions, RunResult, Summary, VehicleRunRecord,
};
pub use kernel::{cross_covariance, gram_matrix, kernel_eval, kernel_grad, KernelParams, Point2};
pub use models::{
    augmented_process_noise, augmented_transition_jacobian, augmented_transition_mean, cv_matrices, MotionModel,
    ObservationModel,
};
pub use scenario::{PathLabel, PathSpec, ScenarioConfig, TruthTrajectory};
