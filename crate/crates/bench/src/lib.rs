//! Fixtures shared by the criterion benchmarks.

use gpassm::{AugmentedBelief, ExperimentSetup, ScenarioConfig};

/// Setup at the default intersection geometry.
pub fn default_setup() -> ExperimentSetup {
    ExperimentSetup::new(&ScenarioConfig::default()).expect("default config is valid")
}

/// A belief positioned on the approach road with the prior field.
pub fn belief_on_approach(setup: &ExperimentSetup) -> AugmentedBelief {
    let mut b = AugmentedBelief::from_field(&setup.prior);
    let x0 = nalgebra::Vector4::new(0.0, -10.0, 0.0, setup.config.speed);
    gpassm::reinitialize_vehicle(&mut b, &x0, &setup.initial_covariance());
    b
}
