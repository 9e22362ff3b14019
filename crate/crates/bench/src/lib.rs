//! Fixtures shared by the criterion benches.

use gammareg_core::init::{ransac_with, RansacConfig};
use gammareg_core::simulation::{generate, OutlierPattern, Simulated, SimulationSpec};
use gammareg_core::ModelParams;

/// Replication 0 of the pattern-(a) design at the given size.
pub fn design(n: usize, p: usize, epsilon: f64) -> Simulated {
    let pattern = if epsilon > 0.0 { OutlierPattern::A } else { OutlierPattern::None };
    let spec = SimulationSpec { n, p, epsilon, pattern, seed: 1, ..SimulationSpec::default() };
    generate(&spec).expect("valid design")
}

/// The default initial estimate for `sim`'s training data.
pub fn initial_estimate(sim: &Simulated) -> ModelParams {
    ransac_with(&sim.train, &RansacConfig { seed: 1, ..RansacConfig::default() }).expect("initializer succeeds")
}
