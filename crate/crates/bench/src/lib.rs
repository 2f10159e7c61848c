//! Fixtures shared by the benchmarks.

use aim_core::harness::systems::{simulate_dataset, Simulation};
use aim_core::harness::ExperimentConfig;

/// One replicate of a harness system, e.g. `fixture("lotka-volterra", 1)`.
pub fn fixture(system: &str, seed: u64) -> Simulation {
    let mut cfg = ExperimentConfig::default();
    cfg.set("system", system).expect("known system");
    simulate_dataset(&cfg.system(), seed).expect("simulation")
}
