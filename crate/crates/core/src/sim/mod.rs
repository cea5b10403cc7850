//! Simulation studies: clustered survey populations for checking the
//! design-based variances, prior draws and recovery studies for the
//! smoother, and the bundled synthetic dataset.

mod coverage;
mod population;
mod recovery;
mod smoothing;
pub mod synthetic;

pub use coverage::{
    coverage_grid, coverage_study, write_coverage_table, CoverageRow, Estimators, DEFAULT_CHILDREN, DEFAULT_CLUSTERS,
};
pub use population::{
    simulate_population, simulate_population_rep, ChildrenPerHousehold, SimDesign, WeightScheme, DEFAULT_HAZARDS,
};
pub use recovery::{
    fit_with, recovery_study, write_recovery_table, Inference, RecoveryRow, RecoveryScenario, RecoveryTable,
};
pub use smoothing::{draw_prior_field, simulate_estimates};
