//! First stage: design-based direct estimates of `logit(5q0)` per
//! (region, period, survey) cell.

mod bands;
mod cells;
mod delta;
mod hazards;
mod jackknife;

pub use bands::{expand_child_months, AgeBands, ChildMonth};
pub use cells::{
    direct_estimates, read_direct_table, write_direct_table, DirectEstimate, DirectOptions,
    DirectOutcome, ExcludedCell,
};
pub use delta::{delta_gradient, delta_var_logit_u5mr, u5mr_from_bands};
pub use hazards::{
    fit_cluster_table, fit_weighted_hazards, fit_weighted_hazards_newton, BandEstimates, ClusterStats,
    ClusterTable,
};
pub use jackknife::{jackknife_var_logit_u5mr, JackknifeResult};
