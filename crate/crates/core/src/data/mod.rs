//! Input records, period binning, region adjacency and survey metadata.

mod graph;
mod grid;
mod records;
mod registry;

pub use graph::{ingest_adjacency, parse_adjacency, RegionGraph};
pub use grid::{assign_periods, exposure_by_period, PeriodExposure, PeriodGrid};
pub use records::{
    ingest_children, read_children, renormalize_weights, write_children, ChildRecord,
    ColumnMap, IngestOutcome, Rejection,
};
pub use registry::{ingest_registry, parse_registry, SurveyEntry, SurveyKind, SurveyRegistry};
