#![allow(dead_code)]

use std::path::PathBuf;

use u5mr_core::data::{ingest_adjacency, ingest_children, ingest_registry, ColumnMap};
use u5mr_core::direct::{direct_estimates, AgeBands, DirectEstimate, DirectOptions};
use u5mr_core::{ChildRecord, PeriodGrid, RegionGraph, SurveyRegistry};

pub fn synthetic_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

pub struct Bundled {
    pub records: Vec<ChildRecord>,
    pub graph: RegionGraph,
    pub grid: PeriodGrid,
    pub registry: SurveyRegistry,
    pub direct: Vec<DirectEstimate>,
}

/// The bundled synthetic dataset, read from disk, with its direct estimates.
pub fn bundled() -> Bundled {
    let dir = synthetic_dir();
    let graph = ingest_adjacency(dir.join("adjacency.txt"), None).expect("adjacency");
    let registry = ingest_registry(dir.join("registry.csv"), &graph).expect("registry");
    let outcome = ingest_children(dir.join("children.csv"), &ColumnMap::default(), &graph, &registry).expect("children");
    assert!(outcome.rejected.is_empty());
    let grid = PeriodGrid::uniform(1980, 5, 6, 1).unwrap();
    let direct = direct_estimates(&outcome.records, &grid, &AgeBands::standard(), &DirectOptions::default())
        .expect("direct estimates")
        .estimates;
    Bundled { records: outcome.records, graph, grid, registry, direct }
}
