//! Regenerates the bundled synthetic dataset: `cargo run --example synthetic_dataset -- data/synthetic`.

use std::path::PathBuf;

use u5mr_core::sim::synthetic::{tanzania_like, write_dataset, SYNTHETIC_SEED};

fn main() -> u5mr_core::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/synthetic".into()));
    let dataset = tanzania_like(SYNTHETIC_SEED)?;
    write_dataset(&dataset, &dir)?;
    println!("wrote {} children to {}", dataset.records.len(), dir.display());
    Ok(())
}
