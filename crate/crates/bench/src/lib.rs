//! Benchmark host crate; the benchmarks live in `benches/`.
