use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use u5mr_core::direct::{direct_estimates, DirectOptions};
use u5mr_core::lgm::{assemble, fit_eb, EbOptions};
use u5mr_core::sim::synthetic::tanzania_like;
use u5mr_core::sparse::CholeskyAnalysis;
use u5mr_core::{AgeBands, ModelSpec};

/// ICAR precision on a `side x side` rook lattice plus the identity.
fn lattice_precision(side: usize) -> (usize, Vec<(usize, usize, f64)>) {
    let n = side * side;
    let mut entries = Vec::new();
    let mut degree = vec![0.0; n];
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            for (rr, cc) in [(r + 1, c), (r, c + 1)] {
                if rr < side && cc < side {
                    let j = rr * side + cc;
                    entries.push((j, i, -1.0));
                    degree[i] += 1.0;
                    degree[j] += 1.0;
                }
            }
        }
    }
    entries.extend(degree.iter().enumerate().map(|(i, d)| (i, i, d + 1.0)));
    (n, entries)
}

fn sparse_factor(c: &mut Criterion) {
    let (n, entries) = lattice_precision(40);
    let analysis = CholeskyAnalysis::new(n, entries.iter().map(|&(r, c, _)| (r, c)));
    let mut values = vec![0.0; analysis.nnz()];
    for &(r, c, v) in &entries {
        values[analysis.position(r, c).unwrap()] += v;
    }
    c.bench_function("sparse_factor_1600", |b| b.iter(|| analysis.factor(black_box(&values)).unwrap()));
    let factor = analysis.factor(&values).unwrap();
    c.bench_function("selected_inverse_1600", |b| b.iter(|| factor.selected_inverse()));
}

fn pipeline(c: &mut Criterion) {
    let d = tanzania_like(20140601).unwrap();
    let opts = DirectOptions::default();
    c.bench_function("direct_estimates", |b| {
        b.iter(|| direct_estimates(black_box(&d.records), &d.grid, &AgeBands::standard(), &opts).unwrap())
    });
    let data = direct_estimates(&d.records, &d.grid, &AgeBands::standard(), &opts).unwrap().estimates;
    let spec = ModelSpec::parse_label("VIb").unwrap();
    let model = assemble(&spec, &data, &d.grid, &d.graph, &d.registry).unwrap();
    let mut group = c.benchmark_group("eb");
    group.sample_size(10);
    group.bench_function("fit_eb_VIb", |b| b.iter(|| fit_eb(black_box(&model), &EbOptions::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, sparse_factor, pipeline);
criterion_main!(benches);
