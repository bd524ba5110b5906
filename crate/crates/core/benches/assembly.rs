//! Parallel vs sequential: system assembly, LU factorisation, block solves
//! and the decoupled transfer matrix on the two-scatterer desk scene.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mimo_scatter::decouple::{decoupled_transfer, DecoupleContext, KernelPart};
use mimo_scatter::linalg::CMatrix;
use mimo_scatter::operators::Group;
use mimo_scatter::par;
use mimo_scatter::scatter::Discretization;
use mimo_scatter::scene::presets;
use mimo_scatter::C64;
use std::hint::black_box;

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn bench(c: &mut Criterion) {
    let scene = presets::desk();
    let f = scene.frequency().unwrap();
    let disc = Discretization::new(&scene);
    let matrix = disc.system(Group::Total, &f).matrix();
    let n = matrix.rows();
    let rhs = CMatrix::from_fn(n, 64, |i, j| C64::new(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i + j) % 5) as f64));
    let lu = matrix.clone().lu().unwrap();
    let ctx = DecoupleContext::new(disc.clone(), f).unwrap();

    let mut g = c.benchmark_group("desk");
    g.sample_size(10);
    for (label, sequential) in MODES {
        par::force_sequential(sequential);
        g.bench_function(format!("assemble/{label}"), |b| b.iter(|| black_box(disc.system(Group::Total, &f).matrix())));
        g.bench_function(format!("lu/{label}"), |b| b.iter_batched(|| matrix.clone(), |m| black_box(m.lu().unwrap()), BatchSize::LargeInput));
        g.bench_function(format!("solve_block/{label}"), |b| b.iter(|| black_box(lu.solve_block(&rhs))));
        g.bench_function(format!("decoupled_transfer/{label}"), |b| b.iter(|| black_box(decoupled_transfer(&ctx, [12, 24], KernelPart::Scattered).unwrap())));
    }
    par::force_sequential(false);
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
