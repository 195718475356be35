use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use thermoacoustic::adjoint;
use thermoacoustic::forward::{self, SolverConfig};
use thermoacoustic::grid::Grid2D;
use thermoacoustic::medium::{self, MediumFields};
use thermoacoustic::par::Exec;

fn config(m: &MediumFields, exec: Exec) -> SolverConfig {
    let mut cfg = SolverConfig::for_medium(2.0, 0.5, m).unwrap().with_exec(exec);
    // a short window keeps each sample to a few dozen steps
    cfg.n_steps = 40;
    cfg.tau = cfg.dt * cfg.n_steps as f64;
    cfg
}

fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_40_steps");
    group.sample_size(10);
    for n in [129usize, 257] {
        let g = Grid2D::unit_square(n).unwrap();
        let m = MediumFields::uniform(g, 1.0, 0.01, 0.1).unwrap();
        let p0 = medium::shepp_logan(&g, 1.0).unwrap();
        for (name, exec) in [("serial", Exec::Serial), ("parallel", Exec::Parallel)] {
            let cfg = config(&m, exec);
            group.bench_with_input(BenchmarkId::new(name, n), &cfg, |b, cfg| {
                b.iter(|| forward::measure(&p0, &m, cfg).unwrap())
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("adjoint_40_steps");
    group.sample_size(10);
    let g = Grid2D::unit_square(129).unwrap();
    let m = MediumFields::uniform(g, 1.0, 0.01, 0.1).unwrap();
    let p0 = medium::shepp_logan(&g, 1.0).unwrap();
    let tr = forward::measure(&p0, &m, &config(&m, Exec::Serial)).unwrap();
    for (name, exec) in [("serial", Exec::Serial), ("parallel", Exec::Parallel)] {
        let cfg = config(&m, exec);
        group.bench_function(name, |b| b.iter(|| adjoint::adjoint_solve(&tr, &m, &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
