use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dnumkit_bench::DualSystem;
use dnumkit_core::dual_solver::{self, DualSolverConfig, StepSize};
use dnumkit_core::newton::{self, NewtonConfig};
use dnumkit_core::scenarios::{gen_exp1, gen_exp2_line, gen_exp3_random};

fn full_solves(c: &mut Criterion) {
    let sc = gen_exp1(0);
    let mut g = c.benchmark_group("exp1");
    g.sample_size(10);
    g.bench_function("dual", |b| {
        let cfg = DualSolverConfig { gamma: StepSize::Fixed(0.01), th: 0.01, ..Default::default() };
        b.iter(|| dual_solver::solve(&sc, &cfg).unwrap())
    });
    g.bench_function("newton", |b| b.iter(|| newton::solve(&sc, &NewtonConfig::default()).unwrap()));
    g.finish();
}

fn dual_system(c: &mut Criterion) {
    let instances = [
        ("exp1", gen_exp1(0)),
        ("exp2", gen_exp2_line(20, 18, 10, 0).unwrap()),
        ("exp3", gen_exp3_random(10, 10, 8, 0).unwrap()),
    ];
    let mut g = c.benchmark_group("newton dual system");
    for (name, sc) in &instances {
        let sys = DualSystem::at_initial_point(sc, 1.0).unwrap();
        g.bench_with_input(BenchmarkId::new("splitting", name), &sys, |b, s| b.iter(|| s.splitting(1e-10)));
        g.bench_with_input(BenchmarkId::new("direct", name), &sys, |b, s| b.iter(|| s.direct()));
    }
    g.finish();
}

criterion_group!(benches, full_solves, dual_system);
criterion_main!(benches);
