//! Whole-loop cost of the coupled transmission + feeder simulation.

use criterion::{criterion_group, criterion_main, Criterion};
use gridtrip_core::{
    assemble_test_system, run_cosimulation, DisturbanceEvent, FixtureSet, Scenario, Side,
    SuiteKind,
};

fn bench_cosimulation(c: &mut Criterion) {
    let fixtures = FixtureSet::embedded().expect("embedded fixtures");
    let sys = assemble_test_system(1, 1, &fixtures).expect("single-feeder system");
    let scenario = Scenario {
        name: "bench_fault".into(),
        kind: SuiteKind::InSample,
        side: Side::Under,
        disturbance: DisturbanceEvent::fault(sys.coupling_bus, 8.0, 0.2, 0.3)
            .expect("valid fault"),
        horizon: 1.0,
        dt: 1e-3,
    };

    let mut group = c.benchmark_group("cosim");
    group.sample_size(10);
    group.bench_function("fault_1s_single_feeder", |b| {
        b.iter(|| run_cosimulation(&sys, &scenario).expect("simulation"))
    });
    group.finish();
}

criterion_group!(cosim, bench_cosimulation);
criterion_main!(cosim);
