use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dse_core::attacks::AttackSpec;
use dse_core::estimators::{EstimatorConfig, EstimatorKind};
use dse_core::harness::{monte_carlo, ScenarioConfig};
use dse_core::model::ieee14_surrogate;
use dse_core::Execution;

fn scenario(runs: usize) -> ScenarioConfig {
    ScenarioConfig {
        model_path: "bundled".into(),
        steps: 40,
        runs,
        seed: 7,
        attack: AttackSpec::Random { m: 14, magnitude: 10.0 },
        attack_start: 1,
        estimators: [EstimatorKind::LeastSquares, EstimatorKind::Pcna, EstimatorKind::Cckf]
            .into_iter()
            .map(EstimatorConfig::new)
            .collect(),
        output_path: None,
    }
}

fn bench_modes(c: &mut Criterion) {
    let model = ieee14_surrogate();
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for runs in [4, 16] {
        let cfg = scenario(runs);
        for (name, mode) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, runs), &cfg, |b, cfg| {
                b.iter(|| monte_carlo(cfg, &model, cfg.runs, mode).expect("scenario runs"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_modes);
criterion_main!(benches);
