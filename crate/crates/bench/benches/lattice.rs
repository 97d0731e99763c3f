use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hardmt::{best_fixed, count_legal, forward_pass, global_forward_pass, Aggregator, TrackingForecaster};
use hardmt_bench::{history, instance, rounds, tracker, FAMILIES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_pass");
    for family in FAMILIES {
        for tasks in [16, 64, 256] {
            let a = instance(family, tasks, 8).unwrap();
            let table = history(&a, 10, 1);
            let relaxations = forward_pass(&a, &table, 0.5).unwrap().relaxations();
            group.throughput(Throughput::Elements(relaxations));
            group.bench_with_input(BenchmarkId::new(family.to_string(), tasks), &a, |b, a| {
                b.iter(|| forward_pass(a, black_box(&table), 0.5).unwrap().log_normalizer().unwrap())
            });
        }
    }
    group.finish();
}

fn sample(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample");
    for family in FAMILIES {
        let a = instance(family, 64, 8).unwrap();
        let lattice = forward_pass(&a, &history(&a, 10, 2), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        group.bench_function(family.to_string(), |b| b.iter(|| lattice.sample(&mut rng).unwrap()));
    }
    group.finish();
}

fn comparators(c: &mut Criterion) {
    let a = instance(FAMILIES[2], 64, 8).unwrap();
    let table = history(&a, 10, 3);
    c.bench_function("best_fixed/constancy", |b| b.iter(|| best_fixed(&a, black_box(&table)).unwrap()));
    c.bench_function("count_legal/constancy", |b| b.iter(|| count_legal(black_box(&a))));
}

fn tracking(c: &mut Criterion) {
    let a = instance(FAMILIES[0], 4, 4).unwrap();
    let history = rounds(4, 4, 50, 4);
    c.bench_function("tracking/round", |b| {
        b.iter(|| {
            let mut f = TrackingForecaster::new(&a, 100, 2, 0.3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for r in &history {
                f.sample(&mut rng).unwrap();
                f.observe(r).unwrap();
            }
        })
    });
}

fn global(c: &mut Criterion) {
    let mut group = c.benchmark_group("global_forward_pass");
    for actions in [3, 6, 9] {
        let a = instance(FAMILIES[1], 16, actions).unwrap();
        let t = tracker(Aggregator::Max, actions, 20, 5);
        group.bench_with_input(BenchmarkId::from_parameter(actions), &a, |b, a| {
            b.iter(|| global_forward_pass(a, black_box(&t), 0.5).unwrap().log_normalizer().unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, sample, comparators, tracking, global);
criterion_main!(benches);
