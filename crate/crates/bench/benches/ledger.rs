use ballotchain_bench::rng;
use ballotchain_core::ledger::verify_chain;
use ballotchain_core::testkit;
use ballotchain_core::ChainState;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

fn apply(c: &mut Criterion) {
    let setup = testkit::toy_election(4);
    let config = testkit::config(&setup);
    let chain = testkit::build_chain(&setup, 8, 25, &mut rng(4));

    let mut group = c.benchmark_group("ledger");
    group.throughput(Throughput::Elements(8 * 25));
    group.bench_function("apply_8x25", |b| {
        b.iter_batched(
            || ChainState::new(config.clone(), setup.genesis.clone()).unwrap(),
            |mut state| {
                for block in &chain[1..] {
                    state.apply_block(block.clone()).unwrap();
                }
                state
            },
            BatchSize::SmallInput,
        )
    });
    group.bench_function("audit_8x25", |b| {
        b.iter(|| assert!(verify_chain(&chain, &config).is_clean()))
    });
    group.finish();
}

criterion_group!(benches, apply);
criterion_main!(benches);
