//! Compares the data-parallel lanes against the sequential fallback. Run once
//! with default features (rayon) and once with --no-default-features; criterion
//! keeps per-feature baselines apart if you pass --save-baseline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pgbk_core::balanced::{preset_fano, BalancedCode};
use pgbk_core::base::{self, BaseParams};
use pgbk_core::meter::SymbolSource;
use pgbk_core::piggyback::{InjectionTable, Payload, PiggybackedCode};
use pgbk_core::Width;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lane_label() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn bench_mds_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("mds-sweep");
    group.sample_size(10);
    for (k, r) in [(4, 2), (4, 3)] {
        let code = base::build_unverified(BaseParams {
            k,
            r,
            width: Width::W16,
            seed: 9,
        })
        .unwrap();
        group.bench_with_input(
            BenchmarkId::new(lane_label(), format!("k{k}r{r}")),
            &code,
            |bench, code| bench.iter(|| assert!(code.verify_mds().all_decodable())),
        );
    }
    group.finish();
}

fn bench_encode(c: &mut Criterion) {
    let mut group = c.benchmark_group("encode");
    group.sample_size(20);
    let code = PiggybackedCode::new(
        base::build_unverified(BaseParams {
            k: 4,
            r: 3,
            width: Width::W16,
            seed: 9,
        })
        .unwrap(),
        InjectionTable::main_diagonal(3, 3).unwrap(),
    )
    .unwrap();
    let ap = code.base().alpha_prime();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sources: Vec<Vec<Vec<u16>>> = (0..3)
        .map(|_| {
            (0..4)
                .map(|_| (0..ap).map(|_| rng.gen_range(0..=0xFFFF)).collect())
                .collect()
        })
        .collect();
    group.bench_function(BenchmarkId::new(lane_label(), "k4r3s3"), |bench| {
        bench.iter(|| code.encode(&sources).unwrap())
    });
    group.finish();
}

fn bench_balanced_repair(c: &mut Criterion) {
    let mut group = c.benchmark_group("balanced-repair");
    group.sample_size(10);
    let code = BalancedCode::build_unverified(&preset_fano(), 4, Width::W16, 700).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ap = code.instances()[0].base().alpha_prime();
    let sources: Vec<Vec<Vec<Vec<u16>>>> = (0..code.b())
        .map(|_| {
            (0..code.cells_per_instance())
                .map(|_| {
                    (0..code.k())
                        .map(|_| (0..ap).map(|_| rng.gen_range(0..=0xFFFF)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let nodes: Vec<Payload> = code.encode(&sources).unwrap();
    let stored: &[Payload] = &nodes;
    assert_eq!(stored.node_count(), 7);
    group.bench_function(BenchmarkId::new(lane_label(), "fano-k4"), |bench| {
        bench.iter(|| code.repair(stored, 0).unwrap())
    });
    group.finish();
}

criterion_group!(lanes, bench_mds_sweep, bench_encode, bench_balanced_repair);
criterion_main!(lanes);
