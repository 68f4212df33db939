use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use fpraker::cli::selftest::oracle_suite;
use fpraker::exec;
use fpraker::tile::{map_workload, tile_simulate, LayerTensors, SerialSide, TileConfig};
use fpraker::trace::{synth_trace, LayerSpec, Phase, SynthSpec};

fn oracle(c: &mut Criterion) {
    let groups = 20_000;
    let mut g = c.benchmark_group("oracle_suite");
    g.throughput(Throughput::Elements(groups));
    g.bench_function(BenchmarkId::new("parallel", groups), |b| b.iter(|| oracle_suite(groups, 1)));
    g.bench_function(BenchmarkId::new("sequential", groups), |b| {
        b.iter(|| exec::sequential(|| oracle_suite(groups, 1)))
    });
    g.finish();
}

fn tile(c: &mut Criterion) {
    let spec = SynthSpec {
        layers: vec![LayerSpec { name: "conv".into(), n: 1, c: 32, h: 12, w: 12, k: 32, r: 3, s: 3 }],
        ..Default::default()
    };
    let trace = synth_trace(&spec).unwrap();
    let cfg = TileConfig::default();
    let mut g = c.benchmark_group("tile_simulate");
    g.sample_size(10);
    for phase in Phase::ALL {
        let w = map_workload(LayerTensors::from_trace(&trace, "conv"), phase, SerialSide::A).unwrap();
        g.throughput(Throughput::Elements((w.groups() * w.rows.len() * w.cols.len()) as u64));
        g.bench_function(BenchmarkId::new("parallel", phase.name()), |b| b.iter(|| tile_simulate(&w, &cfg).unwrap()));
        g.bench_function(BenchmarkId::new("sequential", phase.name()), |b| {
            b.iter(|| exec::sequential(|| tile_simulate(&w, &cfg).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, oracle, tile);
criterion_main!(benches);
