use criterion::{criterion_group, criterion_main, Criterion, Throughput};

use ctrsim_bench::traffic_log;
use ctrsim_core::io::{decode_log, encode_log, read_log, write_log};
use ctrsim_core::traffic::detect_scripted;

fn round_trip(c: &mut Criterion) {
    let log = traffic_log(8, 4, 50.0, 600_000);
    let mut bytes = Vec::new();
    encode_log(&log, &mut bytes).unwrap();

    let mut group = c.benchmark_group("event_log");
    group.throughput(Throughput::Elements(log.len() as u64));
    group.bench_function("encode", |b| {
        b.iter(|| {
            let mut out = Vec::with_capacity(bytes.len());
            encode_log(&log, &mut out).unwrap();
            out
        })
    });
    group.bench_function("decode", |b| b.iter(|| decode_log(bytes.as_slice()).unwrap()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    group.bench_function("file_round_trip", |b| {
        b.iter(|| {
            write_log(&log, &path).unwrap();
            read_log(&path).unwrap()
        })
    });
    group.bench_function("detect_scripted", |b| {
        b.iter(|| detect_scripted(&log.view(), 5, 10).unwrap())
    });
    group.finish();
}

criterion_group!(benches, round_trip);
criterion_main!(benches);
