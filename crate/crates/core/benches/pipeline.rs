//! Sequential vs parallel execution of the two data-parallel loops:
//! per-record feature extraction and per-client statistics updates.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedrc::federated::{client_stats, incremental_update, ClientStats};
use fedrc::features::{record_sequence, Stft};
use fedrc::par::{map_slice, try_for_each_mut, try_map_range, Execution};
use fedrc::signal::{DatasetSpec, SignalParams};
use fedrc::{init_reservoir, run_sequence, ReservoirConfig};
use nalgebra::DMatrix;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn feature_extraction(c: &mut Criterion) {
    let spec = DatasetSpec::new(SignalParams::default(), 2).unwrap();
    let records: Vec<_> = (0..spec.len()).map(|i| spec.record(i).unwrap().samples).collect();
    let weights = init_reservoir(&ReservoirConfig {
        input_scaling: fedrc::experiment::DEFAULT_INPUT_SCALING,
        ..ReservoirConfig::default()
    })
    .unwrap();
    let stft = Stft::default();

    let mut group = c.benchmark_group("feature_extraction");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let out = try_map_range(exec, records.len(), |i| {
                    let seq = record_sequence(&stft, &records[i])?;
                    run_sequence(&weights, &seq.steps)
                })
                .unwrap();
                black_box(out)
            })
        });
    }
    group.finish();
}

fn client_updates(c: &mut Criterion) {
    let batches: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..10)
        .map(|u| {
            let phi = DMatrix::from_fn(501, 48, |r, k| ((r * 31 + k * 7 + u) % 97) as f64 / 97.0);
            let y = DMatrix::from_fn(6, 48, |r, k| f64::from(u8::from((k + u) % 6 == r)));
            (phi, y)
        })
        .collect();
    let empty: Vec<ClientStats> = (0..10).map(|u| ClientStats::empty(u, 6, 501)).collect();

    let mut group = c.benchmark_group("client_updates");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let mut stats = empty.clone();
                try_for_each_mut(exec, &mut stats, |s| {
                    let (phi, y) = &batches[s.client_id as usize];
                    *s = incremental_update(s, phi, y)?;
                    Ok(())
                })
                .unwrap();
                black_box(stats)
            })
        });
        group.bench_with_input(BenchmarkId::new("one_shot", name), &exec, |b, &exec| {
            b.iter(|| {
                let stats = map_slice(exec, &batches, |(phi, y)| client_stats(phi, y, 0).unwrap());
                black_box(stats)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, feature_extraction, client_updates);
criterion_main!(benches);
