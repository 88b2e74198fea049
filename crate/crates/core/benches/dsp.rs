//! Throughput of the standardization and segmentation kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use speechprep::audio::{resample, standardize_buffer, AudioBuffer, LoudnessSpec};
use speechprep::filter::quartiles;
use speechprep::segment::{segment_source, SpeakerTurn, StitchPolicy, VadChunk};

fn tone(rate: u32, seconds: f64) -> AudioBuffer {
    let n = (rate as f64 * seconds) as usize;
    let samples = (0..n)
        .map(|i| (0.2 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / rate as f64).sin()) as f32)
        .collect();
    AudioBuffer::mono(samples, rate)
}

fn resampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("resample_to_24k");
    for rate in [16_000u32, 44_100, 48_000] {
        let buf = tone(rate, 10.0);
        group.throughput(Throughput::Elements(buf.samples.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(rate), &buf, |b, buf| {
            b.iter(|| resample(black_box(buf.clone()), 24_000).expect("valid rate"))
        });
    }
    group.finish();
}

fn standardization(c: &mut Criterion) {
    let buf = tone(44_100, 10.0);
    let spec = LoudnessSpec::default();
    c.bench_function("standardize_10s_44k", |b| {
        b.iter(|| standardize_buffer(black_box(buf.clone()), &spec).expect("non-empty"))
    });
}

fn segmentation(c: &mut Criterion) {
    let turns: Vec<SpeakerTurn> = (0..200)
        .map(|i| SpeakerTurn::new(format!("S{}", i % 3), i as f64 * 18.0, i as f64 * 18.0 + 19.0))
        .collect();
    let chunks: Vec<VadChunk> = (0..2_000)
        .map(|i| VadChunk::new(i as f64 * 1.8, i as f64 * 1.8 + 1.2 + (i % 5) as f64 * 0.1))
        .collect();
    let policy = StitchPolicy::default();
    c.bench_function("segment_source_1h", |b| {
        b.iter(|| segment_source("src", black_box(&turns), black_box(&chunks), &policy))
    });
}

fn quartile_fences(c: &mut Criterion) {
    let values: Vec<f64> = (0..1_000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    c.bench_function("quartiles_1000", |b| b.iter(|| quartiles(black_box(&values)).expect("non-empty")));
}

criterion_group!(benches, resampling, standardization, segmentation, quartile_fences);
criterion_main!(benches);
