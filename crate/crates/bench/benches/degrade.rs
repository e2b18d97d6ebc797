use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fiqa_core::degrade::{
    degrade_image, exposure, gaussian_blur, gaussian_noise, jpeg_round_trip, low_resolution, sample_mix,
    DegradationRanges,
};
use image::{Rgb, RgbImage};

fn face() -> RgbImage {
    RgbImage::from_fn(224, 224, |x, y| {
        let dx = x as f64 - 112.0;
        let dy = y as f64 - 112.0;
        let v = (200.0 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 255.0) as u8;
        Rgb([v, v.wrapping_add((x % 17) as u8), v.wrapping_sub((y % 13) as u8)])
    })
}

fn bench_ops(c: &mut Criterion) {
    let img = face();
    let mut group = c.benchmark_group("ops");
    group.bench_function("blur_hard", |b| b.iter(|| gaussian_blur(black_box(&img), 4.0).unwrap()));
    group.bench_function("blur_mild", |b| b.iter(|| gaussian_blur(black_box(&img), 1.0).unwrap()));
    group.bench_function("noise", |b| b.iter(|| gaussian_noise(black_box(&img), 0.1, 3).unwrap()));
    group.bench_function("low_res", |b| b.iter(|| low_resolution(black_box(&img), 0.15).unwrap()));
    group.bench_function("jpeg", |b| b.iter(|| jpeg_round_trip(black_box(&img), 10).unwrap()));
    group.bench_function("exposure", |b| b.iter(|| exposure(black_box(&img), -1.2).unwrap()));
    group.finish();
}

fn bench_mix(c: &mut Criterion) {
    let img = face();
    let ranges = DegradationRanges::default();
    c.bench_function("sample_mix", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed = seed.wrapping_add(1);
            sample_mix(black_box(seed), &ranges)
        })
    });
    c.bench_function("degrade_image", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed = seed.wrapping_add(1);
            let specs = sample_mix(seed, &ranges);
            degrade_image(black_box(&img), &specs).unwrap()
        })
    });
}

criterion_group!(degrade, bench_ops, bench_mix);
criterion_main!(degrade);
