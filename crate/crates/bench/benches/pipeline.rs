use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grappa_core::grappa::{
    calibrate, grappa_rss_recon, interpolate, KernelGeometry, DEFAULT_LAMBDA_REL,
};
use grappa_core::metrics::ssim;
use grappa_core::phantom::{simulate_phantom, Acquisition, PhantomParams};
use grappa_core::sampling::{apply_mask, make_mask};
use grappa_core::tensor::{fft2_centered, ifft2_coils};

fn phantom(n: usize, ncoils: usize) -> Acquisition {
    simulate_phantom(PhantomParams {
        ny: n,
        nx: n,
        ncoils,
        seed: 1,
        noise_sigma: 0.002,
    })
    .unwrap()
}

fn fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft");
    for n in [64, 128, 256] {
        let acq = phantom(n, 8);
        let plane = acq.kspace.coil_image(0);
        group.bench_with_input(BenchmarkId::new("fft2_centered", n), &plane, |b, p| {
            b.iter(|| fft2_centered(black_box(p)))
        });
        group.bench_with_input(
            BenchmarkId::new("ifft2_coils_x8", n),
            &acq.kspace,
            |b, v| b.iter(|| ifft2_coils(black_box(v))),
        );
    }
    group.finish();
}

fn grappa(c: &mut Criterion) {
    let mut group = c.benchmark_group("grappa");
    group.sample_size(20);
    for accel in [2, 4] {
        let acq = phantom(128, 8);
        let mask = make_mask(128, accel, 0.08, 1).unwrap();
        let under = apply_mask(&acq.kspace, &mask).unwrap();
        let geom = KernelGeometry::default_for(accel);
        let kernel = calibrate(&under, &mask, geom, DEFAULT_LAMBDA_REL).unwrap();
        group.bench_function(BenchmarkId::new("calibrate", accel), |b| {
            b.iter(|| calibrate(black_box(&under), &mask, geom, DEFAULT_LAMBDA_REL).unwrap())
        });
        group.bench_function(BenchmarkId::new("interpolate", accel), |b| {
            b.iter(|| interpolate(black_box(&under), &kernel, &mask).unwrap())
        });
        group.bench_function(BenchmarkId::new("recon", accel), |b| {
            b.iter(|| grappa_rss_recon(black_box(&under), &mask, geom, DEFAULT_LAMBDA_REL).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let acq = phantom(256, 4);
    let mask = make_mask(256, 4, 0.08, 1).unwrap();
    let (recon, _) = grappa_rss_recon(
        &acq.kspace,
        &mask,
        KernelGeometry::default_for(4),
        DEFAULT_LAMBDA_REL,
    )
    .unwrap();
    let l = acq.truth.dynamic_range();
    c.bench_function("ssim_256", |b| {
        b.iter(|| ssim(black_box(&recon), &acq.truth, l).unwrap())
    });
}

criterion_group!(benches, fft, grappa, metrics);
criterion_main!(benches);
