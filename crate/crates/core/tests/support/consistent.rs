//! Volumes for which a shift-invariant GRAPPA kernel exists exactly.
//!
//! Each coil's k-space is a sum of `d` 2D complex exponentials,
//! `v[c, y, x] = sum_i C[c, i] a_i^y b_i^x s_i`, with `d` equal to the
//! number of kernel sources. The source neighbourhood of any window is
//! then `O z` for an invertible `O` and the target is `C diag(a^offset) z`,
//! so the true weights are `(C diag(a^offset) O^-1)^T` at every window
//! position, not only on the sampling grid.

#![allow(dead_code)]

use grappa_core::grappa::{GrappaKernel, KernelGeometry};
use grappa_core::sampling::{make_mask_with_min_acs, SamplingMask};
use grappa_core::tensor::KSpaceVolume;
use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Consistent {
    pub volume: KSpaceVolume,
    pub mask: SamplingMask,
    pub truth: Vec<Array2<Complex64>>,
    pub geom: KernelGeometry,
}

pub fn rand_c(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    Complex64::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

fn unit(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::from_polar(
        1.0,
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

pub fn build(
    nc: usize,
    ny: usize,
    nx: usize,
    geom: KernelGeometry,
    acs_lines: usize,
    seed: u64,
) -> Consistent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = make_mask_with_min_acs(ny, geom.accel, 1.0 / ny as f64, seed, acs_lines).unwrap();
    let d = geom.source_len(nc);
    let coil_mix = DMatrix::from_fn(nc, d, |_, _| rand_c(&mut rng, 1.0));
    let a: Vec<Complex64> = (0..d).map(|_| unit(&mut rng)).collect();
    let b: Vec<Complex64> = (0..d).map(|_| unit(&mut rng)).collect();
    let s: Vec<Complex64> = (0..d).map(|_| unit(&mut rng)).collect();

    let data = Array3::from_shape_fn((nc, ny, nx), |(c, y, x)| {
        (0..d)
            .map(|i| coil_mix[(c, i)] * a[i].powu(y as u32) * b[i].powu(x as u32) * s[i])
            .sum()
    });

    // O[(c, j, dx), i] = C[c, i] a_i^(R j) b_i^dx for the window anchored at 0
    let lo = -(((geom.ky_taps - 1) / 2) as i32);
    let half = (geom.kx_taps / 2) as i32;
    let mut obs = DMatrix::<Complex64>::zeros(d, d);
    let mut row = 0;
    for c in 0..nc {
        for j in lo..lo + geom.ky_taps as i32 {
            for dx in -half..=half {
                for i in 0..d {
                    obs[(row, i)] =
                        coil_mix[(c, i)] * a[i].powi(j * geom.accel as i32) * b[i].powi(dx);
                }
                row += 1;
            }
        }
    }
    let obs_inv = obs
        .try_inverse()
        .expect("generic exponentials give an invertible map");
    let truth = (1..geom.accel)
        .map(|offset| {
            let shift = DMatrix::from_fn(d, d, |i, k| {
                if i == k {
                    a[i].powu(offset as u32)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            let w_t = &coil_mix * shift * &obs_inv; // nc x d
            Array2::from_shape_fn((d, nc), |(src, c)| w_t[(c, src)])
        })
        .collect();
    Consistent {
        volume: KSpaceVolume::new(data).unwrap(),
        mask,
        truth,
        geom,
    }
}

pub fn max_weight_error(kernel: &GrappaKernel, truth: &[Array2<Complex64>]) -> f64 {
    kernel
        .all_weights()
        .iter()
        .zip(truth)
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()))
        .fold(0.0, f64::max)
}
