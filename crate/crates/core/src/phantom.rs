//! Synthetic multi-coil acquisitions: a Shepp-Logan object, Gaussian-lobe
//! coil sensitivities with linear phase, and optional complex white noise.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    fft2_centered, ifft2_coils, rss_combine, ComplexImage, KSpaceVolume, MagnitudeImage,
};

/// Modified Shepp-Logan ellipses: intensity, semi-axes (a, b), centre
/// (x0, y0) and rotation in degrees, on the unit square [-1, 1]^2.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Shepp-Logan phantom sampled at pixel centres, scaled so its maximum is 1.
pub fn shepp_logan(ny: usize, nx: usize) -> Result<MagnitudeImage> {
    if ny < 8 || nx < 8 {
        return Err(Error::TooSmall(format!(
            "phantom needs at least 8x8, got {ny}x{nx}"
        )));
    }
    let mut img = Array2::from_shape_fn((ny, nx), |(row, col)| {
        let x = 2.0 * (col as f64 + 0.5) / nx as f64 - 1.0;
        let y = 1.0 - 2.0 * (row as f64 + 0.5) / ny as f64;
        SHEPP_LOGAN
            .iter()
            .filter(|&&[_, a, b, x0, y0, deg]| {
                let (s, c) = deg.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            })
            .map(|e| e[0])
            .sum::<f64>()
            .max(0.0)
    });
    let max = img.iter().copied().fold(0.0_f64, f64::max);
    img.mapv_inplace(|v| v / max);
    MagnitudeImage::new(img, 1.0)
}

/// Complex receive sensitivity of each coil, `ncoils x ny x nx`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    maps: Array3<Complex64>,
}

impl CoilSensitivities {
    pub fn new(maps: Array3<Complex64>) -> Result<Self> {
        let (nc, ny, nx) = maps.dim();
        if nc == 0 || ny == 0 || nx == 0 {
            return Err(Error::InvalidGeometry(format!(
                "empty sensitivity maps {nc}x{ny}x{nx}"
            )));
        }
        if maps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("sensitivity maps".into()));
        }
        Ok(Self { maps })
    }

    pub fn maps(&self) -> &Array3<Complex64> {
        &self.maps
    }

    pub fn ncoils(&self) -> usize {
        self.maps.dim().0
    }

    pub fn dims(&self) -> (usize, usize) {
        let (_, ny, nx) = self.maps.dim();
        (ny, nx)
    }

    /// Pointwise `sqrt(sum_c |s_c|^2)`.
    pub fn rss(&self) -> Array2<f64> {
        let (_, ny, nx) = self.maps.dim();
        let mut acc = Array2::<f64>::zeros((ny, nx));
        for map in self.maps.outer_iter() {
            Zip::from(&mut acc)
                .and(&map)
                .for_each(|a, s| *a += s.norm_sqr());
        }
        acc.mapv(f64::sqrt)
    }
}

/// Gaussian-lobe coils spread around the perimeter, with random linear
/// phase. Deterministic in `seed`.
pub fn make_sensitivities(
    ncoils: usize,
    ny: usize,
    nx: usize,
    seed: u64,
) -> Result<CoilSensitivities> {
    make_sensitivities_with(ncoils, ny, nx, seed, true)
}

/// As [`make_sensitivities`]; `with_phase = false` yields real, positive
/// maps (the lobe placement still depends on `seed`).
pub fn make_sensitivities_with(
    ncoils: usize,
    ny: usize,
    nx: usize,
    seed: u64,
    with_phase: bool,
) -> Result<CoilSensitivities> {
    if ncoils == 0 || ny == 0 || nx == 0 {
        return Err(Error::InvalidGeometry(format!(
            "need coils and pixels, got {ncoils}x{ny}x{nx}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 0.6 * ny.max(nx) as f64;
    let (my, mx) = ((ny as f64 - 1.0) / 2.0, (nx as f64 - 1.0) / 2.0);
    let mut maps = Array3::zeros((ncoils, ny, nx));
    for (c, mut map) in maps.axis_iter_mut(Axis(0)).enumerate() {
        let jitter: f64 = rng.random_range(-0.25..0.25) * 2.0 * PI / ncoils as f64;
        let phase0: f64 = rng.random_range(0.0..2.0 * PI);
        let slope_y: f64 = rng.random_range(-0.5..0.5);
        let slope_x: f64 = rng.random_range(-0.5..0.5);
        let theta = 2.0 * PI * c as f64 / ncoils as f64 + jitter;
        // lobe centres sit on an ellipse 10% beyond the half field of view
        let cy = my + 0.55 * ny as f64 * theta.sin();
        let cx = mx + 0.55 * nx as f64 * theta.cos();
        for ((y, x), v) in map.indexed_iter_mut() {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let mag = (-d2 / (2.0 * width * width)).exp();
            let phase = if with_phase {
                phase0
                    + 2.0
                        * PI
                        * (slope_y * (y as f64 - my) / ny as f64
                            + slope_x * (x as f64 - mx) / nx as f64)
            } else {
                0.0
            };
            *v = Complex64::from_polar(mag, phase);
        }
    }
    CoilSensitivities::new(maps)
}

/// Fully sampled multi-coil k-space of `img` seen through `sens`, plus
/// complex Gaussian noise of standard deviation `noise_sigma` per real and
/// imaginary component.
pub fn simulate_acquisition(
    img: &MagnitudeImage,
    sens: &CoilSensitivities,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceVolume> {
    if img.dims() != sens.dims() {
        return Err(Error::dims(sens.dims(), img.dims()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise_sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let coils: Vec<ComplexImage> = sens
        .maps()
        .outer_iter()
        .map(|map| {
            let weighted = Zip::from(img.data()).and(&map).map_collect(|&m, &s| s * m);
            fft2_centered(&ComplexImage::new(weighted).expect("finite inputs"))
        })
        .collect();
    let mut data = KSpaceVolume::from_coils(&coils)?.into_inner();
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in data.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(re, im) * noise_sigma;
        }
    }
    KSpaceVolume::new(data)
}

/// Parameters of a complete synthetic acquisition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub ny: usize,
    pub nx: usize,
    pub ncoils: usize,
    pub seed: u64,
    pub noise_sigma: f64,
}

/// A synthetic acquisition and its reference image.
#[derive(Clone, Debug)]
pub struct Acquisition {
    pub params: PhantomParams,
    pub kspace: KSpaceVolume,
    /// RSS of the fully sampled coil images, with the dynamic range set to
    /// its maximum.
    pub truth: MagnitudeImage,
}

/// Shepp-Logan object, sensitivities seeded by `seed`, noise seeded by a
/// value derived from `seed`.
pub fn simulate_phantom(params: PhantomParams) -> Result<Acquisition> {
    let PhantomParams {
        ny,
        nx,
        ncoils,
        seed,
        noise_sigma,
    } = params;
    let object = shepp_logan(ny, nx)?;
    let sens = make_sensitivities(ncoils, ny, nx, seed)?;
    let noise_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let kspace = simulate_acquisition(&object, &sens, noise_sigma, noise_seed)?;
    let truth = rss_combine(&ifft2_coils(&kspace));
    Ok(Acquisition {
        params,
        kspace,
        truth,
    })
}
