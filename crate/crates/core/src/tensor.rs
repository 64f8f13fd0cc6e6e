//! Complex image and multi-coil volume types, centered unitary 2D Fourier
//! transforms and root-sum-of-squares coil combination.
//!
//! Axis convention: rows are phase-encode (ky), columns are frequency-encode
//! (kx). The centered transforms place DC at `(ny / 2, nx / 2)` (integer
//! division), which is also the centre of the ACS block.

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// One complex 2D plane (a coil image or a coil's k-space).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    data: Array2<Complex64>,
}

impl ComplexImage {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        let (ny, nx) = data.dim();
        if ny == 0 || nx == 0 {
            return Err(Error::InvalidGeometry(format!("empty image {ny}x{nx}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(
                "complex image contains NaN or Inf".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(ny: usize, nx: usize) -> Self {
        assert!(ny > 0 && nx > 0, "image dims must be positive");
        Self {
            data: Array2::zeros((ny, nx)),
        }
    }

    /// Builds an image from a real grid.
    pub fn from_real(real: &Array2<f64>) -> Result<Self> {
        Self::new(real.mapv(|v| Complex64::new(v, 0.0)))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<Complex64> {
        self.data
    }

    /// Euclidean (Frobenius) norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Multi-coil complex data, `ncoils x ny x nx`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceVolume {
    data: Array3<Complex64>,
}

impl KSpaceVolume {
    pub fn new(data: Array3<Complex64>) -> Result<Self> {
        let (nc, ny, nx) = data.dim();
        if nc == 0 || ny == 0 || nx == 0 {
            return Err(Error::InvalidGeometry(format!(
                "empty volume {nc}x{ny}x{nx}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("volume contains NaN or Inf".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(ncoils: usize, ny: usize, nx: usize) -> Self {
        assert!(
            ncoils > 0 && ny > 0 && nx > 0,
            "volume dims must be positive"
        );
        Self {
            data: Array3::zeros((ncoils, ny, nx)),
        }
    }

    /// Stacks equally sized coil planes.
    pub fn from_coils(coils: &[ComplexImage]) -> Result<Self> {
        let first = coils
            .first()
            .ok_or_else(|| Error::InvalidGeometry("no coil planes".into()))?;
        let (ny, nx) = first.dims();
        let mut data = Array3::zeros((coils.len(), ny, nx));
        for (c, coil) in coils.iter().enumerate() {
            if coil.dims() != (ny, nx) {
                return Err(Error::dims((ny, nx), coil.dims()));
            }
            data.index_axis_mut(Axis(0), c).assign(coil.data());
        }
        Ok(Self { data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn ncoils(&self) -> usize {
        self.data.dim().0
    }

    pub fn ny(&self) -> usize {
        self.data.dim().1
    }

    pub fn nx(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<Complex64> {
        self.data
    }

    pub fn coil(&self, c: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(0), c)
    }

    pub fn coil_image(&self, c: usize) -> ComplexImage {
        ComplexImage {
            data: self.coil(c).to_owned(),
        }
    }

    pub fn coil_images(&self) -> Vec<ComplexImage> {
        (0..self.ncoils()).map(|c| self.coil_image(c)).collect()
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        Self {
            data: self.data.mapv(|v| v * a),
        }
    }

    /// Sum of squared moduli over every sample.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Nonnegative real image with a declared dynamic range `L > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeImage {
    data: Array2<f64>,
    dynamic_range: f64,
}

impl MagnitudeImage {
    pub fn new(data: Array2<f64>, dynamic_range: f64) -> Result<Self> {
        let (ny, nx) = data.dim();
        if ny == 0 || nx == 0 {
            return Err(Error::InvalidGeometry(format!("empty image {ny}x{nx}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(
                "magnitude image contains NaN or Inf".into(),
            ));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(
                "magnitude image has negative values".into(),
            ));
        }
        if !(dynamic_range.is_finite() && dynamic_range > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dynamic range must be positive and finite, got {dynamic_range}"
            )));
        }
        Ok(Self {
            data,
            dynamic_range,
        })
    }

    /// Uses the image maximum as the dynamic range (1.0 for an all-zero image).
    pub fn with_max_range(data: Array2<f64>) -> Result<Self> {
        let max = data.iter().copied().fold(0.0_f64, f64::max);
        let range = if max > 0.0 { max } else { 1.0 };
        Self::new(data, range)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn dynamic_range(&self) -> f64 {
        self.dynamic_range
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0_f64, f64::max)
    }

    pub fn with_dynamic_range(&self, dynamic_range: f64) -> Result<Self> {
        Self::new(self.data.clone(), dynamic_range)
    }

    pub fn to_complex(&self) -> ComplexImage {
        ComplexImage {
            data: self.data.mapv(|v| Complex64::new(v, 0.0)),
        }
    }
}

/// Centered unitary forward 2D DFT.
pub fn fft2_centered(img: &ComplexImage) -> ComplexImage {
    ComplexImage {
        data: centered_transform(img.data.view(), FftDirection::Forward),
    }
}

/// Centered unitary inverse 2D DFT; exact inverse of [`fft2_centered`].
pub fn ifft2_centered(ksp: &ComplexImage) -> ComplexImage {
    ComplexImage {
        data: centered_transform(ksp.data.view(), FftDirection::Inverse),
    }
}

/// Forward transform applied to every coil plane.
pub fn fft2_coils(vol: &KSpaceVolume) -> KSpaceVolume {
    map_coils(vol, FftDirection::Forward)
}

/// Inverse transform applied to every coil plane (k-space to coil images).
pub fn ifft2_coils(vol: &KSpaceVolume) -> KSpaceVolume {
    map_coils(vol, FftDirection::Inverse)
}

fn map_coils(vol: &KSpaceVolume, direction: FftDirection) -> KSpaceVolume {
    let planes: Vec<Array2<Complex64>> = (0..vol.ncoils())
        .into_par_iter()
        .map(|c| centered_transform(vol.coil(c), direction))
        .collect();
    let mut data = Array3::zeros(vol.dims());
    for (c, plane) in planes.iter().enumerate() {
        data.index_axis_mut(Axis(0), c).assign(plane);
    }
    KSpaceVolume { data }
}

fn centered_transform(
    input: ArrayView2<'_, Complex64>,
    direction: FftDirection,
) -> Array2<Complex64> {
    let (ny, nx) = input.dim();
    let (hy, hx) = (ny / 2, nx / 2);

    // ifftshift on the way in
    let mut buf = Array2::from_shape_fn((ny, nx), |(y, x)| input[[(y + hy) % ny, (x + hx) % nx]]);

    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft(nx, direction);
    let col_fft = planner.plan_fft(ny, direction);

    for mut row in buf.rows_mut() {
        let mut line = row.to_vec();
        row_fft.process(&mut line);
        row.iter_mut().zip(line).for_each(|(dst, v)| *dst = v);
    }
    let mut line = vec![Complex64::new(0.0, 0.0); ny];
    for mut col in buf.columns_mut() {
        line.iter_mut()
            .zip(col.iter())
            .for_each(|(dst, v)| *dst = *v);
        col_fft.process(&mut line);
        col.iter_mut().zip(&line).for_each(|(dst, v)| *dst = *v);
    }

    let scale = 1.0 / ((ny * nx) as f64).sqrt();
    // fftshift on the way out: DC (index 0) lands on (ny/2, nx/2)
    Array2::from_shape_fn((ny, nx), |(y, x)| {
        buf[[(y + ny - hy) % ny, (x + nx - hx) % nx]] * scale
    })
}

/// Root-sum-of-squares over coils. The dynamic range is set to the image
/// maximum (1.0 when the result is identically zero).
pub fn rss_combine(vol: &KSpaceVolume) -> MagnitudeImage {
    let (_, ny, nx) = vol.dims();
    let mut acc = Array2::<f64>::zeros((ny, nx));
    for coil in vol.data.outer_iter() {
        Zip::from(&mut acc)
            .and(&coil)
            .for_each(|a, v| *a += v.norm_sqr());
    }
    acc.mapv_inplace(f64::sqrt);
    MagnitudeImage::with_max_range(acc).expect("rss of finite data is finite and nonnegative")
}
