//! GRAPPA: shift-invariant k-space interpolation kernels calibrated on the
//! ACS block with Tikhonov-regularized least squares.
//!
//! For a missing line at offset `d` (1..R) below its upstream equidistant
//! line `y0`, the sources are the `ky_taps` equidistant lines
//! `y0 + R * j` for `j` in `-(ky_taps - 1) / 2 ..= ky_taps / 2`, each read
//! over `kx_taps` columns centred on the target column, across all coils.
//! The kernel for offset `d` maps that source vector to the target sample
//! of every coil.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, SVD};
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{apply_mask, SamplingMask};
use crate::tensor::{ifft2_coils, rss_combine, KSpaceVolume, MagnitudeImage};

/// Default relative Tikhonov weight.
pub const DEFAULT_LAMBDA_REL: f64 = 1e-4;

/// Singular values below `RANK_TOL * sigma_max * n` count as zero when
/// deciding whether an unregularized system is solvable.
const RANK_TOL: f64 = f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelGeometry {
    pub ky_taps: usize,
    pub kx_taps: usize,
    pub accel: usize,
}

impl KernelGeometry {
    pub fn new(ky_taps: usize, kx_taps: usize, accel: usize) -> Result<Self> {
        if ky_taps < 2 {
            return Err(Error::InvalidGeometry(format!(
                "ky_taps must be >= 2, got {ky_taps}"
            )));
        }
        if kx_taps == 0 || kx_taps.is_multiple_of(2) {
            return Err(Error::InvalidGeometry(format!(
                "kx_taps must be odd, got {kx_taps}"
            )));
        }
        if accel == 0 {
            return Err(Error::InvalidGeometry("accel must be >= 1".into()));
        }
        Ok(Self {
            ky_taps,
            kx_taps,
            accel,
        })
    }

    /// 4 source lines by 5 columns.
    pub fn default_for(accel: usize) -> Self {
        Self {
            ky_taps: 4,
            kx_taps: 5,
            accel: accel.max(1),
        }
    }

    /// Number of consecutive lines covered by one calibration window.
    pub fn span(&self) -> usize {
        (self.ky_taps - 1) * self.accel + 1
    }

    /// ACS floor used when building masks: one window plus `R` spare rows.
    /// Full sampling needs no calibration.
    pub fn min_acs(&self) -> usize {
        if self.accel == 1 {
            0
        } else {
            self.span() + self.accel
        }
    }

    pub fn source_len(&self, ncoils: usize) -> usize {
        ncoils * self.ky_taps * self.kx_taps
    }

    /// Source line multipliers `j` relative to the upstream line.
    fn taps(&self) -> RangeInclusive<isize> {
        let lo = -(((self.ky_taps - 1) / 2) as isize);
        lo..=(self.ky_taps / 2) as isize
    }
}

/// Calibrated weights, one `source_len x ncoils` matrix per missing offset.
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaKernel {
    geometry: KernelGeometry,
    ncoils: usize,
    lambda_rel: f64,
    weights: Vec<Array2<Complex64>>,
}

impl GrappaKernel {
    /// Assembles a kernel from stored weights, checking shapes.
    pub fn from_parts(
        geometry: KernelGeometry,
        ncoils: usize,
        lambda_rel: f64,
        weights: Vec<Array2<Complex64>>,
    ) -> Result<Self> {
        if !(lambda_rel >= 0.0 && lambda_rel.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {lambda_rel}"
            )));
        }
        if weights.len() != geometry.accel - 1 {
            return Err(Error::MissingOffsetWeights(weights.len() + 1));
        }
        let shape = (geometry.source_len(ncoils), ncoils);
        for w in &weights {
            if w.dim() != shape {
                return Err(Error::dims(shape, w.dim()));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("kernel weights".into()));
            }
        }
        Ok(Self {
            geometry,
            ncoils,
            lambda_rel,
            weights,
        })
    }

    pub fn geometry(&self) -> KernelGeometry {
        self.geometry
    }

    pub fn ncoils(&self) -> usize {
        self.ncoils
    }

    pub fn lambda_rel(&self) -> f64 {
        self.lambda_rel
    }

    /// Weights for missing offset `offset` in `1..R`.
    pub fn weights(&self, offset: usize) -> Option<&Array2<Complex64>> {
        offset.checked_sub(1).and_then(|i| self.weights.get(i))
    }

    pub fn all_weights(&self) -> &[Array2<Complex64>] {
        &self.weights
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Stacks all weight sets into `(R - 1) x source_len x ncoils`.
    pub fn to_array(&self) -> Array3<Complex64> {
        let (ns, nc) = (self.geometry.source_len(self.ncoils), self.ncoils);
        let mut out = Array3::zeros((self.weights.len(), ns, nc));
        for (i, w) in self.weights.iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(w);
        }
        out
    }
}

/// Gathers the source vector for target `(y0 + offset, x)` into `out`.
/// Rows or columns outside the grid contribute zeros.
fn gather_sources(
    vol: &Array3<Complex64>,
    geom: &KernelGeometry,
    y0: isize,
    x: usize,
    out: &mut [Complex64],
) {
    let (nc, ny, nx) = vol.dim();
    let half = (geom.kx_taps / 2) as isize;
    let zero = Complex64::new(0.0, 0.0);
    let mut k = 0;
    for c in 0..nc {
        for j in geom.taps() {
            let row = y0 + j * geom.accel as isize;
            for dx in -half..=half {
                let col = x as isize + dx;
                out[k] = if row >= 0 && (row as usize) < ny && col >= 0 && (col as usize) < nx {
                    vol[[c, row as usize, col as usize]]
                } else {
                    zero
                };
                k += 1;
            }
        }
    }
}

/// Fits one weight set per missing offset from the ACS block.
///
/// Each weight set solves `(A^H A + lambda I) W = A^H B`, where the rows of
/// `A` are source neighbourhoods from every fully interior window of the
/// ACS block and `B` holds the matching targets. `lambda` is `lambda_rel`
/// times the mean diagonal of `A^H A`. With `lambda_rel == 0` a rank
/// deficient system is reported as [`Error::SingularSystem`].
pub fn calibrate(
    vol: &KSpaceVolume,
    mask: &SamplingMask,
    geom: KernelGeometry,
    lambda_rel: f64,
) -> Result<GrappaKernel> {
    if !(lambda_rel >= 0.0 && lambda_rel.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda_rel}"
        )));
    }
    if vol.ny() != mask.ny() {
        return Err(Error::dims(
            format!("ny = {}", mask.ny()),
            format!("ny = {}", vol.ny()),
        ));
    }
    if geom.accel != mask.accel() {
        return Err(Error::InvalidGeometry(format!(
            "kernel accel {} differs from mask accel {}",
            geom.accel,
            mask.accel()
        )));
    }
    let ncoils = vol.ncoils();
    let accel = geom.accel;
    if accel == 1 {
        return GrappaKernel::from_parts(geom, ncoils, lambda_rel, Vec::new());
    }

    let span = geom.span();
    let acs = mask.acs_range();
    let acs_len = mask.acs_len();
    if acs_len < span {
        return Err(Error::AcsTooSmall { acs_len, span });
    }
    let nx = vol.nx();
    let half = geom.kx_taps / 2;
    if nx < geom.kx_taps {
        return Err(Error::InvalidGeometry(format!(
            "kx_taps {} wider than nx = {nx}",
            geom.kx_taps
        )));
    }

    // Window anchors: the upstream line of each window, so that the lowest
    // source line lands on the first ACS row.
    let lead = ((geom.ky_taps - 1) / 2) * accel;
    let anchors: Vec<usize> = (0..=acs_len - span)
        .map(|w| acs.start() + lead + w)
        .collect();
    let columns: Vec<usize> = (half..nx - half).collect();
    let rows = anchors.len() * columns.len();
    let nsrc = geom.source_len(ncoils);
    let nrhs = ncoils * (accel - 1);

    let data = vol.data();
    let mut a = DMatrix::<Complex64>::zeros(rows, nsrc);
    let mut b = DMatrix::<Complex64>::zeros(rows, nrhs);
    let mut src = vec![Complex64::new(0.0, 0.0); nsrc];
    let mut r = 0;
    for &y0 in &anchors {
        for &x in &columns {
            gather_sources(data, &geom, y0 as isize, x, &mut src);
            for (s, v) in src.iter().enumerate() {
                a[(r, s)] = *v;
            }
            for offset in 1..accel {
                for c in 0..ncoils {
                    b[(r, (offset - 1) * ncoils + c)] = data[[c, y0 + offset, x]];
                }
            }
            r += 1;
        }
    }

    let a_h = a.adjoint();
    let mut gram = &a_h * &a;
    let rhs = &a_h * &b;
    let mean_diag = (0..nsrc).map(|i| gram[(i, i)].re).sum::<f64>() / nsrc as f64;
    let lambda = lambda_rel * mean_diag;
    for i in 0..nsrc {
        gram[(i, i)] += Complex64::new(lambda, 0.0);
    }

    let solution = solve_normal_equations(gram, &rhs, lambda == 0.0)?;

    let weights = (1..accel)
        .map(|offset| {
            Array2::from_shape_fn((nsrc, ncoils), |(s, c)| {
                solution[(s, (offset - 1) * ncoils + c)]
            })
        })
        .collect();
    GrappaKernel::from_parts(geom, ncoils, lambda_rel, weights)
}

/// Cholesky on the shifted Gram matrix, falling back to an SVD when the
/// factorization fails or is numerically unreliable.
fn solve_normal_equations(
    gram: DMatrix<Complex64>,
    rhs: &DMatrix<Complex64>,
    unregularized: bool,
) -> Result<DMatrix<Complex64>> {
    let n = gram.nrows();
    if let Some(chol) = gram.clone().cholesky() {
        let diag: Vec<f64> = (0..n).map(|i| chol.l_dirty()[(i, i)].re).collect();
        let max = diag.iter().copied().fold(0.0_f64, f64::max);
        let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        // cond(G) is roughly (max/min)^2
        let reliable = min > 0.0 && (min / max).powi(2) > RANK_TOL * n as f64 * 1e3;
        if reliable || !unregularized {
            return Ok(chol.solve(rhs));
        }
    }

    let svd = SVD::new(gram, true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let tol = RANK_TOL * sigma_max * n as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if unregularized && rank < n {
        return Err(Error::SingularSystem {
            offset: 1,
            rank,
            cols: n,
        });
    }
    svd.solve(rhs, tol)
        .map_err(|e| Error::InvalidArgument(format!("SVD solve failed: {e}")))
}

/// Upstream equidistant line and offset for line `y`.
fn upstream(y: usize, mask: &SamplingMask) -> (isize, usize) {
    let accel = mask.accel();
    let offset = (y + accel - mask.offset()) % accel;
    (y as isize - offset as isize, offset)
}

/// Fills every line the mask skipped; acquired lines are copied unchanged.
pub fn interpolate(
    under: &KSpaceVolume,
    kernel: &GrappaKernel,
    mask: &SamplingMask,
) -> Result<KSpaceVolume> {
    if kernel.ncoils() != under.ncoils() {
        return Err(Error::dims(
            format!("{} coils", kernel.ncoils()),
            format!("{} coils", under.ncoils()),
        ));
    }
    if mask.ny() != under.ny() {
        return Err(Error::dims(
            format!("ny = {}", mask.ny()),
            format!("ny = {}", under.ny()),
        ));
    }
    let geom = kernel.geometry();
    if geom.accel != mask.accel() {
        return Err(Error::InvalidGeometry(format!(
            "kernel accel {} differs from mask accel {}",
            geom.accel,
            mask.accel()
        )));
    }
    let (ncoils, ny, nx) = under.dims();
    let missing: Vec<usize> = (0..ny).filter(|&y| !mask.is_acquired(y)).collect();
    for &y in &missing {
        let (_, offset) = upstream(y, mask);
        if kernel.weights(offset).is_none() {
            return Err(Error::MissingOffsetWeights(offset));
        }
    }

    let data = under.data();
    let nsrc = geom.source_len(ncoils);
    let filled: Vec<(usize, Array2<Complex64>)> = missing
        .par_iter()
        .map(|&y| {
            let (y0, offset) = upstream(y, mask);
            let w = kernel.weights(offset).expect("checked above");
            let mut src = vec![Complex64::new(0.0, 0.0); nsrc];
            let mut line = Array2::zeros((ncoils, nx));
            for x in 0..nx {
                gather_sources(data, &geom, y0, x, &mut src);
                for c in 0..ncoils {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (s, v) in src.iter().enumerate() {
                        acc += v * w[[s, c]];
                    }
                    line[[c, x]] = acc;
                }
            }
            (y, line)
        })
        .collect();

    let mut out = data.clone();
    for (y, line) in filled {
        out.index_axis_mut(Axis(1), y).assign(&line);
    }
    KSpaceVolume::new(out)
}

/// Calibrate, interpolate, inverse transform per coil and combine by RSS.
pub fn grappa_rss_recon(
    under: &KSpaceVolume,
    mask: &SamplingMask,
    geom: KernelGeometry,
    lambda_rel: f64,
) -> Result<(MagnitudeImage, GrappaKernel)> {
    let under = apply_mask(under, mask)?;
    let kernel = calibrate(&under, mask, geom, lambda_rel)?;
    let filled = interpolate(&under, &kernel, mask)?;
    Ok((rss_combine(&ifft2_coils(&filled)), kernel))
}

/// RSS of the inverse transform with skipped lines left at zero.
pub fn zero_filled_recon(vol: &KSpaceVolume, mask: &SamplingMask) -> Result<MagnitudeImage> {
    Ok(rss_combine(&ifft2_coils(&apply_mask(vol, mask)?)))
}
