//! Equidistant 1D undersampling along the phase-encode axis with a random
//! first line and a fully sampled central ACS block.
//!
//! The offset of the first line is drawn from a ChaCha8 stream seeded with
//! the 64-bit mask seed (`ChaCha8Rng::seed_from_u64`), using rejection
//! sampling so every offset in `[0, R)` is equally likely. The stream is
//! platform independent, so a seed always yields the same mask.

use std::ops::RangeInclusive;

use ndarray::Axis;
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grappa::KernelGeometry;
use crate::tensor::KSpaceVolume;

/// The serializable description of a mask. Everything else is derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub ny: usize,
    pub accel: usize,
    pub acs_fraction: f64,
    pub offset: usize,
    pub seed: u64,
    pub min_acs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    params: MaskParams,
    acs_start: usize,
    acs_len: usize,
    acquired: Vec<bool>,
}

/// Smallest ACS block for which the default kernel geometry can calibrate
/// at acceleration `accel` with at least one spare window row.
pub fn default_min_acs(accel: usize) -> usize {
    KernelGeometry::default_for(accel).min_acs()
}

/// Builds the mask for `(ny, accel, acs_fraction, seed)`, flooring the ACS
/// block at [`default_min_acs`].
pub fn make_mask(ny: usize, accel: usize, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    make_mask_with_min_acs(ny, accel, acs_fraction, seed, default_min_acs(accel))
}

/// Same as [`make_mask`] with an explicit ACS floor.
pub fn make_mask_with_min_acs(
    ny: usize,
    accel: usize,
    acs_fraction: f64,
    seed: u64,
    min_acs: usize,
) -> Result<SamplingMask> {
    if accel == 0 || accel > ny {
        return Err(Error::InvalidGeometry(format!(
            "accel {accel} must lie in [1, ny = {ny}]"
        )));
    }
    let offset = draw_offset(seed, accel);
    SamplingMask::from_params(MaskParams {
        ny,
        accel,
        acs_fraction,
        offset,
        seed,
        min_acs,
    })
}

fn draw_offset(seed: u64, accel: usize) -> usize {
    let r = accel as u64;
    let limit = (u64::MAX / r) * r;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x = rng.next_u64();
        if x < limit {
            return (x % r) as usize;
        }
    }
}

impl SamplingMask {
    /// Rebuilds a mask from stored parameters, validating them.
    pub fn from_params(params: MaskParams) -> Result<Self> {
        let MaskParams {
            ny,
            accel,
            acs_fraction,
            offset,
            min_acs,
            ..
        } = params;
        if accel == 0 || accel > ny {
            return Err(Error::InvalidGeometry(format!(
                "accel {accel} must lie in [1, ny = {ny}]"
            )));
        }
        if !(acs_fraction > 0.0 && acs_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "acs_fraction {acs_fraction} must lie in (0, 1]"
            )));
        }
        if offset >= accel {
            return Err(Error::InvalidGeometry(format!(
                "offset {offset} must be below accel {accel}"
            )));
        }
        let acs_len = ((acs_fraction * ny as f64).round() as usize)
            .max(min_acs)
            .max(1);
        if acs_len > ny {
            return Err(Error::InvalidGeometry(format!(
                "ACS block of {acs_len} lines exceeds ny = {ny}"
            )));
        }
        let acs_start = ny / 2 - acs_len / 2;
        let acquired = (0..ny)
            .map(|i| i % accel == offset || (acs_start..acs_start + acs_len).contains(&i))
            .collect();
        Ok(Self {
            params,
            acs_start,
            acs_len,
            acquired,
        })
    }

    pub fn params(&self) -> MaskParams {
        self.params
    }

    pub fn ny(&self) -> usize {
        self.params.ny
    }

    pub fn accel(&self) -> usize {
        self.params.accel
    }

    pub fn offset(&self) -> usize {
        self.params.offset
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn acs_fraction(&self) -> f64 {
        self.params.acs_fraction
    }

    pub fn acquired(&self) -> &[bool] {
        &self.acquired
    }

    pub fn is_acquired(&self, line: usize) -> bool {
        self.acquired[line]
    }

    /// Lines on the equidistant grid (`line % R == offset`).
    pub fn is_equidistant(&self, line: usize) -> bool {
        line % self.params.accel == self.params.offset
    }

    pub fn acs_range(&self) -> RangeInclusive<usize> {
        self.acs_start..=self.acs_start + self.acs_len - 1
    }

    pub fn acs_len(&self) -> usize {
        self.acs_len
    }

    pub fn acquired_count(&self) -> usize {
        self.acquired.iter().filter(|&&a| a).count()
    }

    /// Effective acceleration `ny / acquired lines`.
    pub fn effective_accel(&self) -> f64 {
        self.params.ny as f64 / self.acquired_count() as f64
    }
}

/// Zeroes every phase-encode line the mask does not acquire.
pub fn apply_mask(vol: &KSpaceVolume, mask: &SamplingMask) -> Result<KSpaceVolume> {
    if vol.ny() != mask.ny() {
        return Err(Error::dims(
            format!("ny = {}", mask.ny()),
            format!("ny = {}", vol.ny()),
        ));
    }
    let mut data = vol.data().clone();
    for (line, mut row) in data.axis_iter_mut(Axis(1)).enumerate() {
        if !mask.is_acquired(line) {
            row.fill(Complex64::new(0.0, 0.0));
        }
    }
    KSpaceVolume::new(data)
}
