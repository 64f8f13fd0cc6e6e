//! The `GPKS` container format and its JSON sidecar.
//!
//! Binary layout, all little-endian:
//!
//! | bytes  | field                                          |
//! |--------|------------------------------------------------|
//! | 0..4   | magic `GPKS`                                   |
//! | 4..6   | version, `u16` = 1                             |
//! | 6..8   | kind, `u16` (0 k-space, 1 magnitude, 2 kernel) |
//! | 8..12  | number of dims in use, `u32` (1..=4)           |
//! | 12..28 | four `u32` dims, unused slots zero             |
//! | 28..   | row-major payload                              |
//!
//! K-space volumes (`ncoils, ny, nx`) and kernels (`offsets, sources,
//! ncoils`) store complex64 (an `f32` real part followed by an `f32`
//! imaginary part). Magnitude images (`ny, nx`) store `f32`. Values are
//! widened to `f64` on read, so round trips are exact for data that is
//! already representable in single precision.
//!
//! Provenance lives next to the payload in `<file>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grappa::{GrappaKernel, KernelGeometry};
use crate::phantom::PhantomParams;
use crate::sampling::{MaskParams, SamplingMask};
use crate::tensor::{KSpaceVolume, MagnitudeImage};

pub const MAGIC: [u8; 4] = *b"GPKS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;
/// Largest element count a container may declare.
pub const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum ContainerKind {
    KSpace = 0,
    Magnitude = 1,
    Kernel = 2,
}

impl ContainerKind {
    fn from_u16(v: u16) -> Result<Self> {
        match v {
            0 => Ok(Self::KSpace),
            1 => Ok(Self::Magnitude),
            2 => Ok(Self::Kernel),
            other => Err(Error::BadKind(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::KSpace => "kspace",
            Self::Magnitude => "magnitude",
            Self::Kernel => "kernel",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ContainerObject {
    KSpace(KSpaceVolume),
    Magnitude(MagnitudeImage),
    Kernel(GrappaKernel),
}

impl ContainerObject {
    pub fn kind(&self) -> ContainerKind {
        match self {
            Self::KSpace(_) => ContainerKind::KSpace,
            Self::Magnitude(_) => ContainerKind::Magnitude,
            Self::Kernel(_) => ContainerKind::Kernel,
        }
    }
}

/// Provenance stored beside a container.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default)]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<KernelGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ncoils: Option<usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn push_c64(out: &mut Vec<u8>, v: &Complex64) {
    out.extend_from_slice(&(v.re as f32).to_le_bytes());
    out.extend_from_slice(&(v.im as f32).to_le_bytes());
}

/// Serializes the binary part of a container.
pub fn encode(obj: &ContainerObject) -> Vec<u8> {
    let (dims, elem): (Vec<usize>, usize) = match obj {
        ContainerObject::KSpace(v) => {
            let (a, b, c) = v.dims();
            (vec![a, b, c], 8)
        }
        ContainerObject::Magnitude(m) => {
            let (a, b) = m.dims();
            (vec![a, b], 4)
        }
        ContainerObject::Kernel(k) => {
            let (a, b, c) = k.to_array().dim();
            (vec![a, b, c], 8)
        }
    };
    let count: usize = dims.iter().product();
    let mut out = Vec::with_capacity(HEADER_LEN + count * elem);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(obj.kind() as u16).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for i in 0..4 {
        let d = dims.get(i).copied().unwrap_or(0) as u32;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match obj {
        ContainerObject::KSpace(v) => v.data().iter().for_each(|x| push_c64(&mut out, x)),
        ContainerObject::Magnitude(m) => m
            .data()
            .iter()
            .for_each(|x| out.extend_from_slice(&(*x as f32).to_le_bytes())),
        ContainerObject::Kernel(k) => k.to_array().iter().for_each(|x| push_c64(&mut out, x)),
    }
    out
}

struct Header {
    kind: ContainerKind,
    dims: Vec<usize>,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn read_f32(b: &[u8], at: usize) -> f64 {
    f64::from(f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = read_u16(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            max: VERSION,
        });
    }
    let kind = ContainerKind::from_u16(read_u16(bytes, 6))?;
    let ndim = read_u32(bytes, 8) as usize;
    let expected_ndim = match kind {
        ContainerKind::Magnitude => 2,
        _ => 3,
    };
    if ndim != expected_ndim {
        return Err(Error::DimOverflow(format!(
            "{} containers have {expected_ndim} dims, header declares {ndim}",
            kind.name()
        )));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| read_u32(bytes, 12 + 4 * i) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .filter(|&c| c <= MAX_ELEMENTS)
        .ok_or_else(|| {
            Error::DimOverflow(format!("dims {dims:?} exceed {MAX_ELEMENTS} elements"))
        })?;
    let elem = if kind == ContainerKind::Magnitude {
        4
    } else {
        8
    };
    let expected = HEADER_LEN + count as usize * elem;
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    Ok(Header { kind, dims })
}

/// Parses the binary part. Magnitude images take their dynamic range and
/// kernels their geometry from `sidecar`.
pub fn decode(bytes: &[u8], sidecar: &Sidecar) -> Result<ContainerObject> {
    let Header { kind, dims } = parse_header(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let complex_at =
        |i: usize| Complex64::new(read_f32(payload, 8 * i), read_f32(payload, 8 * i + 4));
    match kind {
        ContainerKind::KSpace => {
            let shape = (dims[0], dims[1], dims[2]);
            let mut i = 0;
            let data = Array3::from_shape_simple_fn(shape, || {
                let v = complex_at(i);
                i += 1;
                v
            });
            Ok(ContainerObject::KSpace(KSpaceVolume::new(data)?))
        }
        ContainerKind::Magnitude => {
            let mut i = 0;
            let data = Array2::from_shape_simple_fn((dims[0], dims[1]), || {
                let v = read_f32(payload, 4 * i);
                i += 1;
                v
            });
            let image = match sidecar.dynamic_range {
                Some(range) => MagnitudeImage::new(data, range)?,
                None => MagnitudeImage::with_max_range(data)?,
            };
            Ok(ContainerObject::Magnitude(image))
        }
        ContainerKind::Kernel => {
            let geometry = sidecar
                .geometry
                .ok_or_else(|| Error::InvalidArgument("kernel sidecar lacks geometry".into()))?;
            let geometry = KernelGeometry::new(geometry.ky_taps, geometry.kx_taps, geometry.accel)?;
            let ncoils = dims[2];
            let mut i = 0;
            let stack = Array3::from_shape_simple_fn((dims[0], dims[1], dims[2]), || {
                let v = complex_at(i);
                i += 1;
                v
            });
            let weights = stack.axis_iter(Axis(0)).map(|w| w.to_owned()).collect();
            let kernel = GrappaKernel::from_parts(
                geometry,
                ncoils,
                sidecar.lambda_rel.unwrap_or(0.0),
                weights,
            )?;
            Ok(ContainerObject::Kernel(kernel))
        }
    }
}

/// Fills the object-derived sidecar fields.
pub fn complete_sidecar(obj: &ContainerObject, extra: &Sidecar) -> Sidecar {
    let mut side = extra.clone();
    side.kind = obj.kind().name().to_string();
    match obj {
        ContainerObject::KSpace(v) => side.ncoils = Some(v.ncoils()),
        ContainerObject::Magnitude(m) => side.dynamic_range = Some(m.dynamic_range()),
        ContainerObject::Kernel(k) => {
            side.ncoils = Some(k.ncoils());
            side.geometry = Some(k.geometry());
            side.lambda_rel = Some(k.lambda_rel());
        }
    }
    side
}

/// Writes `path` and its sidecar `<path>.json`.
pub fn write_container(path: &Path, obj: &ContainerObject, extra: &Sidecar) -> Result<()> {
    let side = complete_sidecar(obj, extra);
    fs::write(path, encode(obj))?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&side)? + "\n",
    )?;
    Ok(())
}

/// Reads a container; a missing sidecar is tolerated for k-space and
/// magnitude files.
pub fn read_container(path: &Path) -> Result<(ContainerObject, Sidecar)> {
    let bytes = fs::read(path)?;
    let side_path = sidecar_path(path);
    let side = if side_path.exists() {
        serde_json::from_str(&fs::read_to_string(side_path)?)?
    } else {
        Sidecar::default()
    };
    let obj = decode(&bytes, &side)?;
    Ok((obj, side))
}

pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&mask.params())? + "\n")?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    let params: MaskParams = serde_json::from_str(&fs::read_to_string(path)?)?;
    SamplingMask::from_params(params)
}
