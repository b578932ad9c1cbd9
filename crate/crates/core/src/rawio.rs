//! Raw voxel files with a JSON sidecar describing geometry and dtype.
//!
//! The sidecar carries `{"dims":[w,h,d], "spacing":[sx,sy,sz],
//! "dtype":"u8"|"f32", "kind":"volume"|"mask", "order":"xyz"}`; the data file
//! is the bare sample array, x-fastest, little-endian for f32.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::volume::{BinaryMask, Volume, VolumeError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub dtype: String,
    pub kind: String,
    pub order: String,
}

#[derive(Debug, Error)]
pub enum RawIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("sidecar parse error in {path}: {source}")]
    Sidecar {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported dtype {0:?}; expected \"u8\" or \"f32\"")]
    BadDtype(String),
    #[error("unsupported kind {0:?}; expected \"volume\" or \"mask\"")]
    BadKind(String),
    #[error("unsupported order {0:?}; expected \"xyz\"")]
    BadOrder(String),
    #[error("masks must be stored as u8, got dtype {0:?}")]
    MaskDtype(String),
    #[error("declared dims {dims:?} need {expected} bytes but the data file has {got}")]
    SizeMismatch {
        dims: [usize; 3],
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RawIoError + '_ {
    move |source| RawIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Either payload a sidecar pair can hold.
#[derive(Debug, Clone)]
pub enum RawPayload<T> {
    Volume(Volume<T>),
    Mask(BinaryMask),
}

impl<T: Real> RawPayload<T> {
    /// Coerce to a scalar volume; masks become 0.0/1.0 samples.
    pub fn into_volume(self) -> Volume<T> {
        match self {
            RawPayload::Volume(v) => v,
            RawPayload::Mask(m) => m.to_volume(),
        }
    }
}

/// Read a raw data file described by its JSON sidecar.
pub fn read_raw_with_sidecar<T: Real>(
    data_path: &Path,
    sidecar_path: &Path,
) -> Result<RawPayload<T>, RawIoError> {
    let text = fs::read_to_string(sidecar_path).map_err(io_err(sidecar_path))?;
    let sc: Sidecar = serde_json::from_str(&text).map_err(|source| RawIoError::Sidecar {
        path: sidecar_path.to_path_buf(),
        source,
    })?;
    if sc.order != "xyz" {
        return Err(RawIoError::BadOrder(sc.order));
    }
    let bytes_per = match sc.dtype.as_str() {
        "u8" => 1,
        "f32" => 4,
        _ => return Err(RawIoError::BadDtype(sc.dtype)),
    };
    if sc.kind != "volume" && sc.kind != "mask" {
        return Err(RawIoError::BadKind(sc.kind));
    }
    if sc.kind == "mask" && sc.dtype != "u8" {
        return Err(RawIoError::MaskDtype(sc.dtype));
    }

    let bytes = fs::read(data_path).map_err(io_err(data_path))?;
    let nvox = sc.dims[0] * sc.dims[1] * sc.dims[2];
    if bytes.len() != nvox * bytes_per {
        return Err(RawIoError::SizeMismatch {
            dims: sc.dims,
            expected: nvox * bytes_per,
            got: bytes.len(),
        });
    }

    if sc.kind == "mask" {
        return Ok(RawPayload::Mask(BinaryMask::new(
            sc.dims, sc.spacing, bytes,
        )?));
    }
    let data: Vec<T> = match sc.dtype.as_str() {
        "u8" => bytes.iter().map(|&b| T::from_f64_lossy(b as f64)).collect(),
        _ => bytes
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
    };
    Ok(RawPayload::Volume(Volume::new(sc.dims, sc.spacing, data)?))
}

/// Write a scalar volume as f32 raw data plus sidecar.
pub fn write_raw_volume<T: Real>(
    volume: &Volume<T>,
    data_path: &Path,
    sidecar_path: &Path,
) -> Result<(), RawIoError> {
    let sc = Sidecar {
        dims: volume.dims(),
        spacing: volume.spacing(),
        dtype: "f32".into(),
        kind: "volume".into(),
        order: "xyz".into(),
    };
    let mut bytes = Vec::with_capacity(volume.len() * 4);
    for &v in volume.data() {
        bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    write_pair(&sc, &bytes, data_path, sidecar_path)
}

/// Write a binary mask as u8 raw data plus sidecar.
pub fn write_raw_mask(
    mask: &BinaryMask,
    data_path: &Path,
    sidecar_path: &Path,
) -> Result<(), RawIoError> {
    let sc = Sidecar {
        dims: mask.dims(),
        spacing: mask.spacing(),
        dtype: "u8".into(),
        kind: "mask".into(),
        order: "xyz".into(),
    };
    write_pair(&sc, mask.data(), data_path, sidecar_path)
}

fn write_pair(
    sc: &Sidecar,
    bytes: &[u8],
    data_path: &Path,
    sidecar_path: &Path,
) -> Result<(), RawIoError> {
    let text = serde_json::to_string_pretty(sc).expect("sidecar serializes");
    fs::write(sidecar_path, text).map_err(io_err(sidecar_path))?;
    fs::write(data_path, bytes).map_err(io_err(data_path))?;
    Ok(())
}
