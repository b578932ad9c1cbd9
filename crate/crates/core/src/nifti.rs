//! Minimal NIfTI-1 I/O: single-file `.nii`, uncompressed, 3D only.
//!
//! Supported on read: unsigned 8-bit, signed 16-bit, and 32-bit float data,
//! with `scl_slope`/`scl_inter` scaling applied when the slope is nonzero and
//! byte order auto-detected from the `sizeof_hdr` field. Writing always emits
//! little-endian float32 with identity scaling, so write-then-read is
//! bit-exact on values and spacing.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use thiserror::Error;

use crate::scalar::Real;
use crate::volume::{Volume, VolumeError};

const HEADER_LEN: usize = 348;
/// Header plus the 4-byte extender stub; also the write-side `vox_offset`.
const DATA_OFFSET: u64 = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("sizeof_hdr is {0} in both byte orders; expected 348")]
    BadSizeofHdr(i32),
    #[error("bad magic {0:?}; expected \"n+1\\0\" or \"ni1\\0\"")]
    BadMagic([u8; 4]),
    #[error("unsupported datatype code {0}; supported: 2 (u8), 4 (i16), 16 (f32)")]
    UnsupportedDatatype(i16),
    #[error("dim[0] is {0}; only 3-dimensional volumes are supported")]
    NotThreeDimensional(i16),
    #[error("data section truncated: expected {expected} bytes, found {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("header geometry invalid: {0}")]
    Geometry(#[from] VolumeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NiftiError + '_ {
    move |source| NiftiError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct ParsedHeader {
    dims: [usize; 3],
    spacing: [f32; 3],
    datatype: i16,
    vox_offset: u64,
    scl_slope: f32,
    scl_inter: f32,
    /// "ni1\0": data lives in a paired .img file at offset 0.
    detached: bool,
    big_endian: bool,
}

fn parse_header(buf: &[u8; HEADER_LEN]) -> Result<ParsedHeader, NiftiError> {
    let sizeof_le = LittleEndian::read_i32(&buf[0..4]);
    let big_endian = match sizeof_le {
        348 => false,
        _ if BigEndian::read_i32(&buf[0..4]) == 348 => true,
        other => return Err(NiftiError::BadSizeofHdr(other)),
    };
    if big_endian {
        parse_header_ordered::<BigEndian>(buf, true)
    } else {
        parse_header_ordered::<LittleEndian>(buf, false)
    }
}

fn parse_header_ordered<B: ByteOrder>(
    buf: &[u8; HEADER_LEN],
    big_endian: bool,
) -> Result<ParsedHeader, NiftiError> {
    let magic: [u8; 4] = buf[344..348].try_into().unwrap();
    let detached = match &magic {
        b"n+1\0" => false,
        b"ni1\0" => true,
        _ => return Err(NiftiError::BadMagic(magic)),
    };
    let dim0 = B::read_i16(&buf[40..42]);
    if dim0 != 3 {
        return Err(NiftiError::NotThreeDimensional(dim0));
    }
    let datatype = B::read_i16(&buf[70..72]);
    if ![DT_UINT8, DT_INT16, DT_FLOAT32].contains(&datatype) {
        return Err(NiftiError::UnsupportedDatatype(datatype));
    }
    let dims = [
        B::read_i16(&buf[42..44]).max(0) as usize,
        B::read_i16(&buf[44..46]).max(0) as usize,
        B::read_i16(&buf[46..48]).max(0) as usize,
    ];
    let spacing = [
        B::read_f32(&buf[80..84]),
        B::read_f32(&buf[84..88]),
        B::read_f32(&buf[88..92]),
    ];
    let vox_offset = if detached {
        0
    } else {
        B::read_f32(&buf[108..112]).max(0.0) as u64
    };
    Ok(ParsedHeader {
        dims,
        spacing,
        datatype,
        vox_offset,
        scl_slope: B::read_f32(&buf[112..116]),
        scl_inter: B::read_f32(&buf[116..120]),
        detached,
        big_endian,
    })
}

/// Read an uncompressed NIfTI-1 volume.
pub fn read_nifti<T: Real>(path: &Path) -> Result<Volume<T>, NiftiError> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut header_buf = [0u8; HEADER_LEN];
    file.read_exact(&mut header_buf).map_err(io_err(path))?;
    let header = parse_header(&header_buf)?;

    let data_path;
    let mut bytes = Vec::new();
    if header.detached {
        data_path = path.with_extension("img");
        let mut img = File::open(&data_path).map_err(io_err(&data_path))?;
        img.read_to_end(&mut bytes).map_err(io_err(&data_path))?;
    } else {
        data_path = path.to_path_buf();
        file.read_to_end(&mut bytes).map_err(io_err(path))?;
    };
    // `bytes` starts right after the header for attached files.
    let skip = if header.detached {
        header.vox_offset as usize
    } else {
        (header.vox_offset as usize).saturating_sub(HEADER_LEN)
    };

    let nvox = header.dims[0] * header.dims[1] * header.dims[2];
    let bytes_per = match header.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        _ => 4,
    };
    let expected = nvox * bytes_per;
    if bytes.len() < skip + expected {
        return Err(NiftiError::TruncatedData {
            expected,
            got: bytes.len().saturating_sub(skip),
        });
    }
    let raw = &bytes[skip..skip + expected];
    let _ = data_path;

    let scale = |v: T| -> T {
        if header.scl_slope != 0.0 {
            T::from_f64_lossy(header.scl_slope as f64) * v
                + T::from_f64_lossy(header.scl_inter as f64)
        } else {
            v
        }
    };
    let mut data = Vec::with_capacity(nvox);
    match header.datatype {
        DT_UINT8 => {
            for &b in raw {
                data.push(scale(T::from_f64_lossy(b as f64)));
            }
        }
        DT_INT16 => {
            for chunk in raw.chunks_exact(2) {
                let v = if header.big_endian {
                    BigEndian::read_i16(chunk)
                } else {
                    LittleEndian::read_i16(chunk)
                };
                data.push(scale(T::from_f64_lossy(v as f64)));
            }
        }
        _ => {
            for chunk in raw.chunks_exact(4) {
                let v = if header.big_endian {
                    BigEndian::read_f32(chunk)
                } else {
                    LittleEndian::read_f32(chunk)
                };
                data.push(scale(T::from_f64_lossy(v as f64)));
            }
        }
    }

    Ok(Volume::new(header.dims, header.spacing, data)?)
}

/// Write a volume as little-endian float32 NIfTI-1 (`magic "n+1\0"`,
/// `vox_offset` 352, identity scaling).
pub fn write_nifti<T: Real>(volume: &Volume<T>, path: &Path) -> Result<(), NiftiError> {
    let mut header = vec![0u8; HEADER_LEN];
    LittleEndian::write_i32(&mut header[0..4], 348);
    header[38] = b'r'; // regular, analyze compatibility
    let dims = volume.dims();
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for a in 0..3 {
        dim[a + 1] = dims[a] as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut header[40 + 2 * i..42 + 2 * i], *d);
    }
    LittleEndian::write_i16(&mut header[70..72], DT_FLOAT32);
    LittleEndian::write_i16(&mut header[72..74], 32); // bitpix
    let spacing = volume.spacing();
    let mut pixdim = [0f32; 8];
    pixdim[0] = 1.0;
    pixdim[1..4].copy_from_slice(&spacing);
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut header[76 + 4 * i..80 + 4 * i], *p);
    }
    LittleEndian::write_f32(&mut header[108..112], DATA_OFFSET as f32);
    // scl_slope 0 means values are stored as-is.
    LittleEndian::write_f32(&mut header[112..116], 0.0);
    LittleEndian::write_f32(&mut header[116..120], 0.0);
    header[123] = 2; // xyzt_units: millimetres
    header[344..348].copy_from_slice(b"n+1\0");

    let mut file = File::create(path).map_err(io_err(path))?;
    file.write_all(&header).map_err(io_err(path))?;
    file.write_all(&[0u8; 4]).map_err(io_err(path))?; // extender stub
    for &v in volume.data() {
        file.write_f32::<LittleEndian>(v.to_f64_lossy() as f32)
            .map_err(io_err(path))?;
    }
    Ok(())
}
