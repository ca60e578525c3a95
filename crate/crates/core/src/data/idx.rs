//! Big-endian IDX files (the MNIST distribution format), optionally gzipped.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw unsigned-byte IDX tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset,
            message: "header truncated".into(),
        })
}

/// Parse an unsigned-byte IDX buffer. Only image (3-dim) and label (1-dim)
/// tensors are accepted.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC && magic != LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("unsupported magic number {magic:#010x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let d = read_u32(bytes, 4 + 4 * i)? as usize;
        if d == 0 {
            return Err(Error::Parse {
                offset: 4 + 4 * i,
                message: "zero-sized dimension".into(),
            });
        }
        dims.push(d);
    }
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let have = bytes.len() - start;
    if have < len {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("payload truncated: dims {dims:?} need {len} bytes, found {have}"),
        });
    }
    if have > len {
        return Err(Error::Parse {
            offset: start + len,
            message: format!("{} trailing bytes after payload of dims {dims:?}", have - len),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[start..].to_vec(),
    })
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Read an IDX file; gzip-compressed files are detected by their header.
pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    parse_idx(&read_maybe_gz(path)?)
}

pub fn encode_idx(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    let magic = match dims.len() {
        1 => LABELS_MAGIC,
        3 => IMAGES_MAGIC,
        n => return Err(Error::config(format!("IDX writer supports 1 or 3 dims, got {n}"))),
    };
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::config("IDX dims do not match payload length"));
    }
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    Ok(out)
}

/// Write an IDX file; gzip-compressed when the path ends in `.gz`.
pub fn write_idx_file(path: &Path, dims: &[usize], data: &[u8]) -> Result<()> {
    let bytes = encode_idx(dims, data)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(fs::File::create(path)?, Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}
