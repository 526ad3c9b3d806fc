//! IDX binary tensors (the MNIST file format).
//!
//! Layout: two zero bytes, a type code, the number of dimensions, then one
//! big-endian u32 per dimension, then the payload in row-major order with
//! big-endian elements.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxType {
    U8,
    I8,
    I16,
    I32,
    F32,
    F64,
}

impl IdxType {
    pub fn code(self) -> u8 {
        match self {
            IdxType::U8 => 0x08,
            IdxType::I8 => 0x09,
            IdxType::I16 => 0x0B,
            IdxType::I32 => 0x0C,
            IdxType::F32 => 0x0D,
            IdxType::F64 => 0x0E,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x08 => IdxType::U8,
            0x09 => IdxType::I8,
            0x0B => IdxType::I16,
            0x0C => IdxType::I32,
            0x0D => IdxType::F32,
            0x0E => IdxType::F64,
            _ => return None,
        })
    }

    pub fn width(self) -> usize {
        match self {
            IdxType::U8 | IdxType::I8 => 1,
            IdxType::I16 => 2,
            IdxType::I32 | IdxType::F32 => 4,
            IdxType::F64 => 8,
        }
    }
}

/// A decoded tensor. Values are widened to f64, which is exact for every IDX
/// element type.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    pub dtype: IdxType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl IdxTensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug)]
pub enum IdxError {
    /// The first two bytes must be zero.
    BadMagic { offset: usize, found: [u8; 2] },
    UnknownType { offset: usize, code: u8 },
    /// The file ends before byte `offset`, which is the first missing byte.
    Truncated { offset: usize, needed: usize },
    TrailingBytes { offset: usize },
    CountMismatch { images: usize, labels: usize },
    BadLabels(String),
    Io(io::Error),
}

impl fmt::Display for IdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdxError::BadMagic { offset, found } => {
                write!(f, "bad IDX magic at byte {offset}: expected 00 00, found {:02x} {:02x}", found[0], found[1])
            }
            IdxError::UnknownType { offset, code } => write!(f, "unknown IDX element type 0x{code:02x} at byte {offset}"),
            IdxError::Truncated { offset, needed } => {
                write!(f, "IDX data truncated: missing byte at offset {offset} ({needed} more bytes expected)")
            }
            IdxError::TrailingBytes { offset } => write!(f, "unexpected trailing data at byte {offset}"),
            IdxError::CountMismatch { images, labels } => {
                write!(f, "{images} images but {labels} labels")
            }
            IdxError::BadLabels(m) => write!(f, "invalid label file: {m}"),
            IdxError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for IdxError {}

impl From<io::Error> for IdxError {
    fn from(e: io::Error) -> Self {
        IdxError::Io(e)
    }
}

fn need(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], IdxError> {
    if bytes.len() < offset + len {
        return Err(IdxError::Truncated { offset: bytes.len(), needed: offset + len - bytes.len() });
    }
    Ok(&bytes[offset..offset + len])
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    let head = need(bytes, 0, 4)?;
    if head[0] != 0 || head[1] != 0 {
        return Err(IdxError::BadMagic { offset: 0, found: [head[0], head[1]] });
    }
    let dtype = IdxType::from_code(head[2]).ok_or(IdxError::UnknownType { offset: 2, code: head[2] })?;
    let ndims = head[3] as usize;
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let b = need(bytes, 4 + 4 * i, 4)?;
        dims.push(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize);
    }
    let start = 4 + 4 * ndims;
    let count: usize = dims.iter().product();
    let w = dtype.width();
    let payload = need(bytes, start, count * w)?;
    if bytes.len() > start + count * w {
        return Err(IdxError::TrailingBytes { offset: start + count * w });
    }
    let data = payload
        .chunks_exact(w)
        .map(|c| match dtype {
            IdxType::U8 => c[0] as f64,
            IdxType::I8 => c[0] as i8 as f64,
            IdxType::I16 => i16::from_be_bytes([c[0], c[1]]) as f64,
            IdxType::I32 => i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
            IdxType::F32 => f32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
            IdxType::F64 => f64::from_be_bytes(c.try_into().expect("8-byte chunk")),
        })
        .collect();
    Ok(IdxTensor { dtype, dims, data })
}

/// Encodes a tensor. Values are narrowed to the element type with `as`
/// casts, so callers must supply representable values for an exact round
/// trip.
pub fn encode_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = vec![0, 0, t.dtype.code(), t.dims.len() as u8];
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &x in &t.data {
        match t.dtype {
            IdxType::U8 => out.push(x as u8),
            IdxType::I8 => out.push(x as i8 as u8),
            IdxType::I16 => out.extend_from_slice(&(x as i16).to_be_bytes()),
            IdxType::I32 => out.extend_from_slice(&(x as i32).to_be_bytes()),
            IdxType::F32 => out.extend_from_slice(&(x as f32).to_be_bytes()),
            IdxType::F64 => out.extend_from_slice(&x.to_be_bytes()),
        }
    }
    out
}

pub fn read_idx(path: &Path) -> Result<IdxTensor, IdxError> {
    parse_idx(&fs::read(path)?)
}

pub fn write_idx(path: &Path, t: &IdxTensor) -> Result<(), IdxError> {
    fs::write(path, encode_idx(t))?;
    Ok(())
}

/// Images flattened to rows and scaled to [0, 1] (u8 data is divided by
/// 255), with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxDataset {
    pub rows: usize,
    pub features: usize,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxDataset, IdxError> {
    let images = read_idx(images_path)?;
    let labels = read_idx(labels_path)?;
    idx_dataset(images, labels)
}

pub fn idx_dataset(images: IdxTensor, labels: IdxTensor) -> Result<IdxDataset, IdxError> {
    let rows = images.dims.first().copied().unwrap_or(0);
    let nlabels = labels.dims.first().copied().unwrap_or(0);
    if rows != nlabels {
        return Err(IdxError::CountMismatch { images: rows, labels: nlabels });
    }
    if labels.dims.len() != 1 {
        return Err(IdxError::BadLabels(format!("expected 1 dimension, found {}", labels.dims.len())));
    }
    let features = images.dims.iter().skip(1).product();
    let scale = if images.dtype == IdxType::U8 { 1.0 / 255.0 } else { 1.0 };
    let labels = labels
        .data
        .iter()
        .map(|&l| {
            if l >= 0.0 && l.fract() == 0.0 {
                Ok(l as usize)
            } else {
                Err(IdxError::BadLabels(format!("label {l} is not a class index")))
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(IdxDataset { rows, features, images: images.data.iter().map(|x| x * scale).collect(), labels })
}
